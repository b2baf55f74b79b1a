# Copyright 2022-2023 pyke.io
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# 	http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from dataclasses import dataclass
import ipaddress
import logging
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DatasetError, UnknownContainerError
from .floorplan import Floorplan
from .propagation import READS_CSV_HEADER
from .rng import DOMAIN_SPLIT, DOMAIN_SUBSAMPLE, check_seed, stream

logger = logging.getLogger(__name__)

FEATURE_NAMES = ('ReaderIP', 'Antenna', 'RSSI')
LABEL_COLUMN = 'Zone'
# a read is unusable without these
READ_KEY_COLUMNS = ['ReaderIP', 'Antenna', 'RSSI', 'ContainerId']
_INTEGER_COLUMNS = ('Antenna', 'SessionId', 'Timestamp')

class RawRead(NamedTuple):
	"""One CSV row; any field may be missing (None)."""

	reader_ip: Optional[str]
	antenna: Optional[int]
	rssi: Optional[float]
	tag_id: Optional[str]
	container_id: Optional[str]
	session_id: Optional[int]
	timestamp: Optional[int]
	zone: Optional[str] = None

def encode_reader_ip(ip: str) -> int:
	"""Big-endian 32-bit encoding of a dotted quad: o1 * 2^24 + o2 * 2^16 + o3 * 2^8 + o4."""
	if not isinstance(ip, str):
		raise DatasetError(f'reader ip must be a string, got {ip!r}')
	try:
		return int(ipaddress.IPv4Address(ip))
	except ipaddress.AddressValueError as e:
		raise DatasetError(f'malformed reader ip {ip!r}: {e}') from None

def decode_reader_ip(code: Union[int, float]) -> str:
	return str(ipaddress.IPv4Address(int(code)))

def _optional(value: Any, kind: type) -> Any:
	return None if pd.isna(value) else kind(value)

def _numeric_column(text: pd.Series, path: Union[str, Path], integer: bool) -> pd.Series:
	# `text` keeps the raw fields so errors can quote them; frame row i is line i + 2 of the file
	values = pd.to_numeric(text, errors='coerce')
	if integer:
		invalid = text.notna() & (values.isna() | (values % 1 != 0))
		kind = 'a valid int'
	else:
		invalid = text.notna() & ~np.isfinite(values.astype(np.float64))
		kind = 'a finite number'
	if invalid.any():
		row = invalid.idxmax()
		raise DatasetError(f'{path}: line {row + 2}: {text.name} {text[row]!r} is not {kind}')
	return values.astype('Int64') if integer else values.astype(np.float64)

def read_reads_frame(path: Union[str, Path]) -> pd.DataFrame:
	"""
	Reads the generator's CSV schema, optionally with a trailing `Zone` column for pre-labeled data, into a frame with
	nullable integer columns for Antenna, SessionId and Timestamp. Empty fields are NA.
	"""
	try:
		frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[''], index_col=False, encoding='utf-8')
	except pd.errors.EmptyDataError:
		raise DatasetError(f'{path}: empty file') from None
	except pd.errors.ParserError as e:
		raise DatasetError(f'{path}: {e}') from None

	header = [str(c) for c in frame.columns]
	if header != READS_CSV_HEADER and header != READS_CSV_HEADER + [LABEL_COLUMN]:
		raise DatasetError(f'{path}: unexpected header {",".join(header)}; expected {",".join(READS_CSV_HEADER)}[,{LABEL_COLUMN}]')
	for column in _INTEGER_COLUMNS:
		frame[column] = _numeric_column(frame[column], path, integer=True)
	frame['RSSI'] = _numeric_column(frame['RSSI'], path, integer=False)
	if LABEL_COLUMN not in frame.columns:
		frame[LABEL_COLUMN] = pd.Series(np.nan, index=frame.index, dtype=object)
	logger.debug(f'loaded {len(frame)} reads from {path}')
	return frame

def frame_to_reads(frame: pd.DataFrame) -> List[RawRead]:
	columns = READS_CSV_HEADER + [LABEL_COLUMN]
	return [
		RawRead(
			reader_ip=_optional(ip, str),
			antenna=_optional(antenna, int),
			rssi=_optional(rssi, float),
			tag_id=_optional(tag_id, str),
			container_id=_optional(container_id, str),
			session_id=_optional(session_id, int),
			timestamp=_optional(timestamp, int),
			zone=_optional(zone, str)
		)
		for ip, antenna, rssi, tag_id, container_id, session_id, timestamp, zone in frame[columns].itertuples(index=False, name=None)
	]

def load_reads_csv(path: Union[str, Path]) -> List[RawRead]:
	return frame_to_reads(read_reads_frame(path))

def drop_nulls(frame: pd.DataFrame) -> pd.DataFrame:
	"""Keeps, in order, the rows whose reader ip, antenna, RSSI and container id are all present."""
	return frame.dropna(subset=READ_KEY_COLUMNS)

class LabeledDataset:
	"""
	Feature rows `[ip_code, antenna, rssi]` with zone labels, plus the tag and session of every row. `zones` is the full
	canonical class list, which may include zones without rows.
	"""

	def __init__(
		self,
		rows: Any,
		labels: Sequence[str],
		tags: Sequence[str],
		sessions: Sequence[int],
		zones: Optional[Sequence[str]] = None
	):
		rows = np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
		labels = np.array(labels, dtype=str)
		tags = np.array(tags, dtype=str)
		sessions = np.array(sessions, dtype=np.int64)
		if not (len(rows) == len(labels) == len(tags) == len(sessions)):
			raise DatasetError(
				f'parallel arrays differ in length: {len(rows)} rows, {len(labels)} labels, {len(tags)} tags, {len(sessions)} sessions'
			)
		if not np.all(np.isfinite(rows)):
			raise DatasetError('feature rows must be finite')

		self.zones: Tuple[str, ...] = tuple(sorted(set(zones))) if zones is not None else tuple(sorted(set(labels.tolist())))
		unknown = sorted(set(labels.tolist()) - set(self.zones))
		if unknown:
			raise DatasetError(f'labels outside the zone set: {", ".join(unknown)}')

		for array in (rows, labels, tags, sessions):
			array.setflags(write=False)
		self.rows = rows
		self.labels = labels
		self.tags = tags
		self.sessions = sessions

	def __len__(self) -> int:
		return len(self.labels)

	def subset(self, indices: Any) -> 'LabeledDataset':
		indices = np.asarray(indices, dtype=np.int64)
		return LabeledDataset(self.rows[indices], self.labels[indices], self.tags[indices], self.sessions[indices], self.zones)

	def class_counts(self) -> Dict[str, int]:
		"""Row count per present class, canonical order."""
		classes, counts = np.unique(self.labels, return_counts=True)
		return {str(label): int(count) for label, count in zip(classes, counts)}

	def session_ids(self) -> List[int]:
		return [int(s) for s in np.unique(self.sessions)]

def label_reads(reads: Sequence[Any], fp: Floorplan) -> LabeledDataset:
	"""
	Labels each read with the zone of its container. Reads that already carry a zone (pre-labeled CSV rows) keep it.
	"""
	zone_set = set(fp.zone_labels)
	rows = np.empty((len(reads), len(FEATURE_NAMES)), dtype=np.float64)
	labels, tags, sessions = [], [], []
	ip_codes: Dict[str, int] = {}
	for i, read in enumerate(reads):
		zone = getattr(read, 'zone', None)
		if zone is not None:
			if zone not in zone_set:
				raise DatasetError(f'read {i}: zone {zone!r} is not in the floorplan')
		elif fp.has_container(read.container_id):
			zone = fp.zone_of_container(read.container_id)
		else:
			raise UnknownContainerError(read.container_id)
		if read.tag_id is None or read.session_id is None:
			raise DatasetError(f'read {i}: TagId and SessionId are required to label a read')

		if read.reader_ip not in ip_codes:
			ip_codes[read.reader_ip] = encode_reader_ip(read.reader_ip)
		rows[i] = (ip_codes[read.reader_ip], float(read.antenna), float(read.rssi))
		labels.append(zone)
		tags.append(read.tag_id)
		sessions.append(read.session_id)
	return LabeledDataset(rows, labels, tags, sessions, zones=fp.zone_labels)

def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
	# integer apportionment; equal remainders go to the earlier class
	scaled = shares * total
	denominator = int(shares.sum())
	base = scaled // denominator
	remainder = scaled % denominator
	left = total - int(base.sum())
	order = np.lexsort((np.arange(len(shares)), -remainder))
	base[order[:left]] += 1
	return base

def allocate_quotas(counts: Sequence[int], target_n: int, balanced: bool = False) -> np.ndarray:
	"""
	Per-class quotas summing to `target_n`: proportional to `counts` (or equal when `balanced`), rounded by largest
	remainder. Classes that cannot fill their quota give every row, and the shortfall is reapportioned among classes
	with rows to spare.
	"""
	counts = np.asarray(counts, dtype=np.int64)
	if target_n > int(counts.sum()):
		raise DatasetError(f'cannot allocate {target_n} rows from {int(counts.sum())}')
	shares = np.ones_like(counts) if balanced else counts.copy()
	quotas = np.zeros_like(counts)
	remaining = target_n
	open_classes = counts > 0
	while remaining > 0:
		quotas += _largest_remainder(np.where(open_classes, shares, 0), remaining)
		overflow = np.maximum(quotas - counts, 0)
		quotas -= overflow
		remaining = int(overflow.sum())
		open_classes = quotas < counts
	return quotas

def stratified_subsample(ds: LabeledDataset, target_n: int, seed: int, balanced: bool = False) -> LabeledDataset:
	n = len(ds)
	if n == 0:
		raise DatasetError('cannot subsample an empty dataset')
	if target_n < 0:
		raise DatasetError(f'subsample target must be non-negative, got {target_n}')
	if target_n > n:
		raise DatasetError(f'subsample target {target_n} exceeds dataset size {n}')

	counts = ds.class_counts()
	quotas = allocate_quotas(list(counts.values()), target_n, balanced=balanced)
	picked = []
	for (label, count), quota in zip(counts.items(), quotas):
		members = np.flatnonzero(ds.labels == label)
		if quota < count:
			rng = stream(seed, DOMAIN_SUBSAMPLE, ds.zones.index(label))
			members = rng.choice(members, size=int(quota), replace=False)
		picked.append(members)
		logger.debug(f'{label}: {int(quota)} of {count} rows')
	return ds.subset(np.sort(np.concatenate(picked)))

@dataclass(frozen=True)
class SplitPair:
	train: LabeledDataset
	test: LabeledDataset
	train_sessions: Tuple[int, ...]
	test_sessions: Tuple[int, ...]

def _tag_linked_sessions(ds: LabeledDataset) -> Dict[int, int]:
	# union-find over sessions that share at least one tag; maps each session to its group root
	parent = {s: s for s in ds.session_ids()}

	def find(s: int) -> int:
		while parent[s] != s:
			parent[s] = parent[parent[s]]
			s = parent[s]
		return s

	first_session: Dict[str, int] = {}
	for tag, session in zip(ds.tags.tolist(), ds.sessions.tolist()):
		if tag not in first_session:
			first_session[tag] = session
			continue
		a, b = find(first_session[tag]), find(session)
		if a != b:
			parent[max(a, b)] = min(a, b)
	return {s: find(s) for s in parent}

def session_split(ds: LabeledDataset, test_fraction: float, seed: int) -> SplitPair:
	"""
	Assigns whole sessions to the test fold, in seeded random order, until it holds at least `test_fraction` of the rows.
	Sessions linked by a shared tag are kept on one side; split groups move to train.
	"""
	if not 0 < test_fraction < 1:
		raise DatasetError(f'test fraction must be in (0, 1), got {test_fraction}')
	check_seed(seed)
	sessions = ds.session_ids()
	if len(sessions) < 2:
		raise DatasetError(f'session split needs at least 2 sessions, got {len(sessions)}')

	ids, rows_per_session = np.unique(ds.sessions, return_counts=True)
	session_rows = dict(zip(ids.tolist(), rows_per_session.tolist()))
	threshold = test_fraction * len(ds) * (1 - 1e-12)
	test: Set[int] = set()
	test_rows = 0
	for session in stream(seed, DOMAIN_SPLIT).permutation(sessions).tolist():
		if test_rows >= threshold:
			break
		test.add(session)
		test_rows += session_rows[session]

	groups = _tag_linked_sessions(ds)
	straddling = {groups[s] for s in test} & {groups[s] for s in sessions if s not in test}
	if straddling:
		moved = sorted(s for s in test if groups[s] in straddling)
		logger.warning(f'sessions {moved} share tags with training sessions; moving them to the training fold')
		test -= set(moved)
	if not test:
		raise DatasetError('tag-overlap repair emptied the test fold')
	if len(test) == len(sessions):
		raise DatasetError('session split left no training sessions')

	mask = np.isin(ds.sessions, sorted(test))
	split = SplitPair(
		train=ds.subset(np.flatnonzero(~mask)),
		test=ds.subset(np.flatnonzero(mask)),
		train_sessions=tuple(s for s in sessions if s not in test),
		test_sessions=tuple(sorted(test))
	)
	logger.info(f'split: {len(split.train)} train rows / {len(split.test)} test rows; test sessions {list(split.test_sessions)}')
	return split
