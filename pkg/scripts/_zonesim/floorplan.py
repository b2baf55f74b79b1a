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

"""
Zoned facility model: rectangular zones, readers and their antennas, and the containers that anchor tags to zones.

A floorplan is loaded from a TOML document with three arrays of tables:

	[[zones]]       label, x_min, y_min, x_max, y_max
	[[readers]]     ip, antennas = [{ index, x, y, detection_floor_dbm? }]
	[[containers]]  container_id, x, y, tag_ids

Coordinates are meters. Unknown fields are rejected.
"""

import ipaddress
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from string import ascii_uppercase
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import tomli

from .errors import FloorplanParseError, FloorplanValidationError

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

DEFAULT_DETECTION_FLOOR_DBM = -80.0
DEFAULT_FLOORPLAN_PATH = Path(__file__).parent.parent / 'configs' / 'default-floorplan.toml'

# coordinates closer than this are treated as the same wall
EDGE_TOLERANCE = 1e-9

@dataclass(frozen=True)
class Zone:
	label: str
	x_min: float
	y_min: float
	x_max: float
	y_max: float

	def contains(self, p: Point, strict: bool = False) -> bool:
		x, y = p
		if strict:
			return self.x_min < x < self.x_max and self.y_min < y < self.y_max
		return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

	@property
	def center(self) -> Point:
		return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

@dataclass(frozen=True)
class Antenna:
	index: int
	x: float
	y: float
	detection_floor_dbm: float = DEFAULT_DETECTION_FLOOR_DBM

	@property
	def position(self) -> Point:
		return (self.x, self.y)

@dataclass(frozen=True)
class Reader:
	ip: str
	antennas: Tuple[Antenna, ...]

@dataclass(frozen=True)
class Container:
	container_id: str
	x: float
	y: float
	tag_ids: Tuple[str, ...]

	@property
	def position(self) -> Point:
		return (self.x, self.y)

class AdjacencyGraph:
	"""Symmetric, reflexive zone adjacency. Row/column order is the canonical (lexicographic) zone order."""

	def __init__(self, zones: Sequence[str], matrix: np.ndarray):
		matrix = np.array(matrix, dtype=bool)
		if matrix.shape != (len(zones), len(zones)):
			raise ValueError(f'adjacency matrix must be {len(zones)}x{len(zones)}, got {matrix.shape}')
		if not np.array_equal(matrix, matrix.T):
			raise ValueError('adjacency matrix must be symmetric')
		np.fill_diagonal(matrix, True)
		matrix.setflags(write=False)

		self.zones: Tuple[str, ...] = tuple(zones)
		self.matrix = matrix
		self._index = {label: i for i, label in enumerate(self.zones)}
		if len(self._index) != len(self.zones):
			raise ValueError('adjacency zone labels must be unique')

	@classmethod
	def self_only(cls, zones: Sequence[str]) -> 'AdjacencyGraph':
		return cls(zones, np.eye(len(zones), dtype=bool))

	def index(self, label: str) -> int:
		try:
			return self._index[label]
		except KeyError:
			raise ValueError(f'unknown zone {label!r}') from None

	def adjacent(self, a: str, b: str) -> bool:
		return bool(self.matrix[self.index(a), self.index(b)])

	def neighbors(self, label: str) -> List[str]:
		i = self.index(label)
		return [self.zones[j] for j in np.flatnonzero(self.matrix[i]) if j != i]

	def degree(self, label: str) -> int:
		return len(self.neighbors(label))

	def edges(self) -> List[Tuple[str, str]]:
		return [(self.zones[i], self.zones[j]) for i, j in zip(*np.nonzero(np.triu(self.matrix, k=1)))]

class Floorplan:
	"""
	Validated, immutable floorplan. Zones are stored in canonical (label) order; readers and containers keep document
	order, which is also the order reads are generated in. Container-to-zone resolution happens at construction.
	"""

	def __init__(self, zones: Sequence[Zone], readers: Sequence[Reader], containers: Sequence[Container]):
		self._zones: Tuple[Zone, ...] = tuple(sorted(zones, key=lambda z: z.label))
		self._readers: Tuple[Reader, ...] = tuple(readers)
		self._containers: Tuple[Container, ...] = tuple(containers)
		self._validate_zones()
		self._validate_readers()
		self._container_zone = self._resolve_containers()
		self._zones_by_label = {zone.label: zone for zone in self._zones}
		self._containers_by_id = {container.container_id: container for container in self._containers}
		logger.debug(
			f'floorplan: {len(self._zones)} zones, {len(self._readers)} readers, {self.antenna_count} antennas, '
			f'{len(self._containers)} containers, {self.tag_count} tags'
		)

	@property
	def zones(self) -> Tuple[Zone, ...]:
		return self._zones

	@property
	def zone_labels(self) -> Tuple[str, ...]:
		return tuple(zone.label for zone in self._zones)

	@property
	def readers(self) -> Tuple[Reader, ...]:
		return self._readers

	@property
	def containers(self) -> Tuple[Container, ...]:
		return self._containers

	@property
	def antenna_count(self) -> int:
		return sum(len(reader.antennas) for reader in self._readers)

	@property
	def tag_count(self) -> int:
		return sum(len(container.tag_ids) for container in self._containers)

	@property
	def bounds(self) -> Tuple[float, float, float, float]:
		return (
			min(z.x_min for z in self._zones),
			min(z.y_min for z in self._zones),
			max(z.x_max for z in self._zones),
			max(z.y_max for z in self._zones)
		)

	def zone(self, label: str) -> Zone:
		return self._zones_by_label[label]

	def has_container(self, container_id: str) -> bool:
		return container_id in self._container_zone

	def container(self, container_id: str) -> Container:
		return self._containers_by_id[container_id]

	def zone_of_container(self, container_id: str) -> str:
		return self._container_zone[container_id]

	def antennas(self) -> Iterator[Tuple[Reader, Antenna]]:
		for reader in self._readers:
			for antenna in reader.antennas:
				yield reader, antenna

	def containers_per_zone(self) -> Dict[str, int]:
		counts = {label: 0 for label in self.zone_labels}
		for label in self._container_zone.values():
			counts[label] += 1
		return counts

	def _validate_zones(self):
		if not self._zones:
			raise FloorplanValidationError('floorplan must contain at least one zone')
		seen = set()
		for zone in self._zones:
			if zone.label in seen:
				raise FloorplanValidationError(f'duplicate zone label {zone.label!r}')
			seen.add(zone.label)
			if not (zone.x_min < zone.x_max and zone.y_min < zone.y_max):
				raise FloorplanValidationError(f'zone {zone.label!r} is degenerate: requires x_min < x_max and y_min < y_max')
		for i, a in enumerate(self._zones):
			for b in self._zones[i + 1:]:
				if _overlap(a.x_min, a.x_max, b.x_min, b.x_max) > EDGE_TOLERANCE and _overlap(a.y_min, a.y_max, b.y_min, b.y_max) > EDGE_TOLERANCE:
					raise FloorplanValidationError(f'zones {a.label!r} and {b.label!r} overlap')

	def _validate_readers(self):
		if self.antenna_count == 0:
			raise FloorplanValidationError('floorplan must contain at least one antenna')
		x_min, y_min, x_max, y_max = self.bounds
		ips = set()
		for reader in self._readers:
			try:
				ipaddress.IPv4Address(reader.ip)
			except ValueError:
				raise FloorplanValidationError(f'reader ip {reader.ip!r} is not a dotted quad') from None
			if reader.ip in ips:
				raise FloorplanValidationError(f'duplicate reader ip {reader.ip!r}')
			ips.add(reader.ip)

			indices = set()
			for antenna in reader.antennas:
				if antenna.index < 1:
					raise FloorplanValidationError(f'reader {reader.ip}: antenna index must be >= 1, got {antenna.index}')
				if antenna.index in indices:
					raise FloorplanValidationError(f'reader {reader.ip}: duplicate antenna index {antenna.index}')
				indices.add(antenna.index)
				if not (x_min <= antenna.x <= x_max and y_min <= antenna.y <= y_max):
					raise FloorplanValidationError(
						f'reader {reader.ip}: antenna {antenna.index} at ({antenna.x}, {antenna.y}) lies outside the floorplan bounds'
					)

	def _resolve_containers(self) -> Dict[str, str]:
		if not self._containers:
			raise FloorplanValidationError('floorplan must contain at least one container')
		container_zone: Dict[str, str] = {}
		tags = set()
		for container in self._containers:
			if container.container_id in container_zone:
				raise FloorplanValidationError(f'duplicate container id {container.container_id!r}')
			if not container.tag_ids:
				raise FloorplanValidationError(f'container {container.container_id!r} has no tags')
			for tag in container.tag_ids:
				if tag in tags:
					raise FloorplanValidationError(f'tag {tag!r} is assigned to more than one container')
				tags.add(tag)

			inside = [zone.label for zone in self._zones if zone.contains(container.position, strict=True)]
			if not inside:
				if any(zone.contains(container.position) for zone in self._zones):
					raise FloorplanValidationError(
						f'container {container.container_id!r} at ({container.x}, {container.y}) lies on a zone border'
					)
				raise FloorplanValidationError(
					f'container {container.container_id!r} at ({container.x}, {container.y}) is outside all zones'
				)
			container_zone[container.container_id] = inside[0]
		return container_zone

def _overlap(a_min: float, a_max: float, b_min: float, b_max: float) -> float:
	return min(a_max, b_max) - max(a_min, b_min)

def _touches(a: float, b: float) -> bool:
	return math.isclose(a, b, rel_tol=0.0, abs_tol=EDGE_TOLERANCE)

def shares_border(a: Zone, b: Zone) -> bool:
	"""True when the two rectangles share a wall segment of positive length. Corner contact does not count."""
	if _touches(a.x_max, b.x_min) or _touches(b.x_max, a.x_min):
		if _overlap(a.y_min, a.y_max, b.y_min, b.y_max) > EDGE_TOLERANCE:
			return True
	if _touches(a.y_max, b.y_min) or _touches(b.y_max, a.y_min):
		if _overlap(a.x_min, a.x_max, b.x_min, b.x_max) > EDGE_TOLERANCE:
			return True
	return False

def adjacency(fp: Floorplan) -> AdjacencyGraph:
	zones = fp.zones
	matrix = np.eye(len(zones), dtype=bool)
	for i, a in enumerate(zones):
		for j in range(i + 1, len(zones)):
			if shares_border(a, zones[j]):
				matrix[i, j] = matrix[j, i] = True
	return AdjacencyGraph([zone.label for zone in zones], matrix)

def zone_of_point(fp: Floorplan, p: Point) -> Optional[str]:
	# zones are held in canonical order, so a point on a shared wall resolves to the earliest label
	for zone in fp.zones:
		if zone.contains(p):
			return zone.label
	return None

_ZONE_FIELDS = {'label', 'x_min', 'y_min', 'x_max', 'y_max'}
_READER_FIELDS = {'ip', 'antennas'}
_ANTENNA_FIELDS = {'index', 'x', 'y', 'detection_floor_dbm'}
_CONTAINER_FIELDS = {'container_id', 'x', 'y', 'tag_ids'}

def _check_fields(table: Any, allowed: set, required: set, where: str) -> Mapping[str, Any]:
	if not isinstance(table, dict):
		raise FloorplanValidationError(f'{where}: expected a table')
	unknown = sorted(set(table) - allowed)
	if unknown:
		raise FloorplanValidationError(f'{where}: unknown field(s) {", ".join(unknown)}')
	missing = sorted(required - set(table))
	if missing:
		raise FloorplanValidationError(f'{where}: missing field(s) {", ".join(missing)}')
	return table

def _number(table: Mapping[str, Any], key: str, where: str) -> float:
	value = table[key]
	if isinstance(value, bool) or not isinstance(value, (int, float)):
		raise FloorplanValidationError(f'{where}: {key} must be a number, got {value!r}')
	return float(value)

def _string(table: Mapping[str, Any], key: str, where: str) -> str:
	value = table[key]
	if not isinstance(value, str) or not value:
		raise FloorplanValidationError(f'{where}: {key} must be a non-empty string, got {value!r}')
	return value

def _array(doc: Mapping[str, Any], key: str) -> List[Any]:
	value = doc.get(key, [])
	if not isinstance(value, list):
		raise FloorplanValidationError(f'{key} must be an array of tables')
	return value

def floorplan_from_document(doc: Mapping[str, Any]) -> Floorplan:
	unknown = sorted(set(doc) - {'zones', 'readers', 'containers'})
	if unknown:
		raise FloorplanValidationError(f'unknown top-level field(s) {", ".join(unknown)}')

	zones = []
	for i, table in enumerate(_array(doc, 'zones')):
		where = f'zones[{i}]'
		_check_fields(table, _ZONE_FIELDS, _ZONE_FIELDS, where)
		zones.append(Zone(
			label=_string(table, 'label', where),
			x_min=_number(table, 'x_min', where),
			y_min=_number(table, 'y_min', where),
			x_max=_number(table, 'x_max', where),
			y_max=_number(table, 'y_max', where)
		))

	readers = []
	for i, table in enumerate(_array(doc, 'readers')):
		where = f'readers[{i}]'
		_check_fields(table, _READER_FIELDS, _READER_FIELDS, where)
		if not isinstance(table['antennas'], list):
			raise FloorplanValidationError(f'{where}: antennas must be an array of tables')
		antennas = []
		for j, antenna in enumerate(table['antennas']):
			a_where = f'{where}.antennas[{j}]'
			_check_fields(antenna, _ANTENNA_FIELDS, _ANTENNA_FIELDS - {'detection_floor_dbm'}, a_where)
			index = antenna['index']
			if isinstance(index, bool) or not isinstance(index, int):
				raise FloorplanValidationError(f'{a_where}: index must be an integer, got {index!r}')
			floor = _number(antenna, 'detection_floor_dbm', a_where) if 'detection_floor_dbm' in antenna else DEFAULT_DETECTION_FLOOR_DBM
			antennas.append(Antenna(index=index, x=_number(antenna, 'x', a_where), y=_number(antenna, 'y', a_where), detection_floor_dbm=floor))
		readers.append(Reader(ip=_string(table, 'ip', where), antennas=tuple(sorted(antennas, key=lambda a: a.index))))

	containers = []
	for i, table in enumerate(_array(doc, 'containers')):
		where = f'containers[{i}]'
		_check_fields(table, _CONTAINER_FIELDS, _CONTAINER_FIELDS, where)
		tag_ids = table['tag_ids']
		if not isinstance(tag_ids, list) or not all(isinstance(tag, str) and tag for tag in tag_ids):
			raise FloorplanValidationError(f'{where}: tag_ids must be an array of non-empty strings')
		containers.append(Container(
			container_id=_string(table, 'container_id', where),
			x=_number(table, 'x', where),
			y=_number(table, 'y', where),
			tag_ids=tuple(tag_ids)
		))

	return Floorplan(zones, readers, containers)

def load_floorplan(text: str) -> Floorplan:
	try:
		doc = tomli.loads(text)
	except tomli.TOMLDecodeError as e:
		raise FloorplanParseError(f'malformed floorplan document: {e}') from e
	return floorplan_from_document(doc)

def load_floorplan_file(path: Union[str, Path]) -> Floorplan:
	with open(path, 'r', encoding='utf-8') as f:
		return load_floorplan(f.read())

def default_floorplan() -> Floorplan:
	return load_floorplan_file(DEFAULT_FLOORPLAN_PATH)

def zone_label(i: int) -> str:
	if i < len(ascii_uppercase):
		return f'LabZone{ascii_uppercase[i]}'
	return f'LabZone{i:03d}'

def grid_floorplan(
	rows: int,
	cols: int,
	cell: Tuple[float, float] = (6.0, 6.0),
	tags_per_container: int = 1,
	detection_floor_dbm: float = DEFAULT_DETECTION_FLOOR_DBM
) -> Floorplan:
	"""
	Lattice of `rows` x `cols` zones labeled row-major, one single-antenna reader at every zone center and one container
	per zone, offset a quarter cell from the center.
	"""
	if rows < 1 or cols < 1:
		raise ValueError('grid needs at least one row and one column')
	width, height = cell
	zones, readers, containers = [], [], []
	for r in range(rows):
		for c in range(cols):
			i = r * cols + c
			label = zone_label(i)
			zone = Zone(label, c * width, r * height, (c + 1) * width, (r + 1) * height)
			cx, cy = zone.center
			zones.append(zone)
			readers.append(Reader(ip=f'10.{r // 256}.{r % 256}.{c + 1}', antennas=(Antenna(1, cx, cy, detection_floor_dbm),)))
			containers.append(Container(
				container_id=f'CT-{label}',
				x=cx - width / 4,
				y=cy - height / 4,
				tag_ids=tuple(f'TAG-{label}-{k}' for k in range(tags_per_container))
			))
	return Floorplan(zones, readers, containers)
