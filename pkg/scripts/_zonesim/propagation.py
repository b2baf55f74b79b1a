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

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from .floorplan import Floorplan
from .rng import DOMAIN_SHADOWING, check_seed, stream

logger = logging.getLogger(__name__)

# tag-antenna distances below this are clamped to it
D_MIN = 0.1

READS_CSV_HEADER = ['ReaderIP', 'Antenna', 'RSSI', 'TagId', 'ContainerId', 'SessionId', 'Timestamp']

@dataclass(frozen=True)
class PropagationModel:
	"""Log-distance path loss with Gaussian shadowing: RSSI(d) = p0 - 10 * eta * log10(d / d0) + X_sigma."""

	p0: float = -30.0
	d0: float = 1.0
	eta: float = 2.2
	sigma: float = 4.0

	def __post_init__(self):
		if not self.d0 > 0:
			raise ValueError(f'reference distance d0 must be > 0, got {self.d0}')
		if not self.eta > 0:
			raise ValueError(f'path-loss exponent eta must be > 0, got {self.eta}')
		if not self.sigma >= 0:
			raise ValueError(f'shadowing sigma must be >= 0, got {self.sigma}')

@dataclass(frozen=True)
class SimConfig:
	sessions: int = 20
	reads_per_tag_per_session: int = 5
	seed: int = 42
	model: PropagationModel = field(default_factory=PropagationModel)
	# worker threads for generation; output does not depend on it
	jobs: int = 1

	def __post_init__(self):
		if self.sessions < 1:
			raise ValueError(f'sessions must be >= 1, got {self.sessions}')
		if self.reads_per_tag_per_session < 1:
			raise ValueError(f'reads_per_tag_per_session must be >= 1, got {self.reads_per_tag_per_session}')
		if self.jobs < 1:
			raise ValueError(f'jobs must be >= 1, got {self.jobs}')
		check_seed(self.seed)

@dataclass(frozen=True)
class ReadRecord:
	reader_ip: str
	antenna: int
	rssi: float
	tag_id: str
	container_id: str
	session_id: int
	timestamp: int

ReadSet = List[ReadRecord]

def rssi_at(model: PropagationModel, d: float, noise: float = 0.0) -> float:
	if not d > 0:
		raise ValueError(f'distance must be > 0, got {d}')
	return model.p0 - 10 * model.eta * math.log10(d / model.d0) + noise

def session_tag_id(tag_id: str, session: int) -> str:
	# every acquisition session stocks fresh tagged items into the fixed containers
	return f'{tag_id}.s{session}'

def _generate_session(fp: Floorplan, cfg: SimConfig, session: int) -> ReadSet:
	model = cfg.model
	repetitions = cfg.reads_per_tag_per_session
	antennas = list(fp.antennas())
	reads: ReadSet = []
	tag_serial = 0
	for container in fp.containers:
		for tag in container.tag_ids:
			tag_id = session_tag_id(tag, session)
			for antenna_serial, (reader, antenna) in enumerate(antennas):
				d = max(math.hypot(container.x - antenna.x, container.y - antenna.y), D_MIN)
				mean = rssi_at(model, d)
				noise = stream(cfg.seed, DOMAIN_SHADOWING, session, tag_serial, antenna_serial).standard_normal(repetitions) * model.sigma
				for rep in range(repetitions):
					rssi = mean + float(noise[rep])
					if rssi < antenna.detection_floor_dbm:
						continue
					reads.append(ReadRecord(
						reader_ip=reader.ip,
						antenna=antenna.index,
						rssi=rssi,
						tag_id=tag_id,
						container_id=container.container_id,
						session_id=session,
						# one inventory round per repetition
						timestamp=session * repetitions + rep
					))
			tag_serial += 1
	return reads

def generate_reads(fp: Floorplan, cfg: SimConfig) -> ReadSet:
	"""
	Simulates `cfg.sessions` acquisition sessions. Output order is (session, container, tag, reader, antenna,
	repetition); the shadowing draw for a (session, tag, antenna) triple comes from its own counter-based stream, so the
	result is the same for any number of workers.
	"""
	logger.info(
		f'generating {cfg.sessions} sessions x {fp.tag_count} tags x {fp.antenna_count} antennas x '
		f'{cfg.reads_per_tag_per_session} reads (seed {cfg.seed}, {cfg.jobs} worker(s))'
	)
	if cfg.jobs > 1:
		with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
			chunks = list(pool.map(lambda s: _generate_session(fp, cfg, s), range(cfg.sessions)))
	else:
		chunks = [_generate_session(fp, cfg, s) for s in range(cfg.sessions)]

	reads = [read for chunk in chunks for read in chunk]
	candidates = cfg.sessions * fp.tag_count * fp.antenna_count * cfg.reads_per_tag_per_session
	logger.info(f'kept {len(reads)} of {candidates} candidate reads above the detection floors')
	return reads

def write_reads_csv(reads: Sequence[ReadRecord], path: Union[str, Path]):
	frame = pd.DataFrame(
		[(r.reader_ip, r.antenna, r.rssi, r.tag_id, r.container_id, r.session_id, r.timestamp) for r in reads],
		columns=READS_CSV_HEADER
	)
	frame.to_csv(path, index=False, float_format='%.2f', lineterminator='\n', encoding='utf-8')
