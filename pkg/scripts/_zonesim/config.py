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

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import tomli

from .classweights import ClassWeightTable
from .dtree import CRITERIA, Hyperparams
from .errors import ConfigError
from .floorplan import DEFAULT_FLOORPLAN_PATH, Floorplan, load_floorplan_file
from .propagation import PropagationModel, SimConfig
from .rng import check_seed

SUBSAMPLE_MODES = ('proportional', 'balanced')
CLASS_WEIGHTS = ('balanced', 'uniform')
WEIGHT_MODES = ('pre-subsample', 'post-subsample')

@dataclass(frozen=True)
class RunConfig:
	"""Every knob of a pipeline run. The defaults are the reference configuration."""

	# None selects the bundled floorplan
	floorplan: Optional[str] = None
	sessions: int = 20
	reads_per_tag_per_session: int = 5
	p0: float = -30.0
	d0: float = 1.0
	eta: float = 2.2
	sigma: float = 4.0
	jobs: int = 1
	subsample_target: int = 5000
	subsample_mode: str = 'proportional'
	test_fraction: float = 0.10
	criterion: str = 'gini'
	max_depth: int = 8
	min_samples_split: int = 20
	class_weight: str = 'balanced'
	weight_mode: str = 'pre-subsample'
	seed: int = 42
	out_dir: str = 'out'
	bootstrap_resamples: int = 1000
	ci_level: float = 0.95
	adjacent_cost: float = 1.0
	non_adjacent_cost: float = 5.0

	def __post_init__(self):
		def one_of(name: str, allowed: tuple):
			if getattr(self, name) not in allowed:
				raise ConfigError(f'{name} must be one of {", ".join(allowed)}, got {getattr(self, name)!r}')

		one_of('subsample_mode', SUBSAMPLE_MODES)
		one_of('class_weight', CLASS_WEIGHTS)
		one_of('weight_mode', WEIGHT_MODES)
		one_of('criterion', CRITERIA)
		if self.subsample_target < 1:
			raise ConfigError(f'subsample_target must be >= 1, got {self.subsample_target}')
		if not 0 < self.test_fraction < 1:
			raise ConfigError(f'test_fraction must be in (0, 1), got {self.test_fraction}')
		if self.bootstrap_resamples < 0:
			raise ConfigError(f'bootstrap_resamples must be >= 0, got {self.bootstrap_resamples}')
		if not 0 < self.ci_level < 1:
			raise ConfigError(f'ci_level must be in (0, 1), got {self.ci_level}')
		if self.adjacent_cost < 0 or self.non_adjacent_cost < 0:
			raise ConfigError('misclassification costs must be non-negative')
		try:
			check_seed(self.seed)
			self.sim_config()
			self.hyperparams()
		except ValueError as e:
			raise ConfigError(str(e)) from e

	@property
	def floorplan_path(self) -> Path:
		return Path(self.floorplan) if self.floorplan is not None else DEFAULT_FLOORPLAN_PATH

	@property
	def out_path(self) -> Path:
		return Path(self.out_dir)

	def load_floorplan(self) -> Floorplan:
		return load_floorplan_file(self.floorplan_path)

	def sim_config(self) -> SimConfig:
		return SimConfig(
			sessions=self.sessions,
			reads_per_tag_per_session=self.reads_per_tag_per_session,
			seed=self.seed,
			model=PropagationModel(p0=self.p0, d0=self.d0, eta=self.eta, sigma=self.sigma),
			jobs=self.jobs
		)

	def hyperparams(self, weights: Optional[ClassWeightTable] = None) -> Hyperparams:
		return Hyperparams(
			criterion=self.criterion,
			max_depth=self.max_depth,
			min_samples_split=self.min_samples_split,
			class_weights=weights if self.class_weight == 'balanced' else None
		)

	def to_document(self) -> Dict[str, Any]:
		# TOML has no null; an unset floorplan is left out
		return {k: v for k, v in asdict(self).items() if v is not None}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}

def _coerce(name: str, value: Any) -> Any:
	kind = _FIELD_TYPES[name]
	if kind is float and isinstance(value, int) and not isinstance(value, bool):
		return float(value)
	if kind in (int, float, str) and (not isinstance(value, kind) or isinstance(value, bool)):
		raise ConfigError(f'{name} must be a {kind.__name__}, got {value!r}')
	if kind == Optional[str] and not isinstance(value, str):
		raise ConfigError(f'{name} must be a string, got {value!r}')
	return value

def config_from_mapping(values: Mapping[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
	unknown = sorted(set(values) - set(_FIELD_TYPES))
	if unknown:
		raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
	return replace(base or RunConfig(), **{k: _coerce(k, v) for k, v in values.items()})

def load_run_config(path: Union[str, Path]) -> RunConfig:
	"""Reads a TOML run config. Relative floorplan paths are resolved against the config file's directory."""
	path = Path(path)
	try:
		with open(path, 'rb') as f:
			values = tomli.load(f)
	except tomli.TOMLDecodeError as e:
		raise ConfigError(f'{path}: malformed run config: {e}') from e
	if isinstance(values.get('floorplan'), str) and not Path(values['floorplan']).is_absolute():
		values['floorplan'] = str(path.parent / values['floorplan'])
	return config_from_mapping(values)
