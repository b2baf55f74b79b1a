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
from pathlib import Path
from typing import Dict, List, Mapping, Union

import pandas as pd

from .errors import DatasetError

@dataclass(frozen=True)
class ClassWeightTable:
	"""Per-zone row counts and the weight each row of that zone carries during training."""

	counts: Dict[str, int]
	weights: Dict[str, float]

	@classmethod
	def uniform(cls, counts: Mapping[str, int]) -> 'ClassWeightTable':
		"""Weight 1 for every zone, with the same count rules as `balanced_weights`."""
		_check_counts(counts)
		return cls(counts={z: int(counts[z]) for z in sorted(counts)}, weights={z: 1.0 for z in sorted(counts)})

	@property
	def zones(self) -> List[str]:
		return sorted(self.weights)

	def weight(self, zone: str) -> float:
		try:
			return self.weights[zone]
		except KeyError:
			raise DatasetError(f'no class weight for zone {zone!r}') from None

	def by_weight(self) -> List[str]:
		"""Zones in ascending weight order, ties by label."""
		return sorted(self.weights, key=lambda z: (self.weights[z], z))

def _check_counts(counts: Mapping[str, int]):
	if not counts:
		raise DatasetError('cannot weight an empty class set')
	for zone, count in counts.items():
		if count < 1:
			raise DatasetError(f'zone {zone!r} has {count} rows; its weight is undefined')

def balanced_weights(counts: Mapping[str, int]) -> ClassWeightTable:
	"""w_k = n / (K * n_k), where K is the number of classes passed in."""
	_check_counts(counts)
	n = sum(counts.values())
	k = len(counts)
	return ClassWeightTable(
		counts={z: int(counts[z]) for z in sorted(counts)},
		weights={z: n / (k * counts[z]) for z in sorted(counts)}
	)

def format_weight_table(table: ClassWeightTable) -> str:
	lines = [f'{"Zone":<16}{"Count":>10}{"Weight":>9}']
	for zone in table.by_weight():
		lines.append(f'{zone:<16}{table.counts[zone]:>10}{table.weights[zone]:>9.2f}')
	return '\n'.join(lines) + '\n'

def write_weight_csv(table: ClassWeightTable, path: Union[str, Path]):
	frame = pd.DataFrame({
		'Zone': table.zones,
		'Count': [table.counts[z] for z in table.zones],
		# full precision
		'Weight': [repr(table.weights[z]) for z in table.zones]
	})
	frame.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')
