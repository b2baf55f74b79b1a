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

from dataclasses import dataclass, field
import logging
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .floorplan import AdjacencyGraph
from .rng import DOMAIN_BOOTSTRAP, stream

logger = logging.getLogger(__name__)

Metric = Callable[[np.ndarray, np.ndarray], float]

def _pair(y: Sequence[str], y_hat: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
	y = np.asarray(y, dtype=str)
	y_hat = np.asarray(y_hat, dtype=str)
	if y.shape != y_hat.shape:
		raise ValueError(f'label and prediction counts differ: {len(y)} vs {len(y_hat)}')
	if len(y) == 0:
		raise ValueError('cannot score an empty prediction set')
	return y, y_hat

def _codes(labels: np.ndarray, zones: Sequence[str]) -> np.ndarray:
	index = {z: i for i, z in enumerate(zones)}
	try:
		return np.array([index[label] for label in labels.tolist()], dtype=np.int64)
	except KeyError as e:
		raise ValueError(f'unknown zone {e.args[0]!r}') from None

@dataclass(frozen=True)
class ConfusionMatrix:
	"""`counts[i, j]` is the number of rows of true zone `zones[i]` predicted as `zones[j]`."""

	zones: Tuple[str, ...]
	counts: np.ndarray

	@property
	def total(self) -> int:
		return int(self.counts.sum())

	@property
	def support(self) -> np.ndarray:
		return self.counts.sum(axis=1)

	@property
	def predicted(self) -> np.ndarray:
		return self.counts.sum(axis=0)

	@property
	def true_positives(self) -> np.ndarray:
		return np.diag(self.counts)

def confusion(y: Sequence[str], y_hat: Sequence[str], zones: Optional[Sequence[str]] = None) -> ConfusionMatrix:
	y, y_hat = _pair(y, y_hat)
	zones = tuple(zones) if zones is not None else tuple(sorted(set(y.tolist()) | set(y_hat.tolist())))
	k = len(zones)
	flat = _codes(y, zones) * k + _codes(y_hat, zones)
	counts = np.bincount(flat, minlength=k * k).reshape(k, k)
	counts.setflags(write=False)
	return ConfusionMatrix(zones, counts)

@dataclass(frozen=True)
class ClassScores:
	precision: np.ndarray
	recall: np.ndarray
	f1: np.ndarray

def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
	# 0/0 is scored as 0
	num = np.asarray(num, dtype=np.float64)
	den = np.asarray(den, dtype=np.float64)
	return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

def per_class_prf(cm: ConfusionMatrix) -> ClassScores:
	tp = cm.true_positives
	fp = cm.predicted - tp
	fn = cm.support - tp
	return ClassScores(
		precision=_ratio(tp, tp + fp),
		recall=_ratio(tp, tp + fn),
		f1=_ratio(2 * tp, 2 * tp + fp + fn)
	)

@dataclass(frozen=True)
class AggregateScores:
	macro_f1: float
	micro_precision: float
	micro_recall: float
	micro_f1: float

def macro_micro(cm: ConfusionMatrix) -> AggregateScores:
	"""Macro-F1 averages over every zone, including zones with no support. Micro scores pool counts over zones."""
	scores = per_class_prf(cm)
	tp = int(cm.true_positives.sum())
	# in single-label classification every miss is one pooled false positive and one pooled false negative
	fp = fn = cm.total - tp
	return AggregateScores(
		macro_f1=float(scores.f1.mean()) if len(cm.zones) else 0.0,
		micro_precision=tp / (tp + fp) if tp + fp else 0.0,
		micro_recall=tp / (tp + fn) if tp + fn else 0.0,
		micro_f1=2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
	)

def accuracy(y: Sequence[str], y_hat: Sequence[str]) -> float:
	y, y_hat = _pair(y, y_hat)
	return np.count_nonzero(y == y_hat) / len(y)

def macro_f1(y: Sequence[str], y_hat: Sequence[str], zones: Sequence[str]) -> float:
	return macro_micro(confusion(y, y_hat, zones)).macro_f1

def adjacency_accuracy(y: Sequence[str], y_hat: Sequence[str], adj: AdjacencyGraph) -> float:
	"""Share of predictions that hit the true zone or a zone bordering it."""
	y, y_hat = _pair(y, y_hat)
	hits = adj.matrix[_codes(y, adj.zones), _codes(y_hat, adj.zones)]
	return np.count_nonzero(hits) / len(y)

@dataclass(frozen=True)
class AdjacencyBreakdown:
	zones: Tuple[str, ...]
	exact: np.ndarray
	adjacent: np.ndarray
	non_adjacent: np.ndarray

	@property
	def non_adjacent_rate(self) -> float:
		total = int(self.exact.sum() + self.adjacent.sum() + self.non_adjacent.sum())
		return int(self.non_adjacent.sum()) / total if total else 0.0

def adjacency_breakdown(y: Sequence[str], y_hat: Sequence[str], adj: AdjacencyGraph) -> AdjacencyBreakdown:
	"""Per true zone: exact hits, misses into a neighboring zone, and misses into a non-adjacent zone."""
	y, y_hat = _pair(y, y_hat)
	true_codes = _codes(y, adj.zones)
	pred_codes = _codes(y_hat, adj.zones)
	k = len(adj.zones)
	exact = true_codes == pred_codes
	near = adj.matrix[true_codes, pred_codes] & ~exact
	far = ~adj.matrix[true_codes, pred_codes]
	return AdjacencyBreakdown(
		zones=adj.zones,
		exact=np.bincount(true_codes[exact], minlength=k),
		adjacent=np.bincount(true_codes[near], minlength=k),
		non_adjacent=np.bincount(true_codes[far], minlength=k)
	)

class CostMatrix:
	"""Misclassification costs; `matrix[i, j]` prices predicting `zones[j]` for a row of `zones[i]`."""

	def __init__(self, zones: Sequence[str], matrix: Any):
		matrix = np.array(matrix, dtype=np.float64)
		if matrix.shape != (len(zones), len(zones)):
			raise ValueError(f'cost matrix must be {len(zones)}x{len(zones)}, got {matrix.shape}')
		if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
			raise ValueError('costs must be finite and non-negative')
		if np.any(np.diag(matrix) != 0):
			raise ValueError('correct predictions must cost nothing (zero diagonal)')
		matrix.setflags(write=False)
		self.zones: Tuple[str, ...] = tuple(zones)
		self.matrix = matrix

	@classmethod
	def zero_one(cls, zones: Sequence[str]) -> 'CostMatrix':
		return cls(zones, 1.0 - np.eye(len(zones)))

	@classmethod
	def from_adjacency(cls, adj: AdjacencyGraph, adjacent_cost: float = 1.0, non_adjacent_cost: float = 5.0) -> 'CostMatrix':
		matrix = np.where(adj.matrix, adjacent_cost, non_adjacent_cost).astype(np.float64)
		np.fill_diagonal(matrix, 0.0)
		return cls(adj.zones, matrix)

def cost_risk(y: Sequence[str], y_hat: Sequence[str], cost: CostMatrix) -> float:
	"""Mean misclassification cost."""
	y, y_hat = _pair(y, y_hat)
	return float(np.mean(cost.matrix[_codes(y, cost.zones), _codes(y_hat, cost.zones)]))

@dataclass(frozen=True)
class Interval:
	point: float
	lower: float
	upper: float
	level: float

def bootstrap_ci(
	metric: Metric,
	y: Sequence[str],
	y_hat: Sequence[str],
	resamples: int = 1000,
	level: float = 0.95,
	seed: int = 0
) -> Interval:
	"""
	Percentile bootstrap. Resample `b` draws its row indices from its own stream, so the interval does not depend on
	the order resamples are evaluated in.
	"""
	y, y_hat = _pair(y, y_hat)
	if resamples < 1:
		raise ValueError(f'need at least one bootstrap resample, got {resamples}')
	if not 0 < level < 1:
		raise ValueError(f'confidence level must be in (0, 1), got {level}')

	n = len(y)
	stats = np.empty(resamples, dtype=np.float64)
	for b in range(resamples):
		idx = stream(seed, DOMAIN_BOOTSTRAP, b).integers(0, n, size=n)
		stats[b] = metric(y[idx], y_hat[idx])
	alpha = (1 - level) / 2
	lower, upper = np.quantile(stats, [alpha, 1 - alpha], method='linear')
	return Interval(point=float(metric(y, y_hat)), lower=float(lower), upper=float(upper), level=level)

@dataclass
class EvalReport:
	zones: Tuple[str, ...]
	confusion: ConfusionMatrix
	scores: ClassScores
	accuracy: float
	aggregates: AggregateScores
	adjacency_accuracy: float
	risk: float
	breakdown: AdjacencyBreakdown
	intervals: Dict[str, Interval] = field(default_factory=dict)

	@property
	def n(self) -> int:
		return self.confusion.total

def evaluate(
	y: Sequence[str],
	y_hat: Sequence[str],
	adj: AdjacencyGraph,
	cost: CostMatrix,
	resamples: int = 1000,
	level: float = 0.95,
	seed: int = 0
) -> EvalReport:
	"""Scores predictions over the zones of `adj`; `resamples = 0` skips the bootstrap intervals."""
	y, y_hat = _pair(y, y_hat)
	cm = confusion(y, y_hat, adj.zones)
	report = EvalReport(
		zones=adj.zones,
		confusion=cm,
		scores=per_class_prf(cm),
		accuracy=accuracy(y, y_hat),
		aggregates=macro_micro(cm),
		adjacency_accuracy=adjacency_accuracy(y, y_hat, adj),
		risk=cost_risk(y, y_hat, cost),
		breakdown=adjacency_breakdown(y, y_hat, adj)
	)
	if resamples > 0:
		metrics: Dict[str, Metric] = {
			'accuracy': accuracy,
			'macro_f1': lambda a, b: macro_f1(a, b, adj.zones),
			'adjacency_accuracy': lambda a, b: adjacency_accuracy(a, b, adj)
		}
		for name, metric in metrics.items():
			report.intervals[name] = bootstrap_ci(metric, y, y_hat, resamples, level, seed)
		logger.debug(f'bootstrap intervals from {resamples} resamples at level {level}')
	return report
