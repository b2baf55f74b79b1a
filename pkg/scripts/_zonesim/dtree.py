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
Weighted CART-style decision tree over `(ReaderIP, Antenna, RSSI)` rows.

Candidate thresholds are the midpoints between consecutive distinct values of a feature at a node, or the lower value
when the two are adjacent floats and the midpoint rounds up to the upper one; a row goes left when its feature value is
`<= threshold`. Among splits whose gain is within `TIE_EPSILON` of the best, the one with the
smaller feature index wins, then the smaller threshold. Leaves predict the class with the largest weighted tally, the
first in canonical order on ties.
"""

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr
from scipy.stats import entropy as _scipy_entropy
import tomli
import tomli_w as toml

from .classweights import ClassWeightTable
from .dataset import FEATURE_NAMES, LabeledDataset
from .errors import ConfigError, DatasetError, ModelFormatError

logger = logging.getLogger(__name__)

CRITERIA = ('gini', 'entropy')
MIN_GAIN = 1e-12
TIE_EPSILON = 1e-12

MODEL_FORMAT = 'zonesim-tree'
MODEL_VERSION = 1

@dataclass(frozen=True)
class Hyperparams:
	criterion: str = 'gini'
	max_depth: int = 8
	min_samples_split: int = 20
	# None trains with uniform weights
	class_weights: Optional[ClassWeightTable] = None

	def __post_init__(self):
		if self.criterion not in CRITERIA:
			raise ConfigError(f'criterion must be one of {", ".join(CRITERIA)}, got {self.criterion!r}')
		if self.max_depth < 1:
			raise ConfigError(f'max_depth must be >= 1, got {self.max_depth}')
		if self.min_samples_split < 2:
			raise ConfigError(f'min_samples_split must be >= 2, got {self.min_samples_split}')

@dataclass(frozen=True)
class SplitRule:
	feature: int
	threshold: float

	@property
	def feature_name(self) -> str:
		return FEATURE_NAMES[self.feature]

@dataclass(frozen=True)
class TreeNode:
	n_samples: int
	impurity: float
	# weighted class tallies, in the tree's class order
	tallies: Tuple[float, ...]
	prediction: str
	rule: Optional[SplitRule] = None
	left: Optional['TreeNode'] = None
	right: Optional['TreeNode'] = None

	@property
	def is_leaf(self) -> bool:
		return self.rule is None

def _checked_tallies(tallies: Any) -> np.ndarray:
	tallies = np.asarray(tallies, dtype=np.float64)
	if np.any(tallies < 0):
		raise ValueError('class tallies must be non-negative')
	if not tallies.sum() > 0:
		raise ValueError('impurity is undefined for a node with zero total weight')
	return tallies

def gini(tallies: Sequence[float]) -> float:
	tallies = _checked_tallies(tallies)
	p = tallies / tallies.sum()
	return float(1.0 - np.sum(p * p))

def entropy(tallies: Sequence[float]) -> float:
	"""Natural-log entropy of the class shares."""
	return float(_scipy_entropy(_checked_tallies(tallies)))

def impurity(tallies: Sequence[float], criterion: str) -> float:
	if criterion == 'gini':
		return gini(tallies)
	if criterion == 'entropy':
		return entropy(tallies)
	raise ValueError(f'unknown criterion {criterion!r}')

def information_gain(
	parent_tallies: Sequence[float],
	left_tallies: Sequence[float],
	right_tallies: Sequence[float],
	criterion: str = 'gini'
) -> float:
	parent = np.asarray(parent_tallies, dtype=np.float64)
	left = np.asarray(left_tallies, dtype=np.float64)
	right = np.asarray(right_tallies, dtype=np.float64)
	if not (parent.shape == left.shape == right.shape):
		raise ValueError('parent and child tallies must cover the same classes')
	total = parent.sum()
	if not np.allclose(left + right, parent, rtol=1e-9, atol=1e-9 * total):
		raise ValueError('child tallies do not add up to the parent tallies')

	gain = impurity(parent, criterion)
	for child in (left, right):
		mass = child.sum()
		if mass > 0:
			gain -= mass / total * impurity(child, criterion)
	return gain

def _impurity_rows(tallies: np.ndarray, criterion: str) -> np.ndarray:
	# row-wise impurity of a (candidates, classes) tally matrix
	p = tallies / tallies.sum(axis=1, keepdims=True)
	if criterion == 'gini':
		return 1.0 - np.sum(p * p, axis=1)
	return np.sum(entr(p), axis=1)

def _feature_gains(column: np.ndarray, codes: np.ndarray, weights: np.ndarray, k: int, criterion: str, parent: float):
	order = np.argsort(column, kind='stable')
	values = column[order]
	change = np.flatnonzero(values[:-1] != values[1:])
	if len(change) == 0:
		return np.empty(0), np.empty(0)

	one_hot = np.zeros((len(values), k), dtype=np.float64)
	one_hot[np.arange(len(values)), codes[order]] = weights[order]
	cumulative = np.cumsum(one_hot, axis=0)
	left = cumulative[change]
	right = cumulative[-1] - left
	left_mass = left.sum(axis=1)
	right_mass = right.sum(axis=1)
	total = left_mass + right_mass

	gains = parent - left_mass / total * _impurity_rows(left, criterion) - right_mass / total * _impurity_rows(right, criterion)
	thresholds = (values[change] + values[change + 1]) / 2.0
	# adjacent floats have no midpoint; fall back to the lower value so neither side is empty
	thresholds = np.where(thresholds < values[change + 1], thresholds, values[change])
	return thresholds, gains

def best_split(
	rows: Any,
	labels: Sequence[Any],
	weights: Optional[Sequence[float]] = None,
	criterion: str = 'gini'
) -> Optional[Tuple[SplitRule, float]]:
	"""
	Exhaustive search over every feature and every midpoint threshold. Returns `None` when no candidate has a gain
	above `MIN_GAIN`.
	"""
	rows = np.asarray(rows, dtype=np.float64)
	if rows.ndim != 2 or len(rows) < 2:
		return None
	_, codes = np.unique(np.asarray(labels), return_inverse=True)
	codes = codes.reshape(-1)
	k = int(codes.max()) + 1
	weights = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=np.float64)
	parent = impurity(np.bincount(codes, weights=weights, minlength=k), criterion)

	features, thresholds, gains = [], [], []
	for j in range(rows.shape[1]):
		t, g = _feature_gains(rows[:, j], codes, weights, k, criterion, parent)
		features.append(np.full(len(t), j))
		thresholds.append(t)
		gains.append(g)
	gains = np.concatenate(gains)
	if len(gains) == 0:
		return None
	best_gain = gains.max()
	if best_gain <= MIN_GAIN:
		return None

	# candidates are already in (feature, threshold) order
	i = int(np.flatnonzero(gains >= best_gain - TIE_EPSILON)[0])
	rule = SplitRule(int(np.concatenate(features)[i]), float(np.concatenate(thresholds)[i]))
	return rule, float(gains[i])

class DecisionTree:
	def __init__(
		self,
		root: TreeNode,
		classes: Sequence[str],
		hyperparams: Hyperparams,
		feature_importances: Optional[Mapping[str, float]] = None
	):
		self.root = root
		self.classes: Tuple[str, ...] = tuple(classes)
		self.hyperparams = hyperparams
		self.feature_importances: Dict[str, float] = dict(feature_importances or {name: 0.0 for name in FEATURE_NAMES})

		self.depth = 0
		self.node_count = 0
		self.leaf_count = 0
		for depth, node in self.nodes():
			self.depth = max(self.depth, depth)
			self.node_count += 1
			self.leaf_count += node.is_leaf

	def __eq__(self, other: object) -> bool:
		if not isinstance(other, DecisionTree):
			return NotImplemented
		return self.root == other.root and self.classes == other.classes and self.hyperparams == other.hyperparams

	def nodes(self) -> Iterator[Tuple[int, TreeNode]]:
		"""Pre-order walk yielding `(depth, node)`."""
		stack = [(0, self.root)]
		while stack:
			depth, node = stack.pop()
			yield depth, node
			if not node.is_leaf:
				stack.append((depth + 1, node.right))
				stack.append((depth + 1, node.left))

	def predict(self, row: Sequence[float]) -> str:
		node = self.root
		while not node.is_leaf:
			node = node.left if row[node.rule.feature] <= node.rule.threshold else node.right
		return node.prediction

	def predict_many(self, rows: Any) -> np.ndarray:
		rows = np.asarray(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
		return np.array([self.predict(row) for row in rows], dtype=str)

def _leaf(tallies: np.ndarray, n_samples: int, node_impurity: float, classes: Sequence[str]) -> TreeNode:
	return TreeNode(
		n_samples=n_samples,
		impurity=node_impurity,
		tallies=tuple(float(t) for t in tallies),
		prediction=classes[int(np.argmax(tallies))]
	)

def fit(train: LabeledDataset, hp: Hyperparams) -> DecisionTree:
	if len(train) == 0:
		raise DatasetError('cannot fit a tree on an empty dataset')
	classes = train.zones
	codes = np.searchsorted(np.array(classes), train.labels)
	if hp.class_weights is None:
		class_weight = np.ones(len(classes))
	else:
		present = set(train.labels.tolist())
		class_weight = np.array([hp.class_weights.weight(z) if z in present else 1.0 for z in classes])
	weights = class_weight[codes]
	rows = train.rows
	importances = np.zeros(rows.shape[1])

	def grow(indices: np.ndarray, depth: int) -> TreeNode:
		tallies = np.bincount(codes[indices], weights=weights[indices], minlength=len(classes))
		node_impurity = impurity(tallies, hp.criterion)
		n = len(indices)
		if depth >= hp.max_depth or n < hp.min_samples_split or np.count_nonzero(tallies) <= 1:
			return _leaf(tallies, n, node_impurity, classes)
		found = best_split(rows[indices], codes[indices], weights[indices], hp.criterion)
		if found is None:
			return _leaf(tallies, n, node_impurity, classes)

		rule, gain = found
		importances[rule.feature] += tallies.sum() * gain
		goes_left = rows[indices, rule.feature] <= rule.threshold
		return TreeNode(
			n_samples=n,
			impurity=node_impurity,
			tallies=tuple(float(t) for t in tallies),
			prediction=classes[int(np.argmax(tallies))],
			rule=rule,
			left=grow(indices[goes_left], depth + 1),
			right=grow(indices[~goes_left], depth + 1)
		)

	root = grow(np.arange(len(train)), 0)
	if importances.sum() > 0:
		importances /= importances.sum()
	tree = DecisionTree(root, classes, hp, {name: float(v) for name, v in zip(FEATURE_NAMES, importances)})
	logger.info(f'fitted tree: depth {tree.depth}, {tree.node_count} nodes, {tree.leaf_count} leaves')
	return tree

def format_threshold(value: float) -> str:
	short = '%.6g' % value
	return short if float(short) == value else repr(value)

def export_rules(tree: DecisionTree) -> str:
	"""
	Indented if/else listing of the tree. A right subtree starts on a line prefixed with `else ` at the indent of its
	`if`; leaves print the predicted zone and their non-zero weighted tallies.
	"""
	lines: List[str] = []

	def emit(node: TreeNode, indent: int, prefix: str):
		pad = '  ' * indent
		if node.is_leaf:
			tallies = ', '.join(f'{c}={t:.6g}' for c, t in zip(tree.classes, node.tallies) if t > 0)
			lines.append(f'{pad}{prefix}predict {node.prediction}  # tallies: {tallies}')
			return
		lines.append(f'{pad}{prefix}if {node.rule.feature_name} <= {format_threshold(node.rule.threshold)}:')
		emit(node.left, indent + 1, '')
		emit(node.right, indent, 'else ')

	emit(tree.root, 0, '')
	return '\n'.join(lines) + '\n'

class RuleNode(NamedTuple):
	prediction: Optional[str] = None
	feature: int = -1
	threshold: float = 0.0
	left: Optional['RuleNode'] = None
	right: Optional['RuleNode'] = None

def parse_rules(text: str) -> RuleNode:
	lines = [line for line in text.splitlines() if line.strip()]
	position = 0

	def parse(indent: int, prefix: str) -> RuleNode:
		nonlocal position
		if position >= len(lines):
			raise ModelFormatError('rules text ends unexpectedly')
		line = lines[position]
		body = line.lstrip(' ')
		if len(line) - len(body) != 2 * indent or not body.startswith(prefix):
			raise ModelFormatError(f'rules line {position + 1} is misplaced: {line!r}')
		body = body[len(prefix):].split('#', 1)[0].strip()
		position += 1

		if body.startswith('predict '):
			return RuleNode(prediction=body[len('predict '):].strip())
		if body.startswith('if ') and body.endswith(':'):
			feature, op, threshold = body[3:-1].split()
			if feature not in FEATURE_NAMES or op != '<=':
				raise ModelFormatError(f'rules line {position}: cannot read condition {body!r}')
			left = parse(indent + 1, '')
			right = parse(indent, 'else ')
			return RuleNode(feature=FEATURE_NAMES.index(feature), threshold=float(threshold), left=left, right=right)
		raise ModelFormatError(f'rules line {position}: cannot read {body!r}')

	root = parse(0, '')
	if position != len(lines):
		raise ModelFormatError(f'unexpected rules text after line {position}')
	return root

def predict_rules(rules: RuleNode, row: Sequence[float]) -> str:
	node = rules
	while node.prediction is None:
		node = node.left if row[node.feature] <= node.threshold else node.right
	return node.prediction

def tree_to_document(tree: DecisionTree) -> Dict[str, Any]:
	nodes: List[Dict[str, Any]] = []

	def add(node: TreeNode) -> int:
		entry: Dict[str, Any] = {
			'id': len(nodes),
			'n_samples': node.n_samples,
			'impurity': float(node.impurity),
			'tallies': list(node.tallies),
			'prediction': node.prediction
		}
		nodes.append(entry)
		if not node.is_leaf:
			entry['feature'] = node.rule.feature_name
			entry['threshold'] = float(node.rule.threshold)
			entry['left'] = add(node.left)
			entry['right'] = add(node.right)
		return entry['id']

	add(tree.root)
	hp = tree.hyperparams
	doc: Dict[str, Any] = {
		'format': MODEL_FORMAT,
		'version': MODEL_VERSION,
		'classes': list(tree.classes),
		'features': list(FEATURE_NAMES),
		'hyperparams': {
			'criterion': hp.criterion,
			'max_depth': hp.max_depth,
			'min_samples_split': hp.min_samples_split,
			'class_weight': 'uniform' if hp.class_weights is None else 'balanced'
		},
		'stats': {'depth': tree.depth, 'node_count': tree.node_count, 'leaf_count': tree.leaf_count},
		'feature_importances': dict(tree.feature_importances)
	}
	if hp.class_weights is not None:
		doc['class_weights'] = {
			'counts': dict(hp.class_weights.counts),
			'weights': {z: float(w) for z, w in hp.class_weights.weights.items()}
		}
	doc['nodes'] = nodes
	return doc

def tree_from_document(doc: Mapping[str, Any]) -> DecisionTree:
	try:
		if doc.get('format') != MODEL_FORMAT:
			raise ModelFormatError(f'not a tree model document (format = {doc.get("format")!r})')
		if doc.get('version') != MODEL_VERSION:
			raise ModelFormatError(f'unsupported tree model version {doc.get("version")!r}')
		if list(doc['features']) != list(FEATURE_NAMES):
			raise ModelFormatError(f'model features {doc["features"]} do not match {list(FEATURE_NAMES)}')
		classes = tuple(doc['classes'])

		weights = doc.get('class_weights')
		hp = doc['hyperparams']
		hyperparams = Hyperparams(
			criterion=hp['criterion'],
			max_depth=hp['max_depth'],
			min_samples_split=hp['min_samples_split'],
			class_weights=None if weights is None else ClassWeightTable(
				counts={z: int(c) for z, c in weights['counts'].items()},
				weights={z: float(w) for z, w in weights['weights'].items()}
			)
		)

		entries = doc['nodes']
		if [e['id'] for e in entries] != list(range(len(entries))):
			raise ModelFormatError('model node ids must be 0..n-1 in order')

		def build(i: int, seen: set) -> TreeNode:
			if i in seen or not 0 <= i < len(entries):
				raise ModelFormatError(f'model node {i} is missing or referenced twice')
			seen.add(i)
			e = entries[i]
			tallies = tuple(float(t) for t in e['tallies'])
			if len(tallies) != len(classes):
				raise ModelFormatError(f'model node {i} has {len(tallies)} tallies for {len(classes)} classes')
			if e['prediction'] not in classes:
				raise ModelFormatError(f'model node {i} predicts unknown zone {e["prediction"]!r}')
			common = dict(n_samples=int(e['n_samples']), impurity=float(e['impurity']), tallies=tallies, prediction=e['prediction'])
			if 'feature' not in e:
				return TreeNode(**common)
			rule = SplitRule(FEATURE_NAMES.index(e['feature']), float(e['threshold']))
			return TreeNode(**common, rule=rule, left=build(e['left'], seen), right=build(e['right'], seen))

		seen: set = set()
		root = build(0, seen)
		if len(seen) != len(entries):
			raise ModelFormatError('model has unreachable nodes')
		return DecisionTree(root, classes, hyperparams, doc.get('feature_importances'))
	except (KeyError, TypeError, ValueError) as e:
		if isinstance(e, ModelFormatError):
			raise
		raise ModelFormatError(f'malformed tree model: {e!r}') from e

def dump_tree(tree: DecisionTree) -> str:
	return toml.dumps(tree_to_document(tree))

def save_tree(tree: DecisionTree, path: Union[str, Path]):
	with open(path, 'wb') as f:
		toml.dump(tree_to_document(tree), f)

def load_tree(path: Union[str, Path]) -> DecisionTree:
	try:
		with open(path, 'rb') as f:
			doc = tomli.load(f)
	except tomli.TOMLDecodeError as e:
		raise ModelFormatError(f'{path}: malformed model document: {e}') from e
	return tree_from_document(doc)
