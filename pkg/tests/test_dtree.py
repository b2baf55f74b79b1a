import math

import numpy as np
import pytest
import tomli

from _zonesim.classweights import ClassWeightTable, balanced_weights
from _zonesim.dataset import LabeledDataset
from _zonesim.dtree import (
	MIN_GAIN,
	TIE_EPSILON,
	Hyperparams,
	best_split,
	dump_tree,
	entropy,
	export_rules,
	fit,
	gini,
	information_gain,
	load_tree,
	parse_rules,
	predict_rules,
	save_tree,
	tree_from_document
)
from _zonesim.errors import ConfigError, DatasetError, ModelFormatError

def dataset(rows, labels):
	rows = np.asarray(rows, dtype=np.float64)
	return LabeledDataset(rows, labels, [f't{i}' for i in range(len(labels))], [0] * len(labels))

def random_dataset(rng, n=None, k=None):
	n = n or int(rng.integers(2, 201))
	k = k or int(rng.integers(2, 13))
	rows = np.column_stack([
		rng.integers(0, 8, n) * 16_777_216 + 167_772_160,
		rng.integers(1, 5, n),
		np.round(rng.normal(-55, 6, n), 2)
	]).astype(np.float64)
	labels = [f'Z{c:02d}' for c in rng.integers(0, k, n)]
	return rows, labels

def oracle(rows, labels, weights, criterion):
	"""Exhaustive search written independently of the sweep: every feature, every midpoint, tallies by masking."""
	classes = sorted(set(labels))
	labels = np.asarray(labels)

	def tallies(mask):
		return np.array([weights[mask & (labels == c)].sum() for c in classes])

	def impurity(t):
		p = t / t.sum()
		if criterion == 'gini':
			return 1.0 - float(np.sum(p ** 2))
		return -sum(x * math.log(x) for x in p if x > 0)

	everything = np.ones(len(labels), dtype=bool)
	parent = tallies(everything)
	candidates = []
	for j in range(rows.shape[1]):
		values = np.unique(rows[:, j])
		for a, b in zip(values, values[1:]):
			tau = (a + b) / 2.0
			left = rows[:, j] <= tau
			lt, rt = tallies(left), tallies(~left)
			gain = impurity(parent) - lt.sum() / parent.sum() * impurity(lt) - rt.sum() / parent.sum() * impurity(rt)
			candidates.append((j, tau, gain))
	if not candidates:
		return None
	top = max(g for _, _, g in candidates)
	if top <= MIN_GAIN:
		return None
	return next(c for c in candidates if c[2] >= top - TIE_EPSILON)

class TestImpurity:
	def test_gini_values(self):
		assert gini([5.0]) == 0.0
		assert gini([3, 0, 0]) == 0.0
		assert gini([2, 2]) == pytest.approx(0.5)
		assert gini([1] * 12) == pytest.approx(11 / 12)

	def test_entropy_values(self):
		assert entropy([4, 0]) == 0.0
		assert entropy([1, 1]) == pytest.approx(math.log(2))
		assert entropy([3] * 12) == pytest.approx(math.log(12))

	@pytest.mark.parametrize('seed', range(30))
	def test_bounds(self, seed):
		rng = np.random.default_rng(seed)
		k = int(rng.integers(1, 13))
		t = rng.random(k) * rng.integers(0, 2, k)
		t[0] += 0.1
		assert 0.0 <= gini(t) <= 1 - 1 / k + 1e-12
		assert 0.0 <= entropy(t) <= math.log(k) + 1e-12

	def test_zero_weight(self):
		with pytest.raises(ValueError):
			gini([0, 0])
		with pytest.raises(ValueError):
			entropy([])

	def test_information_gain_values(self):
		assert information_gain([2, 2], [2, 0], [0, 2], 'gini') == pytest.approx(0.5)
		assert information_gain([4, 2], [2, 1], [2, 1], 'gini') == pytest.approx(0.0, abs=1e-15)
		assert information_gain([3, 3], [3, 0], [0, 3], 'entropy') == pytest.approx(math.log(2))

	def test_information_gain_rejects_inconsistent_tallies(self):
		with pytest.raises(ValueError):
			information_gain([2, 2], [2, 0], [0, 1], 'gini')

class TestBestSplit:
	def test_identical_rows(self):
		assert best_split(np.ones((5, 3)), ['A', 'B', 'A', 'B', 'A']) is None

	def test_midpoint_rule(self):
		rows = [[0, 1, 4], [0, 1, 4], [0, 1, 6], [0, 1, 6]]
		rule, gain = best_split(rows, ['A', 'A', 'B', 'B'])
		assert (rule.feature, rule.threshold) == (2, 5.0)
		assert gain == pytest.approx(gini([2, 2]))

	def test_adjacent_floats_split_at_the_lower_value(self):
		a, b = 1 + 2 ** -52, 1 + 2 ** -51
		assert (a + b) / 2 == b
		rows = [[0, 1, a], [0, 1, a], [0, 1, b], [0, 1, b]]
		labels = ['A', 'A', 'B', 'B']
		rule, _ = best_split(rows, labels)
		assert (rule.feature, rule.threshold) == (2, a)
		tree = fit(dataset(rows, labels), Hyperparams(min_samples_split=2))
		assert tree.depth == 1
		assert tree.predict_many(np.array(rows)).tolist() == labels

	def test_pure_node_has_no_split(self):
		assert best_split([[1, 1, 1], [2, 2, 2]], ['A', 'A']) is None

	def test_ties_prefer_smaller_feature_then_threshold(self):
		# features 0 and 2 separate the classes equally well
		rows = [[1, 7, 10], [2, 7, 20], [3, 7, 30], [4, 7, 40]]
		rule, _ = best_split(rows, ['A', 'A', 'B', 'B'])
		assert (rule.feature, rule.threshold) == (0, 2.5)

	@pytest.mark.parametrize('batch', range(10))
	@pytest.mark.parametrize('criterion', ['gini', 'entropy'])
	def test_matches_exhaustive_oracle(self, batch, criterion):
		rng = np.random.default_rng(1000 + batch)
		for _ in range(50):
			rows, labels = random_dataset(rng)
			weights = np.ones(len(labels))
			if rng.random() < 0.5:
				per_class = {c: float(rng.uniform(0.2, 3.0)) for c in set(labels)}
				weights = np.array([per_class[c] for c in labels])
			expected = oracle(rows, labels, weights, criterion)
			found = best_split(rows, labels, weights, criterion)
			if expected is None:
				assert found is None
				continue
			rule, gain = found
			assert (rule.feature, rule.threshold) == expected[:2]
			assert gain == pytest.approx(expected[2], rel=1e-9, abs=1e-15)
			assert 0 < gain

class TestFit:
	def test_pure_dataset_is_one_leaf(self):
		tree = fit(dataset([[1, 1, -50], [2, 1, -40], [3, 2, -30]], ['A', 'A', 'A']), Hyperparams(min_samples_split=2))
		assert tree.node_count == 1 and tree.leaf_count == 1 and tree.depth == 0
		assert tree.predict([99, 9, 0]) == 'A'

	def test_xor(self):
		rows = [[0, 0, 1]] * 3 + [[1, 1, 1], [0, 1, 1], [1, 0, 1]]
		labels = ['A'] * 3 + ['A', 'B', 'B']
		tree = fit(dataset(rows, labels), Hyperparams(max_depth=2, min_samples_split=2))
		assert tree.depth == 2
		assert tree.predict_many(rows).tolist() == labels

	def test_boundary_goes_left(self):
		tree = fit(dataset([[0, 1, 4], [0, 1, 6]], ['A', 'B']), Hyperparams(min_samples_split=2))
		assert tree.root.rule.threshold == 5.0
		assert tree.predict([0, 1, 5.0]) == 'A'
		assert tree.predict([0, 1, 5.0000001]) == 'B'

	def test_leaf_ties_go_to_first_zone(self):
		tree = fit(dataset([[0, 1, 4], [0, 1, 4]], ['B', 'A']), Hyperparams(min_samples_split=2))
		assert tree.root.is_leaf
		assert tree.root.prediction == 'A'

	def test_empty(self):
		with pytest.raises(DatasetError):
			fit(LabeledDataset(np.empty((0, 3)), [], [], []), Hyperparams())

	@pytest.mark.parametrize('kwargs', [{'max_depth': 0}, {'min_samples_split': 1}, {'criterion': 'mse'}])
	def test_bad_hyperparams(self, kwargs):
		with pytest.raises(ConfigError):
			Hyperparams(**kwargs)

	@pytest.mark.parametrize('seed', range(15))
	def test_structural_audit(self, seed):
		rng = np.random.default_rng(seed)
		rows, labels = random_dataset(rng, n=400, k=6)
		ds = dataset(rows, labels)
		hp = Hyperparams(criterion='gini' if seed % 2 else 'entropy', max_depth=int(rng.integers(1, 9)), min_samples_split=int(rng.integers(2, 40)), class_weights=balanced_weights(ds.class_counts()))
		tree = fit(ds, hp)
		assert tree.depth <= hp.max_depth
		for _, node in tree.nodes():
			assert sum(node.tallies) > 0
			assert node.prediction == tree.classes[int(np.argmax(node.tallies))]
			if not node.is_leaf:
				assert node.n_samples >= hp.min_samples_split
				assert node.left.n_samples > 0 and node.right.n_samples > 0
				assert node.left.n_samples + node.right.n_samples == node.n_samples
		assert tree.node_count == 2 * tree.leaf_count - 1
		if tree.node_count > 1:
			assert sum(tree.feature_importances.values()) == pytest.approx(1.0)

	@pytest.mark.parametrize('scale', [0.5, 4.0])
	def test_weight_scaling_changes_nothing(self, scale):
		rng = np.random.default_rng(7)
		rows, labels = random_dataset(rng, n=300, k=5)
		ds = dataset(rows, labels)
		table = balanced_weights(ds.class_counts())
		scaled = ClassWeightTable(table.counts, {z: w * scale for z, w in table.weights.items()})
		a = fit(ds, Hyperparams(min_samples_split=2, class_weights=table))
		b = fit(ds, Hyperparams(min_samples_split=2, class_weights=scaled))
		assert [n.rule for _, n in a.nodes()] == [n.rule for _, n in b.nodes()]
		points = rng.uniform(rows.min(axis=0), rows.max(axis=0), size=(500, 3))
		assert a.predict_many(points).tolist() == b.predict_many(points).tolist()

	def test_deterministic(self):
		rows, labels = random_dataset(np.random.default_rng(3), n=300, k=8)
		ds = dataset(rows, labels)
		assert fit(ds, Hyperparams()) == fit(ds, Hyperparams())

class TestExport:
	@pytest.fixture(scope='class')
	def tree(self):
		rows, labels = random_dataset(np.random.default_rng(11), n=200, k=6)
		return fit(dataset(rows, labels), Hyperparams(min_samples_split=2, max_depth=6))

	@staticmethod
	def sample_points(tree, n=1000, seed=0):
		rng = np.random.default_rng(seed)
		rows = np.column_stack([
			rng.integers(0, 8, n) * 16_777_216 + 167_772_160 + rng.choice([0, 1, -1], n) * 8_388_608,
			rng.integers(0, 6, n),
			np.round(rng.normal(-55, 8, n), 3)
		]).astype(np.float64)
		# put some rows exactly on thresholds
		internal = [node for _, node in tree.nodes() if not node.is_leaf]
		for i, node in enumerate(internal):
			rows[i % n, node.rule.feature] = node.rule.threshold
		return rows

	def test_one_leaf(self):
		tree = fit(dataset([[1, 1, -50]], ['LabZoneA']), Hyperparams())
		lines = export_rules(tree).splitlines()
		assert len(lines) == 1
		assert lines[0].startswith('predict LabZoneA')

	def test_depth_one(self):
		tree = fit(dataset([[0, 1, 4], [0, 1, 6]], ['A', 'B']), Hyperparams(min_samples_split=2))
		assert export_rules(tree).splitlines() == [
			'if RSSI <= 5:',
			'  predict A  # tallies: A=1',
			'else predict B  # tallies: B=1'
		]

	def test_rules_round_trip(self, tree):
		rules = parse_rules(export_rules(tree))
		rows = self.sample_points(tree)
		assert [predict_rules(rules, row) for row in rows] == tree.predict_many(rows).tolist()

	def test_export_is_deterministic(self, tree):
		assert export_rules(tree) == export_rules(tree)

	def test_model_file_round_trip(self, tree, tmp_path):
		save_tree(tree, tmp_path / 'model.toml')
		loaded = load_tree(tmp_path / 'model.toml')
		assert loaded == tree
		rows = self.sample_points(tree, seed=1)
		assert loaded.predict_many(rows).tolist() == tree.predict_many(rows).tolist()
		assert tomli.loads(dump_tree(tree))['stats']['node_count'] == tree.node_count

	def test_bad_model_documents(self, tree):
		doc = tomli.loads(dump_tree(tree))
		with pytest.raises(ModelFormatError):
			tree_from_document({**doc, 'format': 'something-else'})
		with pytest.raises(ModelFormatError):
			tree_from_document({**doc, 'version': 99})
		with pytest.raises(ModelFormatError):
			tree_from_document({**doc, 'nodes': doc['nodes'][:1] + [{'id': 1}]})

	def test_malformed_rules(self):
		with pytest.raises(ModelFormatError):
			parse_rules('if Height <= 3:\n  predict A\nelse predict B\n')
		with pytest.raises(ModelFormatError):
			parse_rules('if RSSI <= 3:\n  predict A\n')
