import os

import numpy as np
import pandas as pd
import pytest
import tomli

from _zonesim.config import RunConfig, load_run_config
from _zonesim.dtree import export_rules, load_tree, parse_rules, predict_rules
from _zonesim.errors import ConfigError
from _zonesim.pipeline import MANIFEST_ARTIFACTS, cmd_evaluate, cmd_generate, cmd_pipeline, cmd_train, fold_rows, verify_manifest
from _zonesim.report import REPORT_FILES
from zonesim import main

def read_toml(path):
	with open(path, 'rb') as f:
		return tomli.load(f)

@pytest.fixture
def two_zone(fixtures_dir):
	return os.path.join(fixtures_dir, 'two-zone.toml')

class TestCli:
	def test_missing_floorplan_is_a_usage_error(self, tmp_path, capsys):
		code = main(['generate', '--floorplan', str(tmp_path / 'nope.toml'), '--out-dir', str(tmp_path)])
		assert code == 2
		assert 'error' in capsys.readouterr().err

	def test_bad_flags(self, tmp_path):
		assert main(['train']) == 2
		assert main(['pipeline', '--criterion', 'chaos']) == 2
		assert main(['pipeline', '--test-fraction', '1.5', '--out-dir', str(tmp_path)]) == 2
		assert main(['--seed', '-3', 'generate', '--out-dir', str(tmp_path)]) == 2

	def test_oversized_subsample_names_both_numbers(self, two_zone, tmp_path, capsys):
		code = main([
			'pipeline',
			'--floorplan', two_zone,
			'--sessions', '2',
			'--subsample-target', '1000',
			'--out-dir', str(tmp_path)
		])
		assert code == 1
		# 2 sessions x 3 tags x 2 antennas x 5 rounds, nothing under the floors
		assert 'subsample target 1000 exceeds dataset size 60' in capsys.readouterr().err

	def test_generate_is_byte_reproducible(self, two_zone, tmp_path):
		for name in ('a', 'b'):
			assert main(['--seed', '7', 'generate', '--floorplan', two_zone, '--sessions', '3', '--out-dir', str(tmp_path / name)]) == 0
		assert (tmp_path / 'a' / 'reads.csv').read_bytes() == (tmp_path / 'b' / 'reads.csv').read_bytes()

	def test_train_and_evaluate_stages(self, two_zone, tmp_path, capsys):
		args = ['--floorplan', two_zone, '--out-dir', str(tmp_path)]
		assert main(['generate', '--sessions', '4', *args]) == 0
		assert main(['train', str(tmp_path / 'reads.csv'), '--subsample-target', '80', '--min-samples-split', '2', *args]) == 0
		console = capsys.readouterr().out
		for name in ('ReaderIP', 'Antenna', 'RSSI'):
			assert f'{name}: ' in console
		for name in ('model.toml', 'split.toml', 'class_weights.csv', 'class_weights.txt', 'rules.txt'):
			assert (tmp_path / name).exists()
		assert main(['evaluate', '--model', str(tmp_path / 'model.toml'), '--split', str(tmp_path / 'split.toml'), '--bootstrap-resamples', '20', *args]) == 0
		assert read_toml(tmp_path / 'report.toml')['context']['fold'] == 'test'

	def test_model_zones_must_match_the_floorplan(self, two_zone, tmp_path):
		args = ['--floorplan', two_zone, '--out-dir', str(tmp_path)]
		assert main(['generate', '--sessions', '2', *args]) == 0
		assert main(['train', str(tmp_path / 'reads.csv'), '--subsample-target', '40', *args]) == 0
		code = main(['evaluate', '--model', str(tmp_path / 'model.toml'), '--reads', str(tmp_path / 'reads.csv'), '--out-dir', str(tmp_path)])
		assert code == 2

class TestConfig:
	def test_relative_floorplan_resolves_against_the_config(self, fixtures_dir):
		cfg = load_run_config(os.path.join(fixtures_dir, 'noiseless-run.toml'))
		assert cfg.floorplan_path.name == 'two-zone.toml'
		assert cfg.floorplan_path.exists()
		assert cfg.sigma == 0.0 and cfg.sessions == 6

	def test_config_errors(self, tmp_path):
		path = tmp_path / 'bad.toml'
		path.write_text('sessions = "many"\n')
		with pytest.raises(ConfigError):
			load_run_config(path)
		path.write_text('colour = "blue"\n')
		with pytest.raises(ConfigError, match='colour'):
			load_run_config(path)
		with pytest.raises(ConfigError):
			RunConfig(subsample_mode='stratified')

	def test_flags_override_the_config_file(self, fixtures_dir, tmp_path):
		config = os.path.join(fixtures_dir, 'noiseless-run.toml')
		assert main(['--seed', '5', 'generate', '--config', config, '--sessions', '2', '--out-dir', str(tmp_path)]) == 0
		with open(tmp_path / 'reads.csv') as f:
			# header plus 2 sessions x 3 tags x 2 antennas x 4 rounds
			assert sum(1 for _ in f) == 1 + 48

class TestStages:
	@pytest.fixture
	def small(self, two_zone, tmp_path):
		cfg = RunConfig(floorplan=two_zone, sessions=6, subsample_target=150, min_samples_split=2, bootstrap_resamples=50, out_dir=str(tmp_path))
		reads = cmd_generate(cfg)
		return cfg, reads

	def test_model_file_round_trip(self, small):
		cfg, reads = small
		result = cmd_train(cfg, reads)
		assert load_tree(cfg.out_path / 'model.toml') == result.tree
		assert result.tree.classes == ('East', 'West')

	def test_post_subsample_balanced_weights(self, small):
		cfg, reads = small
		balanced = RunConfig(**{**cfg.to_document(), 'subsample_mode': 'balanced', 'weight_mode': 'post-subsample'})
		result = cmd_train(balanced, reads)
		assert result.prepared.subsample.class_counts() == {'West': 75, 'East': 75}
		assert all(w == pytest.approx(1.0) for w in result.prepared.weights.weights.values())

	def test_uniform_weights_are_what_gets_written(self, small):
		cfg, reads = small
		uniform = RunConfig(**{**cfg.to_document(), 'class_weight': 'uniform'})
		result = cmd_train(uniform, reads)
		assert result.prepared.weights.counts == result.prepared.labeled.class_counts()
		assert result.tree.hyperparams.class_weights is None
		frame = pd.read_csv(cfg.out_path / 'class_weights.csv')
		assert frame['Weight'].tolist() == [1.0, 1.0]

	def test_folds_rebuild_from_the_split_manifest(self, small):
		cfg, reads = small
		result = cmd_train(cfg, reads)
		fp = cfg.load_floorplan()
		test = fold_rows(fp, cfg.out_path / 'split.toml', 'test')
		assert np.array_equal(test.rows, result.prepared.split.test.rows)
		assert len(fold_rows(fp, cfg.out_path / 'split.toml', 'train')) == len(result.prepared.split.train)

	def test_noiseless_run_is_nearly_perfect(self, fixtures_dir, tmp_path):
		cfg = load_run_config(os.path.join(fixtures_dir, 'noiseless-run.toml'))
		cfg = RunConfig(**{**cfg.to_document(), 'out_dir': str(tmp_path)})
		cmd_pipeline(cfg)
		assert read_toml(tmp_path / 'report.toml')['summary']['accuracy'] >= 0.95

class TestManifest:
	def test_artifacts(self, default_run):
		_, out = default_run
		manifest = read_toml(out / 'manifest.toml')
		assert sorted(manifest['artifacts']) == sorted(MANIFEST_ARTIFACTS)
		assert 'rules.txt' in manifest['supplementary']
		assert manifest['seed'] == 42
		assert manifest['config']['subsample_target'] == 5000
		assert verify_manifest(out / 'manifest.toml') == []

	def test_tampering_is_detected(self, two_zone, tmp_path):
		cfg = RunConfig(floorplan=two_zone, sessions=4, subsample_target=60, bootstrap_resamples=10, out_dir=str(tmp_path))
		manifest = cmd_pipeline(cfg)
		with open(tmp_path / 'rules.txt', 'a') as f:
			f.write('# edited\n')
		assert [name for name, _, _ in verify_manifest(manifest)] == ['rules.txt']

	def test_same_size_edit_inside_a_large_file_is_detected(self, two_zone, tmp_path):
		cfg = RunConfig(floorplan=two_zone, sessions=200, subsample_target=60, bootstrap_resamples=10, out_dir=str(tmp_path))
		manifest = cmd_pipeline(cfg)
		reads = tmp_path / 'reads.csv'
		data = bytearray(reads.read_bytes())
		assert len(data) > 128 * 1024
		i = len(data) // 2
		while not chr(data[i]).isdigit():
			i += 1
		data[i] = ord('1') if data[i] != ord('1') else ord('2')
		reads.write_bytes(bytes(data))
		assert len(reads.read_bytes()) == len(data)
		assert [name for name, _, _ in verify_manifest(manifest)] == ['reads.csv']

	def test_reruns_reproduce_every_artifact(self, two_zone, tmp_path):
		digests = []
		for name in ('a', 'b'):
			cfg = RunConfig(floorplan=two_zone, sessions=4, subsample_target=60, bootstrap_resamples=10, out_dir=str(tmp_path / name))
			digests.append(read_toml(cmd_pipeline(cfg)))
		assert digests[0]['artifacts'] == digests[1]['artifacts']
		assert digests[0]['supplementary'] == digests[1]['supplementary']

class TestDefaultRun:
	@pytest.fixture(scope='class')
	def report(self, default_run):
		return read_toml(default_run[1] / 'report.toml')

	def test_beats_chance_threefold(self, report):
		assert report['summary']['accuracy'] > 3 / 12

	def test_adjacency_credit(self, report):
		summary = report['summary']
		assert summary['adjacency_accuracy'] >= summary['accuracy'] + 0.10

	def test_zone_spread(self, report, lab):
		f1 = {zone: scores['f1'] for zone, scores in report['zones'].items()}
		assert max(f1.values()) - min(f1.values()) >= 0.25
		per_zone = lab.containers_per_zone()
		sparsest = min(per_zone, key=per_zone.get)
		assert sparsest in sorted(f1, key=f1.get)[:2]

	def test_feature_importances(self, report, default_run):
		model = read_toml(default_run[1] / 'model.toml')
		assert report['feature_importances'] == model['feature_importances']
		assert sum(report['feature_importances'].values()) == pytest.approx(1.0)

	def test_bootstrap_interval(self, report):
		assert report['context']['rows'] >= 400
		interval = report['intervals']['accuracy']
		assert interval['lower'] <= interval['point'] <= interval['upper']
		assert interval['point'] == report['summary']['accuracy']
		assert interval['upper'] - interval['lower'] < 0.15

	def test_tree_shape(self, default_run):
		cfg, out = default_run
		tree = load_tree(out / 'model.toml')
		assert tree.depth <= cfg.max_depth
		for _, node in tree.nodes():
			if not node.is_leaf:
				assert node.n_samples >= cfg.min_samples_split

	def test_rules_agree_with_the_model(self, default_run, lab):
		_, out = default_run
		tree = load_tree(out / 'model.toml')
		rules = parse_rules((out / 'rules.txt').read_text())
		assert export_rules(tree) == (out / 'rules.txt').read_text()
		test = fold_rows(lab, out / 'split.toml', 'test')
		predictions = tree.predict_many(test.rows)
		assert [predict_rules(rules, row) for row in test.rows] == predictions.tolist()

	def test_train_fold_scores_higher(self, default_run, tmp_path):
		cfg, out = default_run
		scores = {}
		for fold in ('train', 'test'):
			report = cmd_evaluate(cfg, out / 'model.toml', split_path=out / 'split.toml', fold=fold, out_dir=tmp_path / fold)
			scores[fold] = report.accuracy
		assert scores['train'] > scores['test']

	def test_evaluation_is_reproducible(self, default_run, tmp_path):
		cfg, out = default_run
		cmd_evaluate(cfg, out / 'model.toml', split_path=out / 'split.toml', out_dir=tmp_path)
		for name in REPORT_FILES:
			assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name
