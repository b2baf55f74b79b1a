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
Pipeline stages behind the command-line subcommands. Every stage reads and writes plain files in the run's output
directory; a full run is `generate -> train -> evaluate`, with the manifest written last.
"""

from collections import Counter
from dataclasses import dataclass
import logging
import os
from pathlib import Path
import platform
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy
from termcolor import cprint
import tomli
import tomli_w as toml
from yaspin import yaspin

from _utils import SPINNER, hash_artifact, mkdirp

from . import __version__
from .classweights import ClassWeightTable, balanced_weights, format_weight_table, write_weight_csv
from .config import RunConfig
from .dataset import LabeledDataset, SplitPair, drop_nulls, frame_to_reads, label_reads, read_reads_frame, session_split, stratified_subsample
from .dtree import DecisionTree, export_rules, fit, load_tree, save_tree
from .errors import DatasetError, ModelFormatError
from .floorplan import Floorplan, adjacency
from .metrics import CostMatrix, EvalReport, evaluate
from .propagation import generate_reads, write_reads_csv
from .report import REPORT_FILES, format_importances, format_summary, write_report, write_rssi_feeds

logger = logging.getLogger(__name__)

SPLIT_FORMAT = 'zonesim-split'
SPLIT_VERSION = 1

# the artifacts a run is verified by; everything else the run writes is supplementary
MANIFEST_ARTIFACTS = ('reads.csv', 'model.toml', 'split.toml', 'class_weights.csv', 'report.toml')

Pathlike = Union[str, Path]

def cmd_generate(cfg: RunConfig, out_dir: Optional[Pathlike] = None) -> Path:
	fp = cfg.load_floorplan()
	out = Path(out_dir) if out_dir is not None else cfg.out_path
	mkdirp(out)
	with yaspin(text='Simulating reads', spinner=SPINNER):
		reads = generate_reads(fp, cfg.sim_config())
		write_reads_csv(reads, out / 'reads.csv')

	cprint(f'🟢 {len(reads)} reads written to {out / "reads.csv"}', color='green')
	per_zone = Counter(fp.zone_of_container(r.container_id) for r in reads)
	for zone in fp.zone_labels:
		print(f'{zone:>16}: {per_zone.get(zone, 0)}')
	return out / 'reads.csv'

def load_labeled(fp: Floorplan, reads_path: Pathlike) -> LabeledDataset:
	frame = read_reads_frame(reads_path)
	kept = drop_nulls(frame)
	if len(kept) < len(frame):
		logger.warning(f'dropped {len(frame) - len(kept)} reads with missing fields')
	return label_reads(frame_to_reads(kept), fp)

@dataclass
class Prepared:
	labeled: LabeledDataset
	subsample: LabeledDataset
	weights: ClassWeightTable
	split: SplitPair

def _weight_table(cfg: RunConfig, counts: Dict[str, int]) -> ClassWeightTable:
	return ClassWeightTable.uniform(counts) if cfg.class_weight == 'uniform' else balanced_weights(counts)

def prepare(cfg: RunConfig, labeled: LabeledDataset) -> Prepared:
	"""Class weights, then the stratified subsample, then the session split."""
	weights = _weight_table(cfg, labeled.class_counts())
	subsample = stratified_subsample(labeled, cfg.subsample_target, cfg.seed, balanced=cfg.subsample_mode == 'balanced')
	if cfg.weight_mode == 'post-subsample':
		weights = _weight_table(cfg, subsample.class_counts())
	split = session_split(subsample, cfg.test_fraction, cfg.seed)
	return Prepared(labeled, subsample, weights, split)

def _split_document(cfg: RunConfig, split: SplitPair, reads_path: Path, split_dir: Path) -> Dict[str, Any]:
	return {
		'format': SPLIT_FORMAT,
		'version': SPLIT_VERSION,
		'reads': Path(os.path.relpath(reads_path.resolve(), split_dir.resolve())).as_posix(),
		'seed': cfg.seed,
		'subsample_target': cfg.subsample_target,
		'subsample_mode': cfg.subsample_mode,
		'test_fraction': cfg.test_fraction,
		'train_rows': len(split.train),
		'test_rows': len(split.test),
		'train_sessions': list(split.train_sessions),
		'test_sessions': list(split.test_sessions)
	}

@dataclass
class TrainResult:
	tree: DecisionTree
	prepared: Prepared
	files: List[Path]

def cmd_train(cfg: RunConfig, reads_path: Pathlike, out_dir: Optional[Pathlike] = None) -> TrainResult:
	fp = cfg.load_floorplan()
	out = Path(out_dir) if out_dir is not None else cfg.out_path
	mkdirp(out)
	reads_path = Path(reads_path)

	labeled = load_labeled(fp, reads_path)
	prepared = prepare(cfg, labeled)
	with yaspin(text='Fitting decision tree', spinner=SPINNER):
		tree = fit(prepared.split.train, cfg.hyperparams(prepared.weights))

	save_tree(tree, out / 'model.toml')
	with open(out / 'split.toml', 'wb') as f:
		toml.dump(_split_document(cfg, prepared.split, reads_path, out), f)
	write_weight_csv(prepared.weights, out / 'class_weights.csv')
	with open(out / 'class_weights.txt', 'w', encoding='utf-8') as f:
		f.write(format_weight_table(prepared.weights))
	with open(out / 'rules.txt', 'w', encoding='utf-8') as f:
		f.write(export_rules(tree))
	feeds = write_rssi_feeds(prepared.subsample, out)

	cprint(
		f'🟢 Tree fitted on {len(prepared.split.train)} rows: depth {tree.depth}, {tree.node_count} nodes, {tree.leaf_count} leaves',
		color='green'
	)
	print(format_importances(tree.feature_importances))
	print(format_weight_table(prepared.weights), end='')
	files = [out / name for name in ('model.toml', 'split.toml', 'class_weights.csv', 'class_weights.txt', 'rules.txt')]
	return TrainResult(tree, prepared, files + feeds)

def _load_split(split_path: Path) -> Dict[str, Any]:
	try:
		with open(split_path, 'rb') as f:
			doc = tomli.load(f)
	except tomli.TOMLDecodeError as e:
		raise ModelFormatError(f'{split_path}: malformed split manifest: {e}') from e
	if doc.get('format') != SPLIT_FORMAT or doc.get('version') != SPLIT_VERSION:
		raise ModelFormatError(f'{split_path}: not a split manifest')
	return doc

def fold_rows(fp: Floorplan, split_path: Pathlike, fold: str, reads_path: Optional[Pathlike] = None) -> LabeledDataset:
	"""Rebuilds the rows of one fold from a split manifest and the reads it was made from."""
	split_path = Path(split_path)
	doc = _load_split(split_path)
	reads = Path(reads_path) if reads_path is not None else split_path.parent / doc['reads']
	labeled = load_labeled(fp, reads)
	subsample = stratified_subsample(labeled, doc['subsample_target'], doc['seed'], balanced=doc['subsample_mode'] == 'balanced')
	sessions = doc[f'{fold}_sessions']
	rows = subsample.subset(np.flatnonzero(np.isin(subsample.sessions, sessions)))
	if len(rows) != doc[f'{fold}_rows']:
		raise DatasetError(f'{fold} fold has {len(rows)} rows, the split manifest recorded {doc[f"{fold}_rows"]}')
	return rows

def cmd_evaluate(
	cfg: RunConfig,
	model_path: Pathlike,
	split_path: Optional[Pathlike] = None,
	fold: str = 'test',
	reads_path: Optional[Pathlike] = None,
	out_dir: Optional[Pathlike] = None
) -> EvalReport:
	"""
	Scores a model on one fold of a split manifest or, without a manifest, on every row of `reads_path`. Writes the
	report files to the output directory.
	"""
	if fold not in ('test', 'train'):
		raise DatasetError(f'fold must be test or train, got {fold!r}')
	if split_path is None and reads_path is None:
		raise DatasetError('evaluation needs a split manifest or a reads file')
	fp = cfg.load_floorplan()
	out = Path(out_dir) if out_dir is not None else cfg.out_path
	mkdirp(out)

	tree = load_tree(model_path)
	if tree.classes != fp.zone_labels:
		raise ModelFormatError(f'model zones {list(tree.classes)} do not match the floorplan zones {list(fp.zone_labels)}')
	if split_path is not None:
		rows = fold_rows(fp, split_path, fold, reads_path)
	else:
		rows = load_labeled(fp, reads_path)
		fold = 'all'
	if len(rows) == 0:
		raise DatasetError(f'the {fold} fold is empty')

	adj = adjacency(fp)
	with yaspin(text=f'Evaluating on {len(rows)} rows', spinner=SPINNER):
		predictions = tree.predict_many(rows.rows)
		report = evaluate(
			rows.labels,
			predictions,
			adj,
			CostMatrix.from_adjacency(adj, cfg.adjacent_cost, cfg.non_adjacent_cost),
			resamples=cfg.bootstrap_resamples,
			level=cfg.ci_level,
			seed=cfg.seed
		)
	write_report(
		report,
		out,
		context={'model': Path(model_path).name, 'fold': fold, 'rows': len(rows)},
		feature_importances=tree.feature_importances
	)

	cprint(f'🟢 Evaluated {len(rows)} {fold} rows', color='green')
	print(format_summary(report))
	return report

def cmd_weights(cfg: RunConfig, reads_path: Pathlike, out_dir: Optional[Pathlike] = None) -> ClassWeightTable:
	fp = cfg.load_floorplan()
	out = Path(out_dir) if out_dir is not None else cfg.out_path
	mkdirp(out)
	table = balanced_weights(load_labeled(fp, reads_path).class_counts())
	write_weight_csv(table, out / 'class_weights.csv')
	with open(out / 'class_weights.txt', 'w', encoding='utf-8') as f:
		f.write(format_weight_table(table))
	print(format_weight_table(table), end='')
	return table

def _versions() -> Dict[str, str]:
	return {'zonesim': __version__, 'python': platform.python_version(), 'numpy': np.__version__, 'pandas': pd.__version__, 'scipy': scipy.__version__}

def _hashes(out: Path, paths: List[Path]) -> Dict[str, str]:
	return {p.relative_to(out).as_posix(): hash_artifact(p) for p in sorted(paths)}

def cmd_pipeline(cfg: RunConfig) -> Path:
	"""Runs every stage from one seed and writes `manifest.toml` with the config, versions and artifact digests."""
	out = cfg.out_path
	reads = cmd_generate(cfg, out)
	trained = cmd_train(cfg, reads, out)
	cmd_evaluate(cfg, out / 'model.toml', split_path=out / 'split.toml', out_dir=out)

	artifacts = [out / name for name in MANIFEST_ARTIFACTS]
	written = set(trained.files) | {out / name for name in REPORT_FILES}
	manifest = {
		'seed': cfg.seed,
		'config': cfg.to_document(),
		'versions': _versions(),
		'artifacts': _hashes(out, artifacts),
		'supplementary': _hashes(out, sorted(written - set(artifacts)))
	}
	with open(out / 'manifest.toml', 'wb') as f:
		toml.dump(manifest, f)
	cprint(f'✨ Run complete! {out / "manifest.toml"}', color='light_cyan', attrs=['bold'])
	return out / 'manifest.toml'

def verify_manifest(manifest_path: Pathlike) -> List[Tuple[str, str, str]]:
	"""Returns `(artifact, recorded, actual)` for every artifact whose digest no longer matches."""
	manifest_path = Path(manifest_path)
	with open(manifest_path, 'rb') as f:
		manifest = tomli.load(f)
	mismatches = []
	for table in ('artifacts', 'supplementary'):
		for name, digest in manifest.get(table, {}).items():
			path = manifest_path.parent / name
			actual = hash_artifact(path) if path.exists() else 'missing'
			if actual != digest:
				mismatches.append((name, digest, actual))
	return mismatches
