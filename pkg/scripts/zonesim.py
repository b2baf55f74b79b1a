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

from argparse import ArgumentParser
import os
from pathlib import Path
import sys
from typing import List, Optional

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

from termcolor import cprint

from _utils import install_logging
from _zonesim import ConfigError, FloorplanError, ModelFormatError, ZoneSimError, __version__
from _zonesim.config import CLASS_WEIGHTS, SUBSAMPLE_MODES, WEIGHT_MODES, RunConfig, config_from_mapping, load_run_config
from _zonesim.dtree import CRITERIA
from _zonesim.pipeline import cmd_evaluate, cmd_generate, cmd_pipeline, cmd_train, cmd_weights

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

def _add_run_flags(parser: ArgumentParser):
	# defaults stay None so that only explicit flags override a --config file
	parser.add_argument('--config', type=Path, help='TOML run config; explicit flags override its values.')
	parser.add_argument('--floorplan', type=str, help='Floorplan TOML document. Defaults to the bundled 12-zone floorplan.')
	parser.add_argument('--out-dir', dest='out_dir', type=str, help='Output directory (default: out).')
	parser.add_argument('-v', '--verbose', action='store_true', help='Log debug output.')

def _add_sim_flags(parser: ArgumentParser):
	parser.add_argument('--sessions', type=int, help='Acquisition sessions to simulate (default: 20).')
	parser.add_argument('--reads-per-tag-per-session', dest='reads_per_tag_per_session', type=int, help='Inventory rounds per session (default: 5).')
	parser.add_argument('--p0', type=float, help='Received power at the reference distance, in dBm (default: -30).')
	parser.add_argument('--d0', type=float, help='Reference distance in meters (default: 1).')
	parser.add_argument('--eta', type=float, help='Path-loss exponent (default: 2.2).')
	parser.add_argument('--sigma', type=float, help='Shadowing standard deviation in dB (default: 4).')
	parser.add_argument('--jobs', type=int, help='Worker threads for read generation. Output does not depend on it.')

def _add_train_flags(parser: ArgumentParser):
	parser.add_argument('--subsample-target', dest='subsample_target', type=int, help='Rows kept by the stratified subsample (default: 5000).')
	parser.add_argument('--subsample-mode', dest='subsample_mode', choices=SUBSAMPLE_MODES, help='Per-zone quotas proportional to zone size, or equal.')
	parser.add_argument('--test-fraction', dest='test_fraction', type=float, help='Share of rows held out by whole sessions (default: 0.1).')
	parser.add_argument('--criterion', choices=CRITERIA, help='Split impurity (default: gini).')
	parser.add_argument('--max-depth', dest='max_depth', type=int, help='Maximum tree depth (default: 8).')
	parser.add_argument('--min-samples-split', dest='min_samples_split', type=int, help='Smallest node that may be split (default: 20).')
	parser.add_argument('--class-weight', dest='class_weight', choices=CLASS_WEIGHTS, help='Weight rows by balanced class weights, or not at all.')
	parser.add_argument('--weight-mode', dest='weight_mode', choices=WEIGHT_MODES, help='Compute class weights before or after subsampling.')

def _add_eval_flags(parser: ArgumentParser):
	parser.add_argument('--bootstrap-resamples', dest='bootstrap_resamples', type=int, help='Bootstrap resamples per interval; 0 disables intervals (default: 1000).')
	parser.add_argument('--ci-level', dest='ci_level', type=float, help='Confidence level of the intervals (default: 0.95).')
	parser.add_argument('--adjacent-cost', dest='adjacent_cost', type=float, help='Cost of predicting a zone bordering the true zone (default: 1).')
	parser.add_argument('--non-adjacent-cost', dest='non_adjacent_cost', type=float, help='Cost of predicting any other wrong zone (default: 5).')

def build_parser() -> ArgumentParser:
	parser = ArgumentParser(prog='zonesim', description='Simulate RFID reads over a zoned floorplan, train a zone classifier and evaluate it.')
	parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
	parser.add_argument('--seed', type=int, help='Seed for every random draw of the run (default: 42).')
	sub = parser.add_subparsers(dest='command', required=True)

	generate = sub.add_parser('generate', help='Simulate reads and write reads.csv.')
	_add_run_flags(generate)
	_add_sim_flags(generate)

	train = sub.add_parser('train', help='Label, subsample, split and fit a tree.')
	train.add_argument('reads', type=Path, help='Reads CSV.')
	_add_run_flags(train)
	_add_train_flags(train)

	evaluate = sub.add_parser('evaluate', help='Score a model on a held-out fold or on external reads.')
	evaluate.add_argument('--model', type=Path, required=True, help='Model file written by train.')
	evaluate.add_argument('--split', type=Path, help='Split manifest written by train.')
	evaluate.add_argument('--fold', choices=('test', 'train'), default='test', help='Fold of the split manifest to score (default: test).')
	evaluate.add_argument('--reads', type=Path, help='Reads CSV. Overrides the file named in the split manifest; without --split every row is scored.')
	_add_run_flags(evaluate)
	_add_eval_flags(evaluate)

	pipeline = sub.add_parser('pipeline', help='Run every stage and write a manifest.')
	_add_run_flags(pipeline)
	_add_sim_flags(pipeline)
	_add_train_flags(pipeline)
	_add_eval_flags(pipeline)

	weights = sub.add_parser('weights', help='Print balanced class weights of a reads CSV.')
	weights.add_argument('reads', type=Path, help='Reads CSV.')
	_add_run_flags(weights)
	return parser

_NOT_CONFIG = {'command', 'config', 'verbose', 'reads', 'model', 'split', 'fold'}

def resolve_config(args) -> RunConfig:
	base = load_run_config(args.config) if args.config is not None else RunConfig()
	overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
	return config_from_mapping(overrides, base)

def main(argv: Optional[List[str]] = None) -> int:
	parser = build_parser()
	try:
		args = parser.parse_args(argv)
	except SystemExit as e:
		return e.code if isinstance(e.code, int) else EXIT_USAGE
	install_logging(args.verbose)

	try:
		cfg = resolve_config(args)
		if args.command == 'generate':
			cmd_generate(cfg)
		elif args.command == 'train':
			cmd_train(cfg, args.reads)
		elif args.command == 'evaluate':
			cmd_evaluate(cfg, args.model, split_path=args.split, fold=args.fold, reads_path=args.reads)
		elif args.command == 'pipeline':
			cmd_pipeline(cfg)
		elif args.command == 'weights':
			cmd_weights(cfg, args.reads)
	except (OSError, ConfigError, FloorplanError, ModelFormatError) as e:
		cprint(f'error: {e}', color='red', file=sys.stderr)
		return EXIT_USAGE
	except ZoneSimError as e:
		cprint(f'error: {e}', color='red', file=sys.stderr)
		return EXIT_RUNTIME
	return EXIT_OK

if __name__ == '__main__':
	sys.exit(main())
