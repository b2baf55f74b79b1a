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
Evaluation artifacts: the TOML report, its CSV tables, and plot-ready CSVs (RSSI summaries per zone, 1 dB RSSI
histograms, reader/RSSI scatter points, long-form confusion heatmap). No images are rendered.
"""

import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import tomli_w as toml

from .dataset import LabeledDataset, decode_reader_ip
from .metrics import EvalReport

REPORT_FILES = (
	'report.toml',
	'confusion.csv',
	'per_class.csv',
	'aggregate.csv',
	'adjacency_breakdown.csv',
	'confusion_heatmap.csv'
)
FEED_FILES = ('rssi_by_zone.csv', 'rssi_histogram.csv', 'reader_rssi.csv')

def _fmt(x: float) -> str:
	return f'{x:.6f}'

def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]):
	pd.DataFrame(list(rows), columns=list(header)).to_csv(path, index=False, lineterminator='\n', encoding='utf-8')

def report_to_document(
	report: EvalReport,
	context: Optional[Mapping[str, Any]] = None,
	feature_importances: Optional[Mapping[str, float]] = None
) -> Dict[str, Any]:
	agg = report.aggregates
	doc: Dict[str, Any] = {
		'summary': {
			'n': report.n,
			'accuracy': report.accuracy,
			'macro_f1': agg.macro_f1,
			'micro_precision': agg.micro_precision,
			'micro_recall': agg.micro_recall,
			'micro_f1': agg.micro_f1,
			'adjacency_accuracy': report.adjacency_accuracy,
			'risk': report.risk,
			'non_adjacent_error_rate': report.breakdown.non_adjacent_rate
		}
	}
	if context:
		doc['context'] = dict(context)
	if feature_importances:
		doc['feature_importances'] = {name: float(value) for name, value in feature_importances.items()}
	if report.intervals:
		doc['intervals'] = {
			name: {'point': i.point, 'lower': i.lower, 'upper': i.upper, 'level': i.level}
			for name, i in report.intervals.items()
		}
	support = report.confusion.support
	doc['zones'] = {
		zone: {
			'support': int(support[k]),
			'precision': float(report.scores.precision[k]),
			'recall': float(report.scores.recall[k]),
			'f1': float(report.scores.f1[k]),
			'exact': int(report.breakdown.exact[k]),
			'adjacent_miss': int(report.breakdown.adjacent[k]),
			'non_adjacent_miss': int(report.breakdown.non_adjacent[k])
		}
		for k, zone in enumerate(report.zones)
	}
	doc['confusion'] = {
		'zones': list(report.zones),
		'counts': [[int(c) for c in row] for row in report.confusion.counts]
	}
	return doc

def write_report(
	report: EvalReport,
	out_dir: Path,
	context: Optional[Mapping[str, Any]] = None,
	feature_importances: Optional[Mapping[str, float]] = None
) -> List[Path]:
	zones = report.zones
	counts = report.confusion.counts
	agg = report.aggregates

	with open(out_dir / 'report.toml', 'wb') as f:
		toml.dump(report_to_document(report, context, feature_importances), f)

	_write_csv(out_dir / 'confusion.csv', ['Zone', *zones], ([z, *(int(c) for c in counts[i])] for i, z in enumerate(zones)))

	scores = report.scores
	_write_csv(
		out_dir / 'per_class.csv',
		['Zone', 'Support', 'Precision', 'Recall', 'F1'],
		(
			[z, int(report.confusion.support[k]), _fmt(scores.precision[k]), _fmt(scores.recall[k]), _fmt(scores.f1[k])]
			for k, z in enumerate(zones)
		)
	)

	rows = []
	for name, value in (
		('accuracy', report.accuracy),
		('macro_f1', agg.macro_f1),
		('micro_precision', agg.micro_precision),
		('micro_recall', agg.micro_recall),
		('micro_f1', agg.micro_f1),
		('adjacency_accuracy', report.adjacency_accuracy),
		('risk', report.risk)
	):
		interval = report.intervals.get(name)
		if interval is None:
			rows.append([name, _fmt(value), '', '', ''])
		else:
			rows.append([name, _fmt(value), _fmt(interval.lower), _fmt(interval.upper), interval.level])
	_write_csv(out_dir / 'aggregate.csv', ['Metric', 'Value', 'CILower', 'CIUpper', 'CILevel'], rows)

	b = report.breakdown
	_write_csv(
		out_dir / 'adjacency_breakdown.csv',
		['Zone', 'Exact', 'AdjacentMiss', 'NonAdjacentMiss'],
		([z, int(b.exact[k]), int(b.adjacent[k]), int(b.non_adjacent[k])] for k, z in enumerate(zones))
	)

	support = report.confusion.support
	_write_csv(
		out_dir / 'confusion_heatmap.csv',
		['TrueZone', 'PredictedZone', 'Count', 'RowShare'],
		(
			[zt, zp, int(counts[i, j]), _fmt(counts[i, j] / support[i] if support[i] else 0.0)]
			for i, zt in enumerate(zones) for j, zp in enumerate(zones)
		)
	)
	return [out_dir / name for name in REPORT_FILES]

def write_rssi_feeds(ds: LabeledDataset, out_dir: Path) -> List[Path]:
	"""Per-zone RSSI box summaries and 1 dB histograms, plus every row as a (reader, antenna, RSSI, zone) point."""
	rssi = ds.rows[:, 2]
	summary, histogram = [], []
	for zone in ds.zones:
		values = rssi[ds.labels == zone]
		if len(values) == 0:
			summary.append([zone, 0, '', '', '', '', '', ''])
			continue
		q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
		summary.append([zone, len(values), _fmt(values.min()), _fmt(q1), _fmt(median), _fmt(q3), _fmt(values.max()), _fmt(values.mean())])

		low, high = math.floor(values.min()), math.floor(values.max()) + 1
		counts, edges = np.histogram(values, bins=np.arange(low, high + 1, dtype=np.float64))
		histogram.extend([zone, int(edges[i]), int(edges[i + 1]), int(c)] for i, c in enumerate(counts))

	_write_csv(out_dir / 'rssi_by_zone.csv', ['Zone', 'Count', 'Min', 'Q1', 'Median', 'Q3', 'Max', 'Mean'], summary)
	_write_csv(out_dir / 'rssi_histogram.csv', ['Zone', 'BinLow', 'BinHigh', 'Count'], histogram)
	_write_csv(
		out_dir / 'reader_rssi.csv',
		['ReaderIP', 'Antenna', 'RSSI', 'Zone'],
		([decode_reader_ip(row[0]), int(row[1]), f'{row[2]:.2f}', label] for row, label in zip(ds.rows, ds.labels.tolist()))
	)
	return [out_dir / name for name in FEED_FILES]

def format_summary(report: EvalReport) -> str:
	agg = report.aggregates
	lines = []
	for key, name, value in (
		('accuracy', 'accuracy', report.accuracy),
		('macro_f1', 'macro-F1', agg.macro_f1),
		('micro_f1', 'micro-F1', agg.micro_f1),
		('adjacency_accuracy', 'adjacency-aware accuracy', report.adjacency_accuracy),
		('risk', 'risk', report.risk)
	):
		line = f'{name:>26}: {value:.4f}'
		interval = report.intervals.get(key)
		if interval is not None:
			line += f'  [{interval.lower:.4f}, {interval.upper:.4f}] @ {interval.level:g}'
		lines.append(line)
	return '\n'.join(lines)

def format_importances(importances: Mapping[str, float]) -> str:
	ranked = sorted(importances.items(), key=lambda item: (-item[1], item[0]))
	return '\n'.join(f'{name:>26}: {value:.4f}' for name, value in ranked)
