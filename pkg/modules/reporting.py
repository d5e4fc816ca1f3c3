"""
Run reports
Per-target rows, accuracy aggregates with 95% confidence intervals, and the
report.csv / summary.json / auxiliary CSV files of an experiment run
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from modules.storage import write_csv_report, write_json_report
from modules.utils import accuracy_ci, format_duration, timestamp

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@dataclass
class RunReport:
    """
    rows:       one dict per target (or cell / record), written to report.csv
    aggregates: accuracy rows {group..., method, accuracy, ci95, count}
    aux:        name -> rows for auxiliary CSVs (grid cells, sweeps, breakdowns)
    """
    experiment: str
    rows: list
    aggregates: list = field(default_factory=list)
    aux: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_clock: float = 0.0


def aggregate(rows, methods, by=(), correct_key='correct_{method}'):
    """
    Accuracy per method (and per value of the `by` columns) with a normal-approximation CI

    Rows where the correctness entry is missing (None/NaN) are left out.
    """
    if not rows:
        return []
    frame = pd.DataFrame(rows)
    groups = [((), frame)] if not by else frame.groupby(list(by), sort=True)
    results = []
    for key, group in groups:
        key = key if isinstance(key, tuple) else (key,)
        for method in methods:
            column = correct_key.format(method=method)
            if column not in group:
                continue
            values = group[column].dropna().astype(bool)
            if values.empty:
                continue
            accuracy, half = accuracy_ci(values.to_numpy())
            row = dict(zip(by, key))
            row.update({'method': method, 'accuracy': accuracy, 'ci95': half, 'count': int(values.size)})
            results.append(row)
    return results


def mean_with_ci(values):
    """Mean and 1.96 * standard error of a real-valued metric"""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return float('nan'), float('nan')
    half = 1.96 * float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), half


def write_report(report, out_dir, config=None):
    """
    report.csv (deterministic, no timing), summary.json (aggregates, config, wall clock)
    and one CSV per auxiliary table; returns the written paths
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {'report': out_dir / 'report.csv', 'summary': out_dir / 'summary.json'}
    write_csv_report(report.rows, paths['report'])
    for name, rows in sorted(report.aux.items()):
        paths[name] = out_dir / f"{name}.csv"
        write_csv_report(rows, paths[name])
    summary = {
        'experiment': report.experiment,
        'aggregates': report.aggregates,
        'extra': report.extra,
        'config': config or {},
        'wall_clock': format_duration(report.wall_clock),
        'wall_clock_seconds': report.wall_clock,
        'finished_at': timestamp(),
    }
    write_json_report(summary, paths['summary'])
    return paths


def print_summary(report):
    """Console banner with the aggregate accuracies"""
    print("=" * 60)
    print(f"CorrLeak: {report.experiment}")
    print("=" * 60)
    for row in report.aggregates:
        group = ", ".join(f"{k}={v}" for k, v in row.items() if k not in ('method', 'accuracy', 'ci95', 'count'))
        prefix = f"[{group}] " if group else ""
        print(f"  {prefix}{row['method']:<16} {row['accuracy']:.3f} ± {row['ci95']:.3f}  (n={row['count']})")
    for key, value in report.extra.items():
        print(f"  {key}: {value}")
    print(f"  wall clock: {format_duration(report.wall_clock)}")
    print()
