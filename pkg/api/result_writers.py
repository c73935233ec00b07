'''
Result files: CSV tables, gnuplot scripts and the oracle report.

Numbers are written with repr() so every float keeps full precision and the
'.' decimal separator regardless of locale.
'''
import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ("episode", "sum_rate", "moving_avg_100")
SWEEP_COLUMNS = ("p_stay", "scheme", "replica", "avg_sum_rate")


def _num(x):
    return repr(float(x))


def moving_average(values, window=100):
    """Trailing mean over the last `window` entries (fewer at the start)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    v = np.asarray(values, dtype=np.float64)
    return [float(np.mean(v[max(0, i - window + 1): i + 1])) for i in range(v.size)]


def write_convergence_csv(curve, path):
    path = Path(path)
    averages = moving_average(curve, 100)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CONVERGENCE_COLUMNS)
        for episode, (rate, avg) in enumerate(zip(curve, averages), start=1):
            writer.writerow([episode, _num(rate), _num(avg)])
    logger.info("Convergence curve (%d episodes) written to %s", len(curve), path)
    return path


def write_sweep_csv(records, path):
    """One row per (p_stay, scheme, replica), sorted so job order never shows."""
    path = Path(path)
    rows = sorted(records, key=lambda r: (r.p_stay, r.scheme, r.replica))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([_num(r.p_stay), r.scheme, r.replica, _num(r.avg_sum_rate)])
    logger.info("Sweep table (%d rows) written to %s", len(rows), path)
    return path


def write_run_records(records, path):
    path = Path(path)
    rows = sorted(records, key=lambda r: (r.p_stay, r.scheme, r.replica))
    path.write_text(json.dumps([asdict(r) for r in rows], indent=2), encoding="utf-8")
    return path


def write_convergence_plot_script(csv_name, path):
    path = Path(path)
    path.write_text(
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set xlabel 'Episode'\n"
        "set ylabel 'Sum rate (bits/s/Hz)'\n"
        f"plot '{csv_name}' using 1:2 with lines lc rgb '#bbbbbb', \\\n"
        f"     '{csv_name}' using 1:3 with lines lw 2\n",
        encoding="utf-8",
    )
    return path


def write_sweep_plot_script(csv_name, schemes, path):
    # smooth unique averages the replicas of each p_stay
    path = Path(path)
    plots = ",\\\n     ".join(
        f"'{csv_name}' using 1:(strcol(2) eq '{s}' ? $4 : NaN) smooth unique with linespoints title '{s}'"
        for s in schemes
    )
    path.write_text(
        "set datafile separator ','\n"
        "set xlabel 'Probability of staying in the same SNR level'\n"
        "set ylabel 'Average sum rate (bits/s/Hz)'\n"
        f"plot {plots}\n",
        encoding="utf-8",
    )
    return path


def format_q_table(states, q_values, label):
    lines = [f"{label}:"]
    for state, row in zip(states, q_values):
        cells = " ".join(f"{q:10.4f}" for q in row)
        lines.append(f"  levels={state.levels} cache={state.cache}  {cells}")
    return lines


def write_oracle_report(lines, path):
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Oracle report written to %s", path)
    return path
