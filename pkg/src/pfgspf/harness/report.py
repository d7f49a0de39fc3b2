"""Rebuild aggregates, tables and G_eff series from a results directory."""

import csv
import io
import json
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from ..metrics import TrialRecord, mse_table, omat_table
from .config import parse_config
from .runner import (
    AGGREGATE_COLUMNS,
    CAMPAIGN_FILE,
    GEFF_COLUMNS,
    SUMMARY_FILE,
    TRIALS_FILE,
    Trial,
    _agg_cell,
    aggregate_rows,
    geff_rows,
)


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise InvalidArgument(f"{path} is empty")
    return rows[0], rows[1:]


def load_results(directory):
    """Returns ``(campaign, trials)`` reconstructed from the CSV files."""
    d = Path(directory)
    try:
        meta = json.loads((d / CAMPAIGN_FILE).read_text())
    except (OSError, ValueError) as exc:
        raise InvalidArgument(f"{d} does not hold campaign results ({CAMPAIGN_FILE})") from exc
    campaign = parse_config(meta["config"])
    header, body = _read_csv(d / TRIALS_FILE)
    n_est = sum(h.startswith("est") for h in header)
    series = {}
    for row in body:
        key = (int(row[0]), int(row[1]), int(row[2]))
        series.setdefault(key, []).append(row)
    _, summary = _read_csv(d / SUMMARY_FILE)
    trials = []
    for row in summary:
        cell_id, k, r, status = int(row[0]), int(row[4]), int(row[5]), row[6]
        if status != "ok":
            empty = np.empty((0, n_est))
            rec = TrialRecord(empty, empty, np.empty(0), np.empty(0), status=status,
                              info={"message": row[9]})
        else:
            rows = sorted(series.get((cell_id, k, r), []), key=lambda x: int(x[3]))
            vals = np.array([[float(v) for v in x[4:]] for x in rows])
            rec = TrialRecord(vals[:, 2:2 + n_est], vals[:, 2 + n_est:], vals[:, 0], vals[:, 1],
                              seed=campaign.seed, fingerprint=meta.get("fingerprint", ""))
        trials.append(Trial(cell_id, k, r, rec))
    return campaign, trials


def table(directory, fmt="text"):
    campaign, trials = load_results(directory)
    rows = aggregate_rows(campaign, trials)
    if fmt == "json":
        return json.dumps([{c: r[c] for c in AGGREGATE_COLUMNS} for r in rows], indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        w.writerows([[_agg_cell(r, c) for c in AGGREGATE_COLUMNS] for r in rows])
        return buf.getvalue()
    if campaign.metric == "omat":
        return omat_table(rows) + "\n"
    return mse_table(rows) + "\n"


def geff(directory, fmt="csv"):
    campaign, trials = load_results(directory)
    rows = geff_rows(aggregate_rows(campaign, trials))
    if fmt == "json":
        keyed = [dict(zip(GEFF_COLUMNS, r)) for r in rows]
        for k in keyed:
            k["geff"] = float(k["geff"])
        return json.dumps(keyed, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GEFF_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()
