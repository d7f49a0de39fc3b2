"""Evaluation metrics: OMAT, lost tracks, MSE and campaign aggregates."""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgument

LOST_TRACK_THRESHOLD = 2.0


def omat(est, true, p=1):
    """Optimal mass transfer distance between two equal-size point sets.

    ``est`` and ``true`` are (M, k) arrays. The assignment minimizing the
    average p-th power distance is found exactly.
    """
    est = np.atleast_2d(np.asarray(est, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if est.shape != true.shape or est.shape[0] < 1:
        raise InvalidArgument(
            f"OMAT needs point sets of equal non-zero size, got {est.shape} and {true.shape}"
        )
    if not p >= 1:
        raise InvalidArgument(f"OMAT order must be >= 1, got {p}")
    cost = np.linalg.norm(est[:, None, :] - true[None, :, :], axis=-1) ** p
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / p))


def omat_series(est, true, pos_idx, p=1):
    """Per-step OMAT between joint-state sequences; ``pos_idx`` is (M, 2) columns."""
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    return np.array([omat(e[pos_idx], x[pos_idx], p) for e, x in zip(est, true)])


def squared_error_series(est, true):
    """Per-step squared error averaged over state dimensions."""
    diff = np.asarray(est, dtype=float) - np.asarray(true, dtype=float)
    return np.mean(diff * diff, axis=-1)


@dataclass
class TrialRecord:
    estimates: np.ndarray  # (T, dim_x)
    truth: np.ndarray  # (T, dim_x)
    errors: np.ndarray  # (T,) OMAT or squared error per step
    geff: np.ndarray  # (T,)
    wall_time: float = 0.0
    seed: int = 0
    fingerprint: str = ""
    status: str = "ok"
    step_times: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        T = len(self.errors)
        if self.status == "ok" and not (len(self.estimates) == len(self.truth) == len(self.geff) == T):
            raise InvalidArgument("trial record series must all have the horizon length")

    @property
    def failed(self):
        return self.status != "ok"

    @property
    def mean_error(self):
        return float(np.mean(self.errors))


def lost_track(trial, threshold=LOST_TRACK_THRESHOLD):
    """True when the trajectory-average OMAT strictly exceeds ``threshold``."""
    return trial.mean_error > threshold


def mse(trial):
    return trial.mean_error


@dataclass
class Summary:
    mean: float
    sd: float
    n_included: int
    lost_tracks: int
    failed: int
    n_total: int
    geff: np.ndarray

    @property
    def lost_rate(self):
        ok = self.n_total - self.failed
        return self.lost_tracks / ok if ok else math.nan


def aggregate(trials, threshold=None):
    """Mean and sample sd of per-trial errors.

    Failed trials are counted separately; with a ``threshold`` lost tracks
    are counted and excluded as well. The G_eff series is averaged over the
    included trials.
    """
    trials = list(trials)
    if not trials:
        raise InvalidArgument("cannot aggregate an empty trial set")
    ok = [t for t in trials if not t.failed]
    lost = [t for t in ok if threshold is not None and lost_track(t, threshold)]
    kept = [t for t in ok if not (threshold is not None and lost_track(t, threshold))]
    errs = np.array([t.mean_error for t in kept])
    mean = math.fsum(errs) / len(errs) if len(errs) else math.nan
    if len(errs) > 1:
        sd = math.sqrt(math.fsum((errs - mean) ** 2) / (len(errs) - 1))
    else:
        sd = math.nan
    if kept:
        geff = np.mean(np.stack([t.geff for t in kept]), axis=0)
    else:
        geff = np.empty(0)
    return Summary(mean, sd, len(kept), len(lost), len(trials) - len(ok), len(trials), geff)


def format_mean_sd(mean, sd, digits=2):
    if math.isnan(mean):
        return "n/a"
    if math.isnan(sd):
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} +- {sd:.{digits}f}"


def omat_table(rows):
    """Text table with one line per (algorithm, N_p): mean +- sd and #LT.

    ``rows`` are dicts with keys algorithm, Np, mean, sd, lost_tracks, failed.
    """
    header = f"{'algorithm':<16}{'Np':>8}  {'OMAT (m)':<18}{'#LT':>6}{'failed':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['algorithm']:<16}{int(r['Np']):>8}  "
            f"{format_mean_sd(float(r['mean']), float(r['sd'])):<18}"
            f"{int(r['lost_tracks']):>6}{int(r['failed']):>8}"
        )
    return "\n".join(lines)


def mse_table(rows):
    """Text table with one line per N_p, algorithms as columns.

    Each cell reads ``avg +- sd (N*_p x G)``.
    """
    algos = sorted({r["algorithm"] for r in rows})
    budgets = sorted({int(r["Np"]) for r in rows})
    cell = {}
    for r in rows:
        text = f"{format_mean_sd(float(r['mean']), float(r['sd']))} ({int(r['Np_star'])}x{int(r['G'])})"
        cell.setdefault((int(r["Np"]), r["algorithm"]), []).append(text)
    width = 30
    lines = [f"{'Np':>6}  " + "".join(f"{a:<{width}}" for a in algos)]
    lines.append("-" * len(lines[0]))
    for n in budgets:
        parts = [" / ".join(cell.get((n, a), ["-"])) for a in algos]
        lines.append(f"{n:>6}  " + "".join(f"{p:<{width}}" for p in parts))
    return "\n".join(lines)


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([r[c] for c in columns])
    return buf.getvalue()
