"""Seeded Monte Carlo campaigns over (cell, trajectory, run) trials.

Seeds are derived from the master seed by SeedSequence spawn keys:

    truth of trajectory k        (0, k)
    prior jitter of (k, r)       (1, k, r)
    filter of (k, r, cell c)     (2, k, r, c)

so every cell of a trajectory-run sees the same truth, measurements and
initial distribution, and results do not depend on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import csv
import json
import logging
import os
from pathlib import Path
import time

import numpy as np

from ..errors import FilterError, InvalidArgument
from ..filters import run_filter
from ..metrics import TrialRecord, aggregate, lost_track, omat_series, squared_error_series
from ..scenarios import perturbed_prior, position_indices

log = logging.getLogger(__name__)

THREADS_ENV = "PFGSPF_THREADS"

TRIALS_FILE = "trials.csv"
SUMMARY_FILE = "trial_summary.csv"
AGGREGATE_FILE = "aggregate.csv"
GEFF_FILE = "geff.csv"
CAMPAIGN_FILE = "campaign.json"
TIMINGS_FILE = "timings.json"

AGGREGATE_COLUMNS = ["cell_id", "algorithm", "G", "Np_star", "Np", "mean", "sd", "lost_tracks",
                     "failed", "n_trials", "n_included", "lost_rate"]
SUMMARY_COLUMNS = ["cell_id", "algorithm", "G", "Np_star", "traj", "run", "status",
                   "mean_error", "lost", "message"]


def _seed(master, *key):
    return np.random.SeedSequence(master, spawn_key=key)


def default_threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgument(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if n < 1:
        raise InvalidArgument(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass
class Trial:
    cell_id: int
    traj: int
    run: int
    record: TrialRecord


def _fmt(v):
    return repr(float(v))


class CampaignRunner:
    def __init__(self, campaign):
        self.campaign = campaign
        self.model, self.simulator = campaign.build_scenario()
        self._truths = {}

    def truth(self, k):
        if k not in self._truths:
            rng = np.random.default_rng(_seed(self.campaign.seed, 0, k))
            self._truths[k] = self.simulator.simulate(rng)
        return self._truths[k]

    def errors(self, est, true):
        c = self.campaign
        if c.metric == "omat":
            idx = position_indices(self.model.dim_x // 4)
            return omat_series(est, true, idx, c.omat_order)
        return squared_error_series(est, true)

    def run_trial(self, cell_id, k, r):
        c = self.campaign
        cell = c.cells[cell_id]
        traj = self.truth(k)
        jitter_rng = np.random.default_rng(_seed(c.seed, 1, k, r))
        model = self.model.with_initial(
            perturbed_prior(self.model.initial, c.prior_jitter_scale, jitter_rng)
        )
        config = c.filter_config(cell)
        seed = _seed(c.seed, 2, k, r, cell_id)
        truth = traj.states[1:]
        start = time.perf_counter()
        try:
            res = run_filter(model, traj.observations, config, seed=seed)
            errs = self.errors(res.estimates, truth)
            if not np.all(np.isfinite(errs)):
                raise FilterError("non-finite estimation error")
            rec = TrialRecord(res.estimates, truth, errs, res.geff,
                              wall_time=time.perf_counter() - start, seed=c.seed,
                              fingerprint=c.fingerprint(), step_times=res.step_times)
        except (FilterError, np.linalg.LinAlgError) as exc:
            log.warning("trial cell=%d traj=%d run=%d failed: %s", cell_id, k, r, exc)
            empty = np.empty((0, self.model.dim_x))
            rec = TrialRecord(empty, empty, np.empty(0), np.empty(0),
                              wall_time=time.perf_counter() - start, seed=c.seed,
                              fingerprint=c.fingerprint(), status="failed",
                              info={"message": f"{type(exc).__name__}: {exc}"})
        return Trial(cell_id, k, r, rec)

    def tasks(self):
        c = self.campaign
        return [(cell, k, r) for k in range(c.trajectories) for r in range(c.runs)
                for cell in range(len(c.cells))]


def run_campaign(campaign, output=None, threads=None):
    """Execute every trial and write the result files; returns the output directory."""
    out = Path(output or campaign.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    threads = threads or campaign.threads or default_threads()
    runner = CampaignRunner(campaign)
    for k in range(campaign.trajectories):
        runner.truth(k)
    tasks = runner.tasks()
    start = time.perf_counter()
    if threads == 1:
        trials = [runner.run_trial(*t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trials = list(pool.map(lambda t: runner.run_trial(*t), tasks))
    trials.sort(key=lambda t: (t.cell_id, t.traj, t.run))
    write_results(out, campaign, trials)
    write_timings(out, trials, time.perf_counter() - start, threads)
    return out


def _cell_meta(campaign, cell_id):
    cell = campaign.cells[cell_id]
    return cell.algorithm, cell.G, cell.Np_star, cell.Np


def aggregate_rows(campaign, trials):
    """One aggregate row per cell, trials taken in sorted (traj, run) order."""
    rows = []
    by_cell = {}
    for t in sorted(trials, key=lambda t: (t.cell_id, t.traj, t.run)):
        by_cell.setdefault(t.cell_id, []).append(t.record)
    threshold = campaign.lost_track_threshold
    for cell_id in range(len(campaign.cells)):
        records = by_cell.get(cell_id, [])
        if not records:
            continue
        s = aggregate(records, threshold)
        algo, G, nps, np_ = _cell_meta(campaign, cell_id)
        rows.append({
            "cell_id": cell_id, "algorithm": algo, "G": G, "Np_star": nps, "Np": np_,
            "mean": s.mean, "sd": s.sd, "lost_tracks": s.lost_tracks, "failed": s.failed,
            "n_trials": s.n_total, "n_included": s.n_included, "lost_rate": s.lost_rate,
            "geff": s.geff,
        })
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_results(out, campaign, trials):
    dx = campaign.build_scenario()[0].dim_x
    header = (["cell_id", "traj", "run", "t", "omat_or_se", "geff"]
              + [f"est{i}" for i in range(dx)] + [f"truth{i}" for i in range(dx)])
    rows = []
    summary = []
    threshold = campaign.lost_track_threshold
    for t in trials:
        rec = t.record
        algo, G, nps, _ = _cell_meta(campaign, t.cell_id)
        if not rec.failed:
            for step in range(len(rec.errors)):
                rows.append([t.cell_id, t.traj, t.run, step + 1, _fmt(rec.errors[step]),
                             _fmt(rec.geff[step])]
                            + [_fmt(v) for v in rec.estimates[step]]
                            + [_fmt(v) for v in rec.truth[step]])
        lost = (not rec.failed and threshold is not None and lost_track(rec, threshold))
        summary.append([t.cell_id, algo, G, nps, t.traj, t.run, rec.status,
                        _fmt(rec.mean_error) if not rec.failed else "",
                        int(lost), rec.info.get("message", "")])
    _write_csv(out / TRIALS_FILE, header, rows)
    _write_csv(out / SUMMARY_FILE, SUMMARY_COLUMNS, summary)
    agg = aggregate_rows(campaign, trials)
    write_aggregate(out / AGGREGATE_FILE, agg)
    write_geff(out / GEFF_FILE, agg)
    config = campaign.to_dict()
    # output location and worker count do not affect results
    config["campaign"].pop("output")
    config["campaign"].pop("threads")
    with open(out / CAMPAIGN_FILE, "w") as fh:
        json.dump({"fingerprint": campaign.fingerprint(), "config": config}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")


def _agg_cell(r, c):
    v = r[c]
    return _fmt(v) if isinstance(v, float) else v


def write_aggregate(path, rows):
    _write_csv(path, AGGREGATE_COLUMNS, [[_agg_cell(r, c) for c in AGGREGATE_COLUMNS]
                                         for r in rows])


def geff_rows(agg):
    out = []
    for r in agg:
        for step, g in enumerate(r["geff"], start=1):
            out.append([r["cell_id"], r["algorithm"], r["G"], r["Np_star"], step, _fmt(g)])
    return out


GEFF_COLUMNS = ["cell_id", "algorithm", "G", "Np_star", "t", "geff"]


def write_geff(path, agg):
    _write_csv(path, GEFF_COLUMNS, geff_rows(agg))


def write_timings(out, trials, total, threads):
    """Wall-clock data lives outside the CSVs so those stay byte-reproducible."""
    data = {
        "total_seconds": total,
        "threads": threads,
        "trials": [
            {"cell_id": t.cell_id, "traj": t.traj, "run": t.run,
             "wall_time": t.record.wall_time,
             "mean_step_time": (float(np.mean(t.record.step_times))
                                if t.record.step_times is not None else None)}
            for t in trials
        ],
    }
    with open(out / TIMINGS_FILE, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
