import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from pfgspf.errors import ConfigError, NumericalFailure
from pfgspf.harness import cli, load_config, load_results, parse_config, run_campaign
from pfgspf.harness import runner as runner_mod
from pfgspf.harness.report import geff, table

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.yaml"))
TINY = ROOT / "configs" / "tiny.yaml"
GOLDEN = Path(__file__).parent / "golden" / "tiny"

RESULT_FILES = ["trials.csv", "trial_summary.csv", "aggregate.csv", "geff.csv", "campaign.json"]


@pytest.fixture(scope="module")
def tiny_results(tmp_path_factory):
    return run_campaign(load_config(TINY), output=tmp_path_factory.mktemp("tiny"), threads=1)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _assert_csv_close(actual, expected):
    a, e = _rows(actual), _rows(expected)
    assert a[0] == e[0] and len(a) == len(e)
    for ra, re_ in zip(a[1:], e[1:]):
        for x, y in zip(ra, re_):
            try:
                assert float(x) == pytest.approx(float(y), rel=1e-9, abs=1e-12)
            except ValueError:
                assert x == y


@pytest.mark.parametrize("name", ["aggregate.csv", "geff.csv", "trial_summary.csv", "trials.csv"])
def test_golden_tiny_campaign(tiny_results, name):
    _assert_csv_close(tiny_results / name, GOLDEN / name)


def test_results_do_not_depend_on_thread_count(tiny_results, tmp_path):
    out = run_campaign(load_config(TINY), output=tmp_path, threads=4)
    for name in RESULT_FILES:
        assert (out / name).read_bytes() == (tiny_results / name).read_bytes(), name


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv(runner_mod.THREADS_ENV, "3")
    assert runner_mod.default_threads() == 3
    monkeypatch.setenv(runner_mod.THREADS_ENV, "zero")
    with pytest.raises(ValueError):
        runner_mod.default_threads()
    monkeypatch.delenv(runner_mod.THREADS_ENV)
    assert runner_mod.default_threads() == 1


def test_table_reproduces_aggregate(tiny_results):
    assert table(tiny_results, "csv") == (tiny_results / "aggregate.csv").read_text()
    assert geff(tiny_results, "csv") == (tiny_results / "geff.csv").read_text()
    rows = json.loads(table(tiny_results, "json"))
    assert [r["algorithm"] for r in rows] == ["KF_ORACLE", "PFGSPF", "PFGPF", "PFPF_EDH"]
    assert "(50x2)" in table(tiny_results, "text")


def test_geff_within_bounds(tiny_results):
    for row in json.loads(geff(tiny_results, "json")):
        assert 1.0 - 1e-12 <= row["geff"] <= row["G"] + 1e-12


def test_load_results_round_trip(tiny_results):
    campaign, trials = load_results(tiny_results)
    assert campaign.fingerprint() == load_config(TINY).fingerprint()
    assert len(trials) == 4 * 2 * 2
    assert all(t.record.errors.shape == (5,) for t in trials)


def test_single_trial_campaign(tmp_path):
    doc = {"scenario": {"kind": "linear", "params": {"dim": 2, "horizon": 3}},
           "campaign": {"trajectories": 1, "runs": 1, "seed": 1},
           "cells": [{"filter": "PFGPF", "Np_star": 20}]}
    out = run_campaign(parse_config(doc), output=tmp_path)
    trials = _rows(out / "trials.csv")
    assert len(trials) == 1 + 3
    assert {tuple(r[:3]) for r in trials[1:]} == {("0", "0", "0")}
    assert len(_rows(out / "aggregate.csv")) == 2


def test_failed_trial_is_recorded_and_campaign_continues(tmp_path, monkeypatch):
    real = runner_mod.run_filter

    def flaky(model, obs, config, seed=None, **kw):
        if config.kind.value == "PFGPF":
            raise NumericalFailure("forced")
        return real(model, obs, config, seed=seed, **kw)

    monkeypatch.setattr(runner_mod, "run_filter", flaky)
    c = replace(load_config(TINY), trajectories=1, runs=1)
    out = run_campaign(c, output=tmp_path)
    summary = {r[1]: r for r in _rows(out / "trial_summary.csv")[1:]}
    assert summary["PFGPF"][6] == "failed" and "forced" in summary["PFGPF"][9]
    assert summary["PFGSPF"][6] == "ok"
    agg = {r[1]: r for r in _rows(out / "aggregate.csv")[1:]}
    assert agg["PFGPF"][8] == "1" and agg["PFGPF"][5] == "nan"
    assert table(out, "csv") == (out / "aggregate.csv").read_text()


def test_lost_track_threshold_marks_trials(tmp_path):
    c = replace(load_config(TINY), trajectories=1, runs=1, lost_track_threshold=0.0)
    out = run_campaign(c, output=tmp_path)
    agg = _rows(out / "aggregate.csv")[1:]
    assert all(r[7] == "1" and r[10] == "0" for r in agg)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_validate(path, capsys):
    assert cli.main(["validate", str(path)]) == 0
    assert capsys.readouterr().out.startswith("ok:")


def test_cli_run_then_table(tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["run", str(TINY), "--out", str(out), "--threads", "2"]) == 0
    capsys.readouterr()
    assert cli.main(["table", str(out), "--format", "csv"]) == 0
    assert capsys.readouterr().out == (out / "aggregate.csv").read_text()
    assert cli.main(["geff", str(out)]) == 0
    assert capsys.readouterr().out == (out / "geff.csv").read_text()


def test_cli_seed_override_changes_results(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(TINY), "--out", str(a)]) == 0
    assert cli.main(["run", str(TINY), "--out", str(b), "--seed", "8"]) == 0
    assert (a / "trials.csv").read_bytes() != (b / "trials.csv").read_bytes()
    assert json.loads((b / "campaign.json").read_text())["config"]["campaign"]["seed"] == 8


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["table", str(tmp_path)]) == 1
    assert "pfgspf: error:" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == 1


BAD_CONFIGS = [
    ("campaign:\n  runs: 1\n", "field 'scenario'"),
    ("scenario:\n  kind: radar\ncampaign: {}\ncells: [{filter: PFGPF, Np_star: 1}]\n",
     "line 2, field 'scenario.kind'"),
    ("scenario: {kind: linear}\ncampaign:\n  trajectories: 2\n  runs: -1\n"
     "cells: [{filter: PFGPF, Np_star: 1}]\n", "line 4, field 'campaign.runs'"),
    ("scenario: {kind: linear}\ncampaign: {}\ncells:\n  - {filter: PFGPF, Np_star: 10}\n"
     "  - {filter: UKF, Np_star: 10}\n", "line 5, field 'cells[1].filter'"),
    ("scenario: {kind: acoustic}\ncampaign: {}\ncells:\n  - {filter: KF, Np_star: 1}\n",
     "field 'cells[0].filter'"),
    ("scenario: {kind: linear, params: {dimension: 3}}\ncampaign: {}\n"
     "cells: [{filter: PFGPF, Np_star: 1}]\n", "field 'scenario.params.dimension'"),
    ("scenario: {kind: linear}\ncampaign: {}\nflow: {n_lambda: 0}\n"
     "cells: [{filter: PFGPF, Np_star: 1}]\n", "line 3, field 'flow.n_lambda'"),
    ("scenario: {kind: linear}\ncampaign: {}\ncells: [{filter: PFGPF, G: 2, Np_star: 5}]\n",
     "field 'cells[0]'"),
    ("scenario: {kind: linear}\ncampaign: {}\ncells: []\n", "field 'cells'"),
    ("scenario: [unclosed\n", "line"),
]


@pytest.mark.parametrize("text, expected", BAD_CONFIGS)
def test_config_errors_name_line_and_field(tmp_path, text, expected):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert expected in str(exc.value)


def test_fingerprint_ignores_output_and_threads():
    c = load_config(TINY)
    assert c.fingerprint() == replace(c, output="elsewhere", threads=8).fingerprint()
    assert c.fingerprint() != replace(c, seed=c.seed + 1).fingerprint()


def test_json_config_accepted(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(load_config(TINY).to_dict()))
    assert load_config(path).fingerprint() == load_config(TINY).fingerprint()
