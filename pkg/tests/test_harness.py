from __future__ import annotations

import json

import pytest

from vcongest import harness
from vcongest.harness import Campaign, execute, expand, load_trial, trial_filename


def small(tmp_path, **kw) -> Campaign:
    data = {"protocol": ["uniform", "ranking"], "n": [16], "k": [4], "trials": 2, "out": str(tmp_path / "out")}
    data.update(kw)
    return Campaign.from_dict(data)


def test_expand_counts_and_seeds():
    camp = Campaign.from_dict({"protocol": "ranking", "n": [16, 32], "k": 4, "q": [0.0, 1e-3], "trials": 3, "base_seed": 10})
    cfgs = expand(camp)
    assert len(cfgs) == 12
    assert [c.seed for c in cfgs[:3]] == [10, 11, 12]
    assert len({trial_filename(c) for c in cfgs}) == 12


def test_expand_flags_invalid_cells():
    camp = Campaign.from_dict({"protocol": "ranking", "n": [16, 18], "k": [4], "trials": 1})
    cfgs = expand(camp)
    assert [c.n for c in cfgs] == [16]
    assert len(camp.errors) == 1 and camp.errors[0].cell["n"] == 18


def test_empty_q_axis_defaults_to_fault_free():
    camp = Campaign.from_dict({"protocol": "uniform", "n": 8, "k": 4, "q": []})
    assert [c.q for c in expand(camp)] == [0.0]


def test_campaign_rejects_unknown_or_missing_keys():
    with pytest.raises(ValueError):
        Campaign.from_dict({"protocol": "uniform", "n": 8, "k": 4, "colour": 1})
    with pytest.raises(ValueError):
        Campaign.from_dict({"protocol": "uniform", "k": 4})
    with pytest.raises(ValueError):
        Campaign.from_dict({"protocol": "uniform", "n": 8, "k": 4, "trials": 0})


def test_campaign_from_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("protocol: [ranking]\nn: [16]\nk: [4]\nq: [0.0, 0.001]\ntrials: 2\ncheck: true\n")
    camp = Campaign.from_file(path)
    assert camp.check and camp.grid["q"] == [0.0, 0.001]
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        Campaign.from_file(path)


def test_execute_is_deterministic(tmp_path):
    a = execute(small(tmp_path), out=tmp_path / "a")
    b = execute(small(tmp_path), out=tmp_path / "b")
    assert a == b
    for name in ("summary.csv", "trials.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = (tmp_path / "a" / "trials.csv").read_text().splitlines()
    assert len(rows) == 1 + 4


def test_trial_files_carry_derived_parameters(tmp_path):
    execute(small(tmp_path, protocol=["ranking"], trials=1))
    (path,) = (tmp_path / "out" / "trials").glob("*.jsonl")
    first = json.loads(path.read_text().splitlines()[0])
    assert first["record"] == "config"
    for key in ("derived_tau", "derived_tau_prime", "derived_T", "derived_tau_e"):
        assert key in first
    assert first["derived_tau"] == 8 and first["derived_T"] == 4.0
    assert load_trial(path).success


def test_resume_skips_finished_trials(tmp_path, monkeypatch):
    camp = small(tmp_path)
    first = execute(camp)
    calls = []
    real = harness.run_trial

    def counting(cfg, check=False):
        calls.append(cfg.seed)
        return real(cfg, check)

    monkeypatch.setattr(harness, "run_trial", counting)
    assert execute(camp) == first
    assert calls == []

    # a truncated trial file is recomputed
    victim = sorted((tmp_path / "out" / "trials").glob("*.jsonl"))[0]
    victim.write_text(victim.read_text().splitlines()[0] + "\n")
    assert execute(camp) == first
    assert len(calls) == 1


def test_trial_failure_is_isolated(tmp_path, monkeypatch):
    real = harness.run_trial

    def flaky(cfg, check=False):
        if cfg.protocol == "ranking" and cfg.seed == 1:
            raise RuntimeError("boom")
        return real(cfg, check)

    monkeypatch.setattr(harness, "run_trial", flaky)
    result = execute(small(tmp_path))
    assert result.row("uniform", 16, 4).success_rate == 1.0
    assert result.row("ranking", 16, 4).success_rate == 0.5
    bad = [p for p in (tmp_path / "out" / "trials").glob("ranking*seed1.jsonl")]
    assert "RuntimeError: boom" in load_trial(bad[0]).aborted


def test_parallel_matches_serial(tmp_path):
    serial = execute(small(tmp_path, q=[0.0, 1e-3]), workers=1, out=tmp_path / "s")
    parallel = execute(small(tmp_path, q=[0.0, 1e-3]), workers=2, out=tmp_path / "p")
    assert serial == parallel
    assert (tmp_path / "s" / "summary.csv").read_bytes() == (tmp_path / "p" / "summary.csv").read_bytes()


def test_workers_default_from_environment(monkeypatch):
    monkeypatch.setenv(harness.WORKERS_ENV, "3")
    assert harness.default_workers() == 3
    monkeypatch.setenv(harness.WORKERS_ENV, "lots")
    assert harness.default_workers() == 1
