import csv
import itertools
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from lsbm.cli import main
from lsbm.errors import LsbmError
from lsbm.harness import (
    CSV_HEADER,
    ExperimentConfig,
    agreement_metrics,
    agreement_metrics_matching,
    config_from_dict,
    load_config,
    mann_kendall_increasing,
    record_to_dict,
    residual_scaling,
    run_sweep,
    run_trial,
    wilson_interval,
)
from lsbm.inference import spectral_recover
from lsbm.model import validate_params
from lsbm.sampler import LabeledGraph, sample_graph

from conftest import CONFIGS, csbm, csbm_raw


class Stop(Exception):
    pass


def small_config(tmp_path, **kw):
    raw = {"params": csbm_raw(t=5.0, n=300), "t_grid": [5.0], "trials": 3, "master_seed": 7,
           "output": str(tmp_path / "out.csv"), "record_timing": False}
    raw.update(kw)
    return config_from_dict(raw)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestAgreement:
    def test_identity(self):
        assert agreement_metrics([0, 1, 1, 0], [0, 1, 1, 0], 2) == (True, True, 1.0)

    def test_global_swap(self):
        assert agreement_metrics([1, 0, 0, 1], [0, 1, 1, 0], 2) == (False, True, 1.0)

    def test_partial(self):
        a = agreement_metrics([0, 1, 1, 1], [0, 0, 1, 1], 2)
        assert a == (False, False, 0.75)

    def test_k_too_large(self):
        with pytest.raises(LsbmError) as exc:
            agreement_metrics(np.arange(9), np.arange(9), 9)
        assert exc.value.code == "K_TOO_LARGE"
        assert agreement_metrics_matching(np.arange(9), np.arange(9), 9) == (True, True, 1.0)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 40))
    @settings(max_examples=80, deadline=None)
    def test_matching_equals_enumeration(self, seed, k, n):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, k, n)
        perm = rng.permutation(k)
        guess = np.where(rng.random(n) < 0.7, perm[truth], rng.integers(0, k, n))
        a = agreement_metrics(guess, truth, k)
        assert a == agreement_metrics_matching(guess, truth, k)
        assert 0.0 <= a.agreement <= 1.0
        assert not a.labeled_exact or a.partition_exact
        brute = max(np.mean(np.array(p)[guess] == truth) for p in itertools.permutations(range(k)))
        assert a.agreement == pytest.approx(brute, abs=1e-15)


class TestRunTrial:
    def test_single_community(self):
        p = validate_params({"k": 1, "L": 2, "pi": [1.0], "q": [[[0.3, 0.7]]], "t": 3.0, "n": 300})
        for trial in range(3):
            r = run_trial(p, trial, 1)
            assert r.labeled_exact and r.partition_exact and r.agreement == 1.0
            assert r.error is None

    def test_deterministic(self):
        p = csbm(t=5.0, n=300)
        a = run_trial(p, 4, 99, record_timing=False)
        b = run_trial(p, 4, 99, record_timing=False)
        assert a == b and a.csv_row() == b.csv_row()
        assert a.wall_clock_ms is None and a.csv_row()[-1] == ""
        assert run_trial(p, 4, 99).wall_clock_ms > 0

    def test_failure_is_recorded(self):
        # label 1 is 0.5 for every community pair, so its reference matrix is rank deficient
        p = validate_params({"k": 2, "L": 3, "pi": [0.5, 0.5],
                             "q": [[[0.5, 0.3, 0.2], [0.5, 0.1, 0.4]], [[0.5, 0.1, 0.4], [0.5, 0.25, 0.25]]],
                             "t": 5.0, "n": 200})
        with pytest.warns(UserWarning):
            r = run_trial(p, 0, 0)
        assert r.error.startswith("RANK_DEFICIENT") and not r.labeled_exact
        assert record_to_dict(r)["agreement"] is None
        assert r.csv_row()[6] == "nan"

    def test_fields(self):
        r = run_trial(csbm(t=5.0, n=300), 0, 3, record_timing=False)
        assert len(r.csv_row()) == len(CSV_HEADER)
        d = record_to_dict(r)
        assert set(CSV_HEADER) <= set(d)


class TestConfig:
    def test_multiplier_mode(self, tmp_path):
        cfg = load_config(CONFIGS / "sweep_csbm.json")
        assert [c.t for c in cfg.cells()] == pytest.approx([1.25, 1.875, 2.5, 3.125, 3.75], abs=1e-9)
        assert cfg.params.n == 2000 and cfg.trials == 50

    def test_absolute_mode_and_grid_order(self, tmp_path):
        cfg = small_config(tmp_path, t_grid=[1.0, 2.0], n_list=[100, 200])
        assert [(c.n, c.t) for c in cfg.cells()] == [(100, 1.0), (100, 2.0), (200, 1.0), (200, 2.0)]
        assert [c.index for c in cfg.cells()] == [0, 1, 2, 3]

    @pytest.mark.parametrize("patch", [
        {"trials": 0}, {"t_grid": []}, {"t_mode": "relative"}, {"trials": "many"},
    ])
    def test_bad_config(self, tmp_path, patch):
        with pytest.raises(LsbmError) as exc:
            small_config(tmp_path, **patch)
        assert exc.value.code == "BAD_CONFIG"

    def test_missing_field(self):
        with pytest.raises(LsbmError, match="BAD_CONFIG"):
            config_from_dict({"params": csbm_raw(), "trials": 1})

    def test_invalid_cell_params(self, tmp_path):
        with pytest.raises(LsbmError, match="SIGNAL_TOO_LARGE"):
            small_config(tmp_path, t_grid=[1000.0])

    def test_missing_file(self, tmp_path):
        with pytest.raises(LsbmError, match="IO_ERROR"):
            load_config(tmp_path / "absent.json")


class TestSweep:
    def test_one_row(self, tmp_path):
        res = run_sweep(small_config(tmp_path, trials=1))
        rows = read_rows(res.csv_path)
        assert rows[0] == CSV_HEADER and len(rows) == 2
        summary = json.loads(res.json_path.read_text())
        assert summary["cells"][0]["trials"] == 1

    def test_exact_header_line(self, tmp_path):
        res = run_sweep(small_config(tmp_path, trials=1))
        first = res.csv_path.read_text().splitlines()[0]
        assert first == ("t,n,trial,seed,labeled_exact,partition_exact,agreement,margin_over_logn,"
                         "max_alignment_residual,genie_agreement,wall_clock_ms")

    def test_flush_on_interrupt(self, tmp_path):
        cfg = small_config(tmp_path, t_grid=[4.0, 5.0], trials=2)

        def hook(rec):
            if rec.cell == 1:
                raise Stop

        with pytest.raises(Stop):
            run_sweep(cfg, on_record=hook)
        rows = read_rows(tmp_path / "out.csv")
        assert rows[0] == CSV_HEADER
        assert [r[2] for r in rows[1:3]] == ["0", "1"]
        assert all(float(r[0]) == 4.0 for r in rows[1:3])

    def test_parallel_matches_serial(self, tmp_path):
        a = run_sweep(small_config(tmp_path, output=str(tmp_path / "a.csv"), t_grid=[4.0, 5.0]))
        b = run_sweep(small_config(tmp_path, output=str(tmp_path / "b.csv"), t_grid=[4.0, 5.0], parallelism=3))
        assert a.csv_path.read_bytes() == b.csv_path.read_bytes()
        assert a.json_path.read_text() == b.json_path.read_text()

    def test_seed_changes_output(self, tmp_path):
        a = run_sweep(small_config(tmp_path, output=str(tmp_path / "a.csv")))
        b = run_sweep(small_config(tmp_path, output=str(tmp_path / "b.csv"), master_seed=8))
        assert a.csv_path.read_bytes() != b.csv_path.read_bytes()

    def test_unwritable_output(self, tmp_path):
        with pytest.raises(LsbmError, match="IO_ERROR"):
            run_sweep(small_config(tmp_path, output=str(tmp_path / "no" / "dir" / "out.csv")))

    @pytest.mark.slow
    def test_monotone_in_t(self, tmp_path):
        cfg = load_config(CONFIGS / "sweep_csbm.json")
        cfg = ExperimentConfig(**{**cfg.__dict__, "trials": 20, "output": str(tmp_path / "m.csv"),
                                  "record_timing": False})
        cells = run_sweep(cfg).summary["cells"]
        rates = [c["partition_exact"]["rate"] for c in cells]
        highs = [c["partition_exact"]["ci95"][1] for c in cells]
        print("partition exact by multiplier:", rates)
        for i, j in itertools.combinations(range(len(cells)), 2):
            assert highs[j] >= rates[i]
        assert rates[0] <= 0.1 and rates[-1] >= 0.9


class TestStatistics:
    def test_wilson_known_value(self):
        lo, hi = wilson_interval(8, 10)
        # textbook value for 8/10 at 95%
        assert lo == pytest.approx(0.4902, abs=1e-4) and hi == pytest.approx(0.9433, abs=1e-4)
        assert wilson_interval(0, 10)[0] == 0.0 and wilson_interval(10, 10)[1] == pytest.approx(1.0, abs=1e-15)

    def test_wilson_coverage(self):
        rng = np.random.default_rng(11)
        p, n = 0.3, 100
        hits = rng.binomial(n, p, size=1000)
        covered = np.mean([lo <= p <= hi for lo, hi in (wilson_interval(int(h), n) for h in hits)])
        assert 0.93 <= covered <= 0.97

    def test_mann_kendall(self):
        s, p = mann_kendall_increasing([1, 2, 3, 4, 5])
        assert s == 10 and p < 0.05
        s, p = mann_kendall_increasing([5, 4, 3, 2, 1])
        assert s == -10 and p > 0.9
        s, _ = mann_kendall_increasing([1.0, 3.0, 2.0, 4.0])
        assert s == 4

    def test_residual_scaling(self):
        recs = [run_trial(csbm(t=4.0, n=500), i, 5, record_timing=False) for i in range(3)]
        out = residual_scaling(recs)
        med = float(np.median([r.max_alignment_residual for r in recs]))
        assert out == {500: pytest.approx(med * math.sqrt(500) * math.log(math.log(500)), rel=1e-12)}


class TestCli:
    def test_threshold(self):
        res = CliRunner().invoke(main, ["threshold", "--params", str(CONFIGS / "csbm.json")])
        assert res.exit_code == 0, res.output
        doc = json.loads(res.output)
        assert doc["critical_t"] == pytest.approx(2.5, abs=1e-9)
        assert doc["above_threshold"] is True
        assert doc["divergences"][0]["value"] == pytest.approx(0.4, abs=1e-9)

    def test_exit_codes(self, tmp_path):
        runner = CliRunner()
        assert runner.invoke(main, ["threshold", "--params", str(tmp_path / "absent.json")]).exit_code == 2
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert runner.invoke(main, ["threshold", "--params", str(bad)]).exit_code == 1
        invalid = tmp_path / "invalid.json"
        invalid.write_text(json.dumps({**csbm_raw(), "pi": [0.9, 0.9]}))
        res = runner.invoke(main, ["threshold", "--params", str(invalid)])
        assert res.exit_code == 1 and "BAD_PI" in res.output

    def test_sample_and_recover(self, tmp_path):
        params = tmp_path / "p.json"
        params.write_text(json.dumps(csbm_raw(t=5.0, n=300)))
        runner = CliRunner()
        res = runner.invoke(main, ["sample", "--params", str(params), "--seed", "4",
                                   "--out", str(tmp_path / "g.txt"), "--assignment-out", str(tmp_path / "a.txt")])
        assert res.exit_code == 0, res.output
        res = runner.invoke(main, ["recover", "--params", str(params), "--graph", str(tmp_path / "g.txt"),
                                   "--out", str(tmp_path / "labels.txt"), "--summary", str(tmp_path / "s.json")])
        assert res.exit_code == 0, res.output
        g = LabeledGraph.load(tmp_path / "g.txt")
        expected = spectral_recover(g, csbm(t=5.0, n=300)).sigma_hat
        got = np.loadtxt(tmp_path / "labels.txt", dtype=int)
        np.testing.assert_array_equal(got, expected)
        assert g == sample_graph(csbm(t=5.0, n=300), 4)
        summary = json.loads((tmp_path / "s.json").read_text())
        assert summary["patterns"] == 16

    def test_recover_to_stdout(self, tmp_path):
        params = tmp_path / "p.json"
        params.write_text(json.dumps(csbm_raw(t=5.0, n=300)))
        sample_graph(csbm(t=5.0, n=300), 1).save(tmp_path / "g.txt")
        res = CliRunner().invoke(main, ["recover", "--params", str(params), "--graph", str(tmp_path / "g.txt")])
        assert res.exit_code == 0
        assert len(res.output.splitlines()) == 300

    def test_diagnose(self, tmp_path):
        params = tmp_path / "p.json"
        params.write_text(json.dumps(csbm_raw(t=5.0, n=300)))
        res = CliRunner().invoke(main, ["diagnose", "--params", str(params), "--seed", "3", "--trial", "2"])
        assert res.exit_code == 0, res.output
        doc = json.loads(res.output)
        assert set(doc) == {"record", "diagnostics", "selection"}
        assert doc["record"]["trial"] == 2
        assert set(doc["diagnostics"]) == {"minMargin", "marginOverLogN", "residuals", "genieAgreementRate"}

    def test_sweep(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"params": csbm_raw(t=5.0, n=300), "t_grid": [5.0], "trials": 2,
                                   "record_timing": False}))
        out = tmp_path / "res.csv"
        res = CliRunner().invoke(main, ["sweep", "--config", str(cfg), "--seed", "3", "--out", str(out),
                                        "--jobs", "1"])
        assert res.exit_code == 0, res.output
        assert len(read_rows(out)) == 3
        assert json.loads(out.with_suffix(".json").read_text())["master_seed"] == 3

    def test_sweep_io_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"params": csbm_raw(t=5.0, n=300), "t_grid": [5.0], "trials": 1}))
        res = CliRunner().invoke(main, ["sweep", "--config", str(cfg), "--out", str(tmp_path / "x" / "y.csv")])
        assert res.exit_code == 2

    def test_sweep_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"params": csbm_raw(), "trials": 1}))
        assert CliRunner().invoke(main, ["sweep", "--config", str(cfg)]).exit_code == 1
