"""Config parsing, matrix files, CLI subcommands, output determinism."""

import json
import os

import numpy as np
import pytest

from fasris import cli
from fasris.config import (ConfigError, load_matrix, save_matrix,
                           scenario_from_config, selection_from_config)
from fasris.scenarios import random_correlation
from fasris.sweep import CSV_HEADER, validate


def small_cfg(**overrides):
    cfg = {
        "scenario": {
            "mode": "common",
            "name": "tcfg",
            "dims": {"M": 10, "K": 3, "L": 6},
            "ris_profiles": {"C_L": {"d_c": 0.5, "alpha": 60.0, "beta": 5.0},
                             "C_R": {"d_c": 0.5, "alpha": 30.0, "beta": 5.0}},
            "R_profile": {"d_c": 0.5, "alpha": 10.0, "beta": 5.0},
            "geometry_gains": {"d_bs_ris": 5.0,
                               "d_ris_user": [20.0, 20.0, 21.0]},
            "powers": 1.0,
            "sigma2_inv_db": 80.0,
        },
        "sweep": {"axis": "snr_db", "values": [70.0, 80.0]},
        "precoders": ["rzf"],
        "methods": ["de", "mc"],
        "trials": 120,
        "seed": 5,
    }
    cfg.update(overrides)
    return cfg


class TestMatrixFiles:
    def test_csv_roundtrip_complex(self, tmp_path, rng):
        A = random_correlation(5, rng) + 0j
        path = tmp_path / "mat.csv"
        save_matrix(path, A)
        B = load_matrix(path)
        assert np.allclose(A, B, atol=1e-15)

    def test_csv_roundtrip_real(self, tmp_path):
        A = np.arange(6.0).reshape(2, 3)
        path = tmp_path / "mat.csv"
        save_matrix(path, A)
        B = load_matrix(path)
        assert B.dtype.kind == "f" and np.array_equal(A, B)

    def test_npy_roundtrip(self, tmp_path, rng):
        A = random_correlation(4, rng)
        path = tmp_path / "mat.npy"
        save_matrix(path, A)
        assert np.allclose(load_matrix(path), A)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3,4\n")
        with pytest.raises(ConfigError):
            load_matrix(path)


class TestScenarioFromConfig:
    def test_explicit_common(self):
        sc = scenario_from_config(small_cfg())
        assert sc.dims.M == 10 and sc.dims.K == 3
        assert sc.sigma2 == pytest.approx(1e-8)
        assert sc.correlations.C_L.shape == (6, 6)
        assert np.all(sc.t < sc.u)

    def test_preset(self):
        cfg = {"scenario": {"preset": "fig1",
                            "preset_args": {"M": 16, "K": 4, "L": 8,
                                            "sigma2_inv_db": 70.0}}}
        sc = scenario_from_config(cfg)
        assert sc.dims.M == 16 and sc.dims.K == 4
        assert sc.sigma2 == pytest.approx(1e-7)

    def test_gains_db(self):
        cfg = small_cfg()
        del cfg["scenario"]["geometry_gains"]
        cfg["scenario"]["gains_db"] = {"u": -60.0, "t": -80.0}
        sc = scenario_from_config(cfg)
        assert np.allclose(sc.u, 1e-6) and np.allclose(sc.t, 1e-8)

    def test_matrix_file_override(self, tmp_path, rng):
        A = random_correlation(6, rng)
        path = tmp_path / "cl.npy"
        save_matrix(path, A)
        cfg = small_cfg()
        cfg["scenario"]["matrix_files"] = {"C_L": str(path)}
        sc = scenario_from_config(cfg)
        assert np.allclose(sc.correlations.C_L, A, atol=1e-12)

    def test_missing_pieces_raise(self):
        with pytest.raises(ConfigError):
            scenario_from_config({"scenario": {"mode": "common",
                                               "dims": {"M": 4, "K": 2, "L": 2},
                                               "gains_db": {"u": -60, "t": -70}}})
        with pytest.raises(ConfigError):
            scenario_from_config({"scenario": {"preset": "nope"}})

    def test_selection_blocks(self):
        sc = scenario_from_config(small_cfg())
        cfg = small_cfg()
        cfg["selection"] = {"type": "first", "M": 4}
        s = selection_from_config(cfg, sc)
        assert np.array_equal(np.flatnonzero(s), np.arange(4))
        cfg["selection"] = {"type": "indices", "indices": [0, 2, 5]}
        s = selection_from_config(cfg, sc)
        assert np.array_equal(np.flatnonzero(s), [0, 2, 5])


class TestCli:
    def _write_cfg(self, tmp_path, cfg):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_sweep_deterministic_across_threads(self, tmp_path):
        cfg_path = self._write_cfg(tmp_path, small_cfg())
        rc1 = cli.main(["--config", cfg_path, "--out-dir",
                        str(tmp_path / "a"), "sweep"])
        rc2 = cli.main(["--config", cfg_path, "--out-dir",
                        str(tmp_path / "b"), "--threads", "4", "sweep"])
        assert rc1 == 0 and rc2 == 0
        a = (tmp_path / "a" / "tcfg_sweep.csv").read_bytes()
        b = (tmp_path / "b" / "tcfg_sweep.csv").read_bytes()
        assert a == b
        assert a.decode().splitlines()[0] == CSV_HEADER
        assert (tmp_path / "a" / "tcfg_sweep.svg").exists()

    def test_montecarlo_csv_schema(self, tmp_path):
        cfg_path = self._write_cfg(tmp_path, small_cfg())
        out = tmp_path / "res.csv"
        assert cli.main(["--config", cfg_path, "montecarlo", "--trials", "32",
                         "--precoder", "mrt", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "scenario_id,snr_db,precoder,trials,esr_mean,esr_stderr"
        fields = lines[1].split(",")
        assert fields[0] == "tcfg" and fields[2] == "mrt" and fields[3] == "32"
        assert float(fields[1]) == 80.0

    def test_montecarlo_deterministic(self, tmp_path):
        cfg_path = self._write_cfg(tmp_path, small_cfg())
        out1 = tmp_path / "r1.csv"
        out2 = tmp_path / "r2.csv"
        assert cli.main(["--config", cfg_path, "montecarlo", "--trials", "64",
                         "--precoder", "zf", "--out", str(out1)]) == 0
        assert cli.main(["--config", cfg_path, "--threads", "3", "montecarlo",
                         "--trials", "64", "--precoder", "zf",
                         "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_env_thread_override(self, tmp_path, monkeypatch):
        cfg_path = self._write_cfg(tmp_path, small_cfg())
        monkeypatch.setenv("FASRIS_THREADS", "2")
        out = tmp_path / "env.csv"
        assert cli.main(["--config", cfg_path, "montecarlo", "--trials", "32",
                         "--out", str(out)]) == 0
        assert out.exists()

    def test_empty_sweep_usage_error(self, tmp_path):
        cfg = small_cfg()
        cfg["sweep"] = {"axis": "snr_db", "values": []}
        cfg_path = self._write_cfg(tmp_path, cfg)
        rc = cli.main(["--config", cfg_path, "--out-dir",
                       str(tmp_path / "x"), "sweep"])
        assert rc == 2
        assert not (tmp_path / "x").exists()

    def test_evaluate(self, tmp_path, capsys):
        cfg_path = self._write_cfg(tmp_path, small_cfg())
        rc = cli.main(["--config", cfg_path, "--out-dir", str(tmp_path / "e"),
                       "evaluate", "--precoder", "rzf", "--precoder", "zf"])
        assert rc == 0
        text = (tmp_path / "e" / "evaluate.csv").read_text().splitlines()
        assert text[0] == CSV_HEADER and len(text) == 3

    def test_optimize_zsearch_and_ports(self, tmp_path):
        cfg = small_cfg()
        cfg["scenario"]["dims"] = {"M": 6, "K": 3, "L": 6, "M_tot": 12}
        cfg["scenario"]["R_profile"] = {"d_c": 0.5, "alpha": 10.0, "beta": 5.0}
        cfg_path = self._write_cfg(tmp_path, cfg)
        out = tmp_path / "sol.json"
        rc = cli.main(["--config", cfg_path, "optimize", "--mode", "zsearch",
                       "--trials", "64", "--out", str(out)])
        assert rc == 0
        sol = json.loads(out.read_text())
        assert sol["z"] > 0 and "esr_monte_carlo" in sol
        rc = cli.main(["--config", cfg_path, "optimize", "--mode", "ports",
                       "--precoder", "zf", "--trials", "64",
                       "--out", str(out)])
        assert rc == 0
        sol = json.loads(out.read_text())
        assert len(sol["selected_ports"]) == 6

    def test_figure_fig8(self, tmp_path):
        rc = cli.main(["--out-dir", str(tmp_path / "f"), "figure", "fig8"])
        assert rc == 0
        lines = (tmp_path / "f" / "fig8.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER and len(lines) == 42
        assert (tmp_path / "f" / "fig8.svg").read_text().startswith("<svg")

    def test_unknown_figure(self, tmp_path):
        rc = cli.main(["--out-dir", str(tmp_path), "figure", "fig99"])
        assert rc == 2


class TestValidate:
    def test_clean_run_passes(self):
        checks = validate(None, trials=400, seed=7)
        names = {c["name"] for c in checks}
        assert {"correlation_psd", "backsubstitution", "probe_first_order",
                "probe_bilinear_traces", "de_vs_mc", "mc_thread_determinism"} <= names
        failed = [c for c in checks if not c["passed"]]
        assert not failed, f"failed checks: {failed}"

    def test_fault_injection_flags_block(self):
        # corrupting the interference block must be caught by the
        # second-order probe and localized to the lambda check
        def tamper(name, so):
            so.Lambda_kl = so.Lambda_kl * 1.5

        checks = validate(None, trials=400, seed=7, _tamper=tamper)
        by_name = {c["name"]: c for c in checks}
        assert not by_name["probe_bilinear_traces"]["passed"]
        assert by_name["probe_first_order"]["passed"]


class TestFigureRecipes:
    def test_fig1_csv_structure(self, tmp_path):
        from fasris.sweep import run_figure
        out = run_figure("fig1", tmp_path, trials=50, seed=1)
        lines = (tmp_path / "fig1.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER
        # 3 M-values x 5 SNR points x {DE, MC}
        assert len(lines) == 1 + 3 * 5 * 2
        assert sum(",de," in ln for ln in lines) == 15
        assert sum(",mc," in ln for ln in lines) == 15

    def test_rerun_byte_identical(self, tmp_path):
        from fasris.sweep import run_figure
        run_figure("fig8", tmp_path / "a", trials=10, seed=3)
        run_figure("fig8", tmp_path / "b", trials=10, seed=3)
        assert (tmp_path / "a" / "fig8.csv").read_bytes() == \
            (tmp_path / "b" / "fig8.csv").read_bytes()


class TestFigureSmoke:
    def test_every_recipe_produces_output(self, tmp_path):
        # minimal axis points and trial counts; exercises all eight recipes
        from fasris import sweep as sw
        outs = [
            sw.figure_fig1(tmp_path, 30, 1, 1, False, snrs=(80,), Ms=(12,)),
            sw.figure_fig2(tmp_path, 30, 1, 1, False, scales=(1,)),
            sw.figure_fig3(tmp_path, 30, 1, 1, False, snrs=(80,)),
            sw.figure_fig4(tmp_path, 30, 1, 1, False, snrs=(80,)),
            sw.figure_fig5(tmp_path, 30, 1, 1, False, Ws=(2.0,)),
            sw.figure_fig6(tmp_path, 30, 1, 1, False, Ks=(4,)),
            sw.figure_fig7(tmp_path, 30, 1, 1, False, Ms=(20,)),
            sw.figure_fig8(tmp_path, 30, 1, 1, False),
        ]
        for out in outs:
            assert out["csv"].exists() and out["svg"].exists()
            lines = out["csv"].read_text().splitlines()
            assert lines[0] == CSV_HEADER and len(lines) > 1


class TestValidateSkips:
    def test_t_zero_scenario_skips_cascaded_probes(self):
        cfg = small_cfg()
        cfg["scenario"]["gains_db"] = {"u": -60.0, "t": None}
        del cfg["scenario"]["geometry_gains"]
        checks = validate(cfg, trials=200, seed=5)
        by_name = {c["name"]: c for c in checks}
        assert "skipped" in by_name["probe_bilinear_traces"]["detail"]
        assert by_name["probe_bilinear_traces"]["passed"]


class TestCliJoint:
    def test_joint_mode_with_trace(self, tmp_path):
        import json as _json
        cfg = small_cfg()
        cfg["scenario"]["dims"] = {"M": 5, "K": 3, "L": 6, "M_tot": 10}
        path = tmp_path / "cfg.json"
        path.write_text(_json.dumps(cfg))
        out = tmp_path / "sol.json"
        trace = tmp_path / "trace.csv"
        rc = cli.main(["--config", str(path), "optimize", "--mode", "joint",
                       "--iterations", "1", "--trials", "48",
                       "--trace", str(trace), "--out", str(out)])
        assert rc == 0
        sol = _json.loads(out.read_text())
        assert len(sol["selected_ports"]) == 5
        assert len(sol["phi"]) == 6 and sol["z"] > 0
        assert sol["esr_monte_carlo"]["trials"] == 48
        lines = trace.read_text().splitlines()
        assert lines[0] == "stage,iteration,objective"
        assert any(ln.startswith("joint,") for ln in lines[1:])
