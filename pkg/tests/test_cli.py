import csv
import json
import math

import numpy as np
import pytest

from mfgconsume.cli import ConfigError, load_config, main, run, sweep_sensitivity


def write_config(tmp_path, name="scenario.json", **overrides):
    cfg = {
        "horizon": 1.0,
        "n_steps": 128,
        "population": [
            {"weight": 1.0, "x0": 1.0, "gamma": 0.5, "theta": 0.5, "alpha": 1.0,
             "h": 0.1, "sigma": 0.2, "sigma0": 0.1}
        ],
        "mc": {"n_samples": 4000, "n_agents": 4000, "n_w0_paths": 2, "seed": 99},
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestLoadConfig:
    def test_minimal_defaults(self, tmp_path):
        path = tmp_path / "min.json"
        path.write_text(json.dumps({"population": [{"gamma": 0.5, "h": 0.1, "sigma": 0.2, "sigma0": 0.0}]}))
        cfg = load_config(path)
        assert cfg.horizon == 1.0
        assert cfg.n_steps == 2000
        assert cfg.population.types[0].theta == 0.0
        assert cfg.population.types[0].alpha == 1.0
        assert cfg.bounds.pi_cap == 10.0
        assert cfg.tolerances.residual_tol == 1e-4

    def test_gamma_zero_rejected_with_context(self, tmp_path):
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["population"][0]["gamma"] = 0.0
        path.write_text(json.dumps(raw))
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert "gamma_nonzero" in str(exc.value)
        assert "type 0" in str(exc.value)

    def test_wrong_curve_length_is_structural(self, tmp_path):
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["population"][0]["h"] = [0.1, 0.1, 0.1]
        path.write_text(json.dumps(raw))
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert "129" in str(exc.value)

    def test_curve_arrays_accepted(self, tmp_path):
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["population"][0]["h"] = list(np.linspace(0.05, 0.15, 129))
        path.write_text(json.dumps(raw))
        cfg = load_config(path)
        assert cfg.population.types[0].h(0.0) == 0.05

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"population": [], "horizonn": 2.0}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_parse_error_has_location(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\n  \"horizon\": ,\n}")
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert "line 2" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_overrides(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path, seed=5, steps=64, samples=1000, out_dir="elsewhere")
        assert cfg.mc.seed == 5
        assert cfg.n_steps == 64
        assert cfg.mc.n_samples == 1000
        assert cfg.out_dir == "elsewhere"

    def test_nonpositive_tolerance_rejected(self, tmp_path):
        path = write_config(tmp_path, tolerances={"residual_tol": 0.0})
        with pytest.raises(ConfigError):
            load_config(path)


class TestSolveCommand:
    def test_merton_scenario_constant_column(self, tmp_path):
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["population"][0].update(theta=0.0, sigma0=0.0)
        path.write_text(json.dumps(raw))
        cfg = load_config(path, out_dir=str(tmp_path / "out"))
        assert run("solve", cfg) == 0
        rows = read_csv(tmp_path / "out" / "equilibrium.csv")
        pis = {r["pi_star"] for r in rows}
        assert len(pis) == 1
        assert float(pis.pop()) == pytest.approx(5.0, rel=1e-14)

    def test_csv_schema(self, tmp_path):
        cfg = load_config(write_config(tmp_path), out_dir=str(tmp_path / "out"))
        run("solve", cfg)
        with open(tmp_path / "out" / "equilibrium.csv", newline="") as f:
            header = f.readline().strip()
        assert header == "t,type,pi_star,c_star,y_tilde,phi,psi,z0"

    def test_manifest_contents(self, tmp_path):
        cfg = load_config(write_config(tmp_path), out_dir=str(tmp_path / "out"))
        run("solve", cfg)
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert man["seed"] == 99
        assert man["ok"] is True
        assert "equilibrium.csv" in man["artifacts"]
        assert len(man["config_hash"]) == 64
        assert all(c["passed"] for c in man["checks"])

    def test_round_trip_bit_identical(self, tmp_path):
        p = write_config(tmp_path)
        c1 = load_config(p, out_dir=str(tmp_path / "a"))
        c2 = load_config(p, out_dir=str(tmp_path / "b"))
        run("solve", c1)
        run("solve", c2)
        a = (tmp_path / "a" / "equilibrium.csv").read_bytes()
        b = (tmp_path / "b" / "equilibrium.csv").read_bytes()
        assert a == b

    def test_csv_floats_round_trip(self, tmp_path):
        from mfgconsume import solve_equilibrium

        cfg = load_config(write_config(tmp_path), out_dir=str(tmp_path / "out"))
        run("solve", cfg)
        sol = solve_equilibrium(cfg.population)
        rows = read_csv(tmp_path / "out" / "equilibrium.csv")
        for i in (0, 64, 128):
            row = rows[i]
            assert float(row["pi_star"]) == sol.pi_star[0, i]
            assert float(row["c_star"]) == sol.c_star[0, i]
            assert float(row["y_tilde"]) == sol.y_tilde[0, i]


class TestVerifyCommand:
    def test_reference_passes(self, tmp_path):
        cfg = load_config(write_config(tmp_path, n_steps=400), out_dir=str(tmp_path / "out"))
        assert run("verify", cfg) == 0
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        names = {c["name"] for c in man["checks"]}
        assert {"residual_sup", "j_identity_relative", "riccati_relative_sup",
                "mop_drift_max", "mop_drift_at_optimum", "relation_investment",
                "relation_nu_hat", "relation_z0"} <= names

    def test_impossible_tolerance_fails_with_exit_one(self, tmp_path):
        path = write_config(tmp_path, tolerances={"residual_tol": 1e-300})
        cfg = load_config(path, out_dir=str(tmp_path / "out"))
        assert run("verify", cfg) == 1
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert man["ok"] is False

    def test_rerun_reproduces_checks_bit_identically(self, tmp_path):
        p = write_config(tmp_path)
        run("verify", load_config(p, out_dir=str(tmp_path / "a")))
        run("verify", load_config(p, out_dir=str(tmp_path / "b")))
        a = (tmp_path / "a" / "manifest.json").read_bytes()
        b = (tmp_path / "b" / "manifest.json").read_bytes()
        assert a == b


class TestSimulateAndDeviate:
    def test_simulate(self, tmp_path):
        cfg = load_config(write_config(tmp_path), out_dir=str(tmp_path / "out"))
        assert run("simulate", cfg) == 0
        assert (tmp_path / "out" / "flow.csv").exists()
        rows = read_csv(tmp_path / "out" / "consistency.csv")
        assert len(rows) == 10  # 2 paths x 5 probes
        assert all(float(r["deviation_units"]) <= 3.0 for r in rows)

    def test_deviate(self, tmp_path):
        path = write_config(tmp_path, mc={"n_samples": 30000, "seed": 99})
        cfg = load_config(path, out_dir=str(tmp_path / "out"))
        code = run("deviate", cfg)
        rows = read_csv(tmp_path / "out" / "deviations.csv")
        assert len(rows) == 20
        assert all(r["flagged"] == "0" for r in rows)
        assert code == 0


class TestSweep:
    def test_individual_h_strictly_increasing(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        rows = sweep_sensitivity(cfg, "h", np.linspace(0.05, 0.3, 12), "individual")
        pis = [r[1] for r in rows]
        assert all(b > a for a, b in zip(pis, pis[1:]))
        assert not any(r[3] for r in rows)

    def test_population_h_decreasing_for_positive_gamma(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        rows = sweep_sensitivity(cfg, "h", np.linspace(0.05, 0.3, 12), "population")
        pis = [r[1] for r in rows]
        assert all(b < a for a, b in zip(pis, pis[1:]))

    def test_sigma0_without_competition_decreasing(self, tmp_path):
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["population"][0]["theta"] = 0.0
        path.write_text(json.dumps(raw))
        cfg = load_config(path)
        rows = sweep_sensitivity(cfg, "sigma0", np.linspace(0.01, 2.0, 25), "individual")
        pis = [r[1] for r in rows]
        assert all(b < a for a, b in zip(pis, pis[1:]))

    def test_out_of_assumption_rows_flagged_not_dropped(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        rows = sweep_sensitivity(cfg, "gamma", np.linspace(-0.5, 0.5, 11), "individual")
        assert len(rows) == 11
        flagged = [r for r in rows if r[3]]
        assert flagged  # gamma = 0 sits in the range
        assert any(math.isnan(r[1]) for r in flagged)

    def test_threshold_marker_in_manifest(self, tmp_path):
        # scenario whose slope sign change sits inside the sweep range
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["population"][0].update(theta=1.0, sigma0=0.3)
        path.write_text(json.dumps(raw))
        cfg = load_config(path, out_dir=str(tmp_path / "out"))
        code = run("sweep", cfg, parameter="sigma0", lo=0.01, hi=2.0, points=120, mode="individual")
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert "thresholds" in man
        assert any(c["name"] == "threshold_within_one_cell" and c["passed"] for c in man["checks"])
        assert code == 0

    def test_bad_parameter(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        with pytest.raises(ConfigError):
            sweep_sensitivity(cfg, "rho", [0.1], "individual")


class TestMainEntry:
    def test_usage_error_exit_two(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 2

    def test_solve_via_main(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 0

    def test_seed_override_recorded(self, tmp_path):
        path = write_config(tmp_path)
        main(["solve", "--config", str(path), "--out", str(tmp_path / "o"), "--seed", "7"])
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["seed"] == 7
