import json
import subprocess
import sys

import numpy as np
import pytest

import sepunmix as su
from sepunmix.errors import ConfigError
from sepunmix.experiments import (
    ExperimentConfig,
    delta_ladder,
    generate_noise,
    run_experiment,
)


def tiny_config(**kw):
    base = dict(
        n_samples=400,
        realizations=2,
        samples_per_radius=6,
        n_radii=5,
        n_deltas=4,
        trials=3,
        coherence_x_grid=6,
        sigma_grid_resolution=4,
        block_norm_grid=8,
        max_iters=200,
        seed=11,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestGenerateNoise:
    def test_exact_snr_zero_db(self):
        signal = np.array([3.0, 4.0])
        w = generate_noise(signal, 0.0, np.random.default_rng(0))
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(signal))

    def test_exact_snr_twenty_db(self):
        signal = np.random.default_rng(1).standard_normal(64)
        w = generate_noise(signal, 20.0, np.random.default_rng(2))
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(signal) / 10.0)

    def test_zero_signal_rejected(self):
        with pytest.raises(su.errors.DomainError):
            generate_noise(np.zeros(4), 0.0, np.random.default_rng(0))

    def test_isotropic_directions(self):
        n = 8
        rng = np.random.default_rng(3)
        signal = np.ones(n)
        draws = np.stack(
            [generate_noise(signal, 0.0, rng) for _ in range(10_000)]
        )
        draws /= np.linalg.norm(draws, axis=1, keepdims=True)
        cov = draws.T @ draws / draws.shape[0]
        assert np.max(np.abs(cov - np.eye(n) / n)) < 0.05 / n


class TestConfig:
    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(experiment="nope")

    def test_packing_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(delta=0.2, p=3, q=2)

    def test_json_roundtrip(self, tmp_path):
        cfg = tiny_config(experiment="coherence")
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg.to_dict()))
        again = ExperimentConfig.from_json(path)
        assert again == cfg

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"experiment": "coherence", "bogus": 1}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(path)

    def test_delta_ladder_spans_a_decade(self):
        cfg = tiny_config(experiment="coherence", n_deltas=8)
        ladder = delta_ladder(cfg)
        assert ladder.size == 8
        assert ladder[-1] / ladder[0] == pytest.approx(10.0)
        assert ladder[0] < cfg.delta < ladder[-1]


class TestOutputs:
    def test_reproducible_bytes(self, tmp_path):
        paths = []
        for sub in ("a", "b"):
            cfg = tiny_config(experiment="coherence", out_dir=str(tmp_path / sub))
            out = run_experiment(cfg)
            paths.append((out / "data.csv").read_bytes())
        assert paths[0] == paths[1]

    def test_manifest_completeness(self, tmp_path):
        cfg = tiny_config(experiment="basin-ls", out_dir=str(tmp_path))
        out = run_experiment(cfg)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == cfg.seed
        assert manifest["config"]["experiment"] == "basin-ls"
        assert "config_hash" in manifest and len(manifest["config_hash"]) == 64
        constants = manifest["constants"]
        for key in ("sigma", "sigma_provenance", "sigma_min_tilde", "c1", "c2", "c_vp",
                    "K_exact", "K_paper", "k_vp"):
            assert key in constants
        assert manifest["artifact_version"] == su.__version__

    def test_basin_csv_schema(self, tmp_path):
        cfg = tiny_config(experiment="basin-vp", snr_db=0.0, out_dir=str(tmp_path))
        out = run_experiment(cfg)
        header = (out / "data.csv").read_text().splitlines()[0].split(",")
        for col in ("radius", "trial", "lambda_min", "envelope", "analytical",
                    "restricted_envelope", "lambda_mean", "lambda_lo", "lambda_hi",
                    "baseline_lambda"):
            assert col in header

    def test_stability_csv_schema(self, tmp_path):
        cfg = tiny_config(experiment="stability", snr_db=[0.0, 10.0], out_dir=str(tmp_path))
        out = run_experiment(cfg)
        header = (out / "data.csv").read_text().splitlines()[0].split(",")
        for col in ("snr_db", "realization", "rho_error_joint", "rho_error_vp",
                    "bound_ls", "bound_vp", "cond_j", "cond_jvp", "censored"):
            assert col in header


class TestSelfCheck:
    def test_fresh_checkout_passes(self, tmp_path):
        cfg = tiny_config(experiment="self-check", out_dir=str(tmp_path))
        out = run_experiment(cfg)
        rows = (out / "data.csv").read_text().splitlines()[1:]
        assert all(row.split(",")[1] == "1" for row in rows)

    def test_row_count_matches_registry(self, tmp_path):
        from sepunmix.selfcheck import INVARIANTS

        cfg = tiny_config(experiment="self-check", out_dir=str(tmp_path))
        out = run_experiment(cfg)
        rows = (out / "data.csv").read_text().splitlines()[1:]
        assert len(rows) == len(INVARIANTS)

    def test_fault_injection_fails_derivative_invariant(self, tmp_path, monkeypatch):
        from sepunmix.experiments import SelfCheckFailure
        from sepunmix.kernels import ULaplaceKernel

        true_dx = ULaplaceKernel.dx

        def flipped(self, x, t, k):
            out = true_dx(self, x, t, k)
            return -out if k == 1 else out

        monkeypatch.setattr(ULaplaceKernel, "dx", flipped)
        cfg = tiny_config(experiment="self-check", out_dir=str(tmp_path))
        with pytest.raises(SelfCheckFailure) as err:
            run_experiment(cfg)
        assert "kernel_derivative_consistency" in err.value.failed


class TestCli:
    def _run(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "sepunmix.cli", *args], capture_output=True, text=True
        )

    def test_self_check_exit_zero(self, tmp_path):
        r = self._run("self-check", "--seed", "5", "--out", str(tmp_path))
        assert r.returncode == 0
        assert (tmp_path / "self-check" / "data.csv").exists()

    def test_unknown_experiment_exit_three(self, tmp_path):
        r = self._run("nonsense", "--out", str(tmp_path))
        assert r.returncode == 3

    def test_bad_config_exit_three(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"delta\": -1}")
        r = self._run("coherence", "--config", str(bad), "--out", str(tmp_path))
        assert r.returncode == 3

    def test_config_file_drives_run(self, tmp_path):
        cfg = tiny_config(experiment="coherence", out_dir=str(tmp_path / "ignored"))
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg.to_dict()))
        r = self._run("coherence", "--config", str(path), "--out", str(tmp_path / "real"),
                      "--seed", "11")
        assert r.returncode == 0
        assert (tmp_path / "real" / "coherence" / "data.csv").exists()
