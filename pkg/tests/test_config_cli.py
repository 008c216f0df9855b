from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import pytest
import yaml

from awpsp.cli import compare_runs, load_run_dir, main, run_metrics
from awpsp.config import ConfigError, ExperimentConfig, config_from_dict, config_to_dict, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = {
    "name": "tiny",
    "n_logical_clients": 8,
    "n_physical_workers": 3,
    "rounds": 4,
    "seeds": [0, 1],
    "data": {"n_classes": 4, "n_features": 3, "labels_per_client": 2, "train_per_class": 20, "test_per_class": 5},
    "traces": {"n_groups": 2, "steps": 20, "p_on": 0.8},
    "selection": {"target_count": 4},
}


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.availability.lambda_ == 0.9
        assert cfg.availability.tau_lat_ms == 100.0
        assert cfg.availability.tau_loss == 0.4
        assert cfg.availability.tau_c == 0.7
        assert cfg.overlay.k_neighbors == 4
        assert cfg.target_selection_count == 5
        assert (cfg.alpha, cfg.tau_corr) == (0.5, 0.5)
        assert cfg.selection.freshness_tau == 10.0

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
    def test_shipped_configs_load_and_round_trip(self, path):
        cfg = load_config(path)
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_symbol_names(self):
        cfg = config_from_dict({"availability": {"lambda": 0.8}, "correlation": {"alpha": 0.2, "tau_corr": 0.6}})
        assert cfg.availability.lambda_ == 0.8 and cfg.alpha == 0.2 and cfg.tau_corr == 0.6
        assert config_to_dict(cfg)["availability"]["lambda"] == 0.8

    def test_all_problems_reported(self):
        raw = {
            "bogus": 1,
            "rounds": -1,
            "seeds": [],
            "availability": {"lambda": 1.5},
            "failure": {"seed": 3},
            "correlation": {"alpha": 2, "extra": 1},
            "data": {"labels_per_client": 20},
            "traces": {"assignment": "diagonal"},
            "policies": ["nope"],
        }
        with pytest.raises(ConfigError) as info:
            config_from_dict(raw)
        text = "\n".join(info.value.problems)
        for needle in ("bogus", "rounds", "seeds", "availability", "failure.seed", "correlation.alpha",
                       "correlation.extra", "labels_per_client", "assignment", "policies"):
            assert needle in text, needle

    def test_capacity_checks(self):
        with pytest.raises(ConfigError):
            config_from_dict({"n_logical_clients": 3, "selection": {"target_count": 5}, "traces": {"n_groups": 1}})
        with pytest.raises(ConfigError):
            config_from_dict({"data": {"train_per_class": 5}})


def write_tiny(tmp_path, **over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestSimulate:
    def test_outputs_and_determinism(self, tmp_path, monkeypatch):
        monkeypatch.delenv("AWPSP_OUTPUT_DIR", raising=False)
        cfg = write_tiny(tmp_path)
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert main(["simulate", str(cfg), "--output-dir", str(out)]) == 0
            outs.append(out / "tiny")
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
        assert Path("aw_psp/seed-0.jsonl") in files and Path("summary.csv") in files
        assert not any(str(f).endswith(".partial") for f in files)
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
        rows = list(csv.reader(io.StringIO((outs[0] / "summary.csv").read_text())))
        assert rows[0][:3] == ["setting", "seed", "mean_accuracy"] and len(rows) == 5

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AWPSP_OUTPUT_DIR", str(tmp_path / "env"))
        assert main(["simulate", str(write_tiny(tmp_path)), "--policy", "classic_psp", "--seeds", "1"]) == 0
        assert (tmp_path / "env" / "tiny" / "classic_psp" / "seed-1.jsonl").exists()
        assert not (tmp_path / "env" / "tiny" / "aw_psp").exists()

    def test_invalid_config_runs_nothing(self, tmp_path, capsys):
        path = write_tiny(tmp_path, rounds="many", output_dir=str(tmp_path / "never"))
        assert main(["simulate", str(path)]) == 2
        assert "rounds" in capsys.readouterr().err
        assert not (tmp_path / "never").exists()

    def test_interrupted_run_stays_partial(self, tmp_path, monkeypatch):
        import awpsp.cli as cli

        def boom(cfg, seed, policy, env=None, on_record=None):
            on_record({"type": "init"})
            raise KeyboardInterrupt

        monkeypatch.setattr(cli, "run_experiment", boom)
        with pytest.raises(KeyboardInterrupt):
            main(["simulate", str(write_tiny(tmp_path)), "--output-dir", str(tmp_path / "o")])
        seed_dir = tmp_path / "o" / "tiny" / "aw_psp"
        assert (seed_dir / "seed-0.jsonl.partial").exists()
        assert not (seed_dir / "seed-0.jsonl").exists()


class TestCompare:
    @pytest.fixture()
    def logs(self, tmp_path, monkeypatch):
        monkeypatch.delenv("AWPSP_OUTPUT_DIR", raising=False)
        assert main(["simulate", str(write_tiny(tmp_path)), "--output-dir", str(tmp_path / "o")]) == 0
        return tmp_path / "o" / "tiny"

    def test_identical_is_zero(self, logs, capsys):
        assert main(["compare", str(logs / "aw_psp"), str(logs / "aw_psp")]) == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        for row in rows[1:]:
            assert row[3] in ("0.000000", "--")

    def test_deltas_match_recomputation(self, logs, tmp_path):
        a, b = load_run_dir(logs / "aw_psp"), load_run_dir(logs / "classic_psp")
        rows = {r["metric"]: r for r in compare_runs(a, b)}
        for s in a:
            ra = [r for r in a[s] if r["type"] == "round"]
            rb = [r for r in b[s] if r["type"] == "round"]
            kl = lambda rs: sum(r["fairness"]["kl_divergence"] for r in rs if r["fairness"]["kl_divergence"] is not None) / max(1, sum(r["fairness"]["kl_divergence"] is not None for r in rs))
            assert rows["mean_kl"]["per_seed"][s] == pytest.approx(kl(ra) - kl(rb), abs=1e-12)
            assert rows["final_gini"]["per_seed"][s] == pytest.approx(ra[-1]["fairness"]["gini"] - rb[-1]["fairness"]["gini"])
        assert run_metrics(a[0])["rounds"] == 4
        out = tmp_path / "cmp.csv"
        assert main(["compare", str(logs / "aw_psp"), str(logs / "classic_psp"), "--out", str(out)]) == 0
        assert out.read_text().startswith("metric,")

    def test_mismatched_rounds(self, logs, tmp_path, capsys):
        other = tmp_path / "short"
        other.mkdir()
        for f in (logs / "aw_psp").glob("seed-*.jsonl"):
            lines = f.read_text().splitlines()
            (other / f.name).write_text("\n".join(l for l in lines if json.loads(l).get("round") != 3) + "\n")
        assert main(["compare", str(logs / "aw_psp"), str(other)]) == 2
        assert "round counts differ" in capsys.readouterr().err

    def test_missing_dir(self, tmp_path):
        assert main(["compare", str(tmp_path), str(tmp_path)]) == 2


class TestGenTraces:
    def test_deterministic_bytes(self, tmp_path, monkeypatch):
        monkeypatch.delenv("AWPSP_OUTPUT_DIR", raising=False)
        for k in range(2):
            assert main(["gen-traces", "--nodes", "100", "--groups", "10", "--seed", "1", "--steps", "200",
                         "--out", str(tmp_path / str(k))]) == 0
        for name in ("traces.json", "correlation.csv", "histogram.csv"):
            assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()

    def test_ingest(self, tmp_path):
        ev = tmp_path / "ev.csv"
        ev.write_text("device_id,timestamp,kind\na,0,wifi_on\na,0,charge_on\na,300,wifi_off\nb,0,wifi_on\nb,60,charge_on\nb,240,charge_off\n")
        assert main(["gen-traces", "--ingest", str(ev), "--step-seconds", "60", "--out", str(tmp_path / "o")]) == 0
        data = json.loads((tmp_path / "o" / "traces.json").read_text())
        assert len(data) == 2

    def test_malformed(self, tmp_path, capsys):
        ev = tmp_path / "bad.csv"
        ev.write_text("device_id,timestamp,kind\na,zero,wifi_on\na,5,toaster\n")
        assert main(["gen-traces", "--ingest", str(ev), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "bad.csv:2:" in err and "bad.csv:3:" in err


class TestVerifyTheory:
    def test_subset_reproducible(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        assert main(["verify-theory", "--check", "hazard", "--check", "threshold", "--seed", "4", "--out", str(out)]) == 0
        first = capsys.readouterr().out
        assert main(["verify-theory", "--check", "hazard", "--check", "threshold", "--seed", "4"]) == 0
        assert capsys.readouterr().out == first
        assert "PASS" in first and out.read_text().startswith("check,result")

    def test_unknown(self, capsys):
        assert main(["verify-theory", "--check", "nope"]) == 2
        assert "frechet" in capsys.readouterr().err
