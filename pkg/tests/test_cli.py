import hashlib
import json
from pathlib import Path

import pytest
import yaml

from sociospec import cli
from sociospec.errors import ConfigError

SMALL_CONFIG = {
    "generator": {
        "n_languages": 2, "n_domains": 1, "filler_per_block": 20,
        "markers_per_group": 4, "marker_prob": [0.3, 0.0],
        "min_len": 6, "max_len": 12, "n_per_cell": 60,
    },
    "encoder": {"max_len": 16, "d_model": 16, "n_layers": 1,
                "n_heads": 2, "d_ff": 32},
    "specialize": {"method": "mtl-cls", "epochs": 1, "learning_rate": 1e-3,
                   "n_per_group": {"gender": 40, "age": 20}},
    "finetune": {"task": "SA", "epochs": 1, "learning_rates": [1e-3]},
    "grid": {"languages": [0], "methods": ["none", "MLM"],
             "tasks": ["SA"], "seeds": [0]},
    "analysis": {"perplexity": 5.0, "iterations": 60, "n_projection": 16},
}


def _write_config(tmp_path, **extra) -> str:
    cfg = dict(SMALL_CONFIG, **extra)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return str(path)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- config handling ------------------------------------------------------------


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigError, match="no_such_key"):
        cli._merge(cli.DEFAULT_CONFIG, {"no_such_key": 1})
    with pytest.raises(ConfigError, match="generator.bogus"):
        cli._merge(cli.DEFAULT_CONFIG, {"generator": {"bogus": 1}})


def test_flag_overrides(tmp_path):
    path = _write_config(tmp_path)
    cfg = cli.load_config(path, seed=99, out="elsewhere")
    assert cfg["seed"] == 99
    assert cfg["out"] == "elsewhere"
    assert cfg["generator"]["n_languages"] == 2
    # untouched defaults survive the merge
    assert cfg["specialize"]["patience"] == 3


def test_non_mapping_config_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        cli.load_config(str(path), None, None)


# -- full pipeline --------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run generate -> specialize -> finetune -> grid -> analyze -> project
    -> report once; individual tests inspect the artifacts."""
    root = tmp_path_factory.mktemp("run")
    config = _write_config(root)
    out = str(root / "out")
    base = ["--config", config, "--seed", "7", "--out", out]
    assert cli.main(["generate", *base]) == 0
    assert cli.main(["specialize", *base]) == 0
    ckpt = f"{out}/specialized.MTL-W-CLS.ckpt.best"
    assert cli.main(["finetune", *base, "--checkpoint", ckpt]) == 0
    assert cli.main(["grid", *base]) == 0
    assert cli.main(["analyze", *base]) == 0
    assert cli.main(["project", *base, "--checkpoint", ckpt]) == 0
    assert cli.main(["report", *base]) == 0
    return Path(out), config


def test_generate_artifacts(pipeline):
    out, _ = pipeline
    corpus = out / "corpus"
    for name in ("vocab.txt", "train.jsonl", "dev.jsonl", "test.jsonl",
                 "specialization.jsonl", "manifest.csv"):
        assert (corpus / name).exists(), name
    manifest = (corpus / "manifest.csv").read_text(encoding="utf-8").splitlines()
    assert manifest[0] == "language,domain,group,n_specialization,n_SA,n_TD,n_AC"
    assert len(manifest) == 1 + 2 * 1 * 2  # one row per (language, domain, group)


def test_specialize_artifacts(pipeline):
    out, _ = pipeline
    assert (out / "specialized.MTL-W-CLS.ckpt.best").exists()
    log = (out / "specialize.MTL-W-CLS.log.jsonl").read_text(encoding="utf-8")
    rows = [json.loads(ln) for ln in log.splitlines()]
    assert len(rows) == 1
    assert {"epoch", "L_mlm", "L_socio", "eta_mlm", "eta_socio",
            "dev_metric"} <= set(rows[0])


def test_finetune_artifacts(pipeline):
    out, _ = pipeline
    metrics = json.loads((out / "finetune.SA.X.json").read_text(encoding="utf-8"))
    assert metrics["lr"] == 1e-3
    assert 0.0 <= metrics["test_f1"] <= 1.0
    assert (out / "finetuned.SA.X.ckpt").exists()


def test_grid_and_reports(pipeline):
    out, _ = pipeline
    results = (out / "results.csv").read_text(encoding="utf-8").splitlines()
    assert results[0] == ",".join(
        ["language", "method", "mono_multi", "domain", "portion",
         "factor", "task", "seed", "f1"])
    assert len(results) == 1 + 2  # methods none + MLM

    report = (out / "report.csv").read_text(encoding="utf-8")
    assert "# factor=gender task=SA" in report

    regression = (out / "regression_report.csv").read_text(encoding="utf-8")
    assert regression.splitlines()[-1].startswith("SA,")


def test_project_artifacts(pipeline):
    out, _ = pipeline
    proj = (out / "projection.csv").read_text(encoding="utf-8").splitlines()
    assert proj[0] == "x,y,language,group,factor"
    assert len(proj) == 17
    assert (out / "projection.svg").read_text(encoding="utf-8").startswith("<svg")
    purity = json.loads((out / "purity.json").read_text(encoding="utf-8"))
    assert set(purity) == {"language", "group", "domain"}
    assert purity["domain"] is None  # single-level field carries no clusters
    assert all(0.0 <= v <= 1.0 for k, v in purity.items() if v is not None)


def test_resolved_configs_written(pipeline):
    out, _ = pipeline
    for cmd in ("generate", "specialize", "finetune", "grid", "analyze",
                "project", "report"):
        snap = yaml.safe_load(
            (out / f"resolved_config.{cmd}.yaml").read_text(encoding="utf-8"))
        assert snap["command"] == cmd
        assert snap["seed"] == 7


def test_grid_resume_skips_done_cells(pipeline):
    out, config = pipeline
    results = out / "results.csv"
    before = _sha(results)
    base = ["--config", config, "--seed", "7", "--out", str(out)]
    assert cli.main(["grid", *base, "--resume"]) == 0
    assert _sha(results) == before


def test_stage_determinism(tmp_path):
    """Identical config and seed -> checksum-identical artifacts."""
    hashes = []
    for run in ("a", "b"):
        out = tmp_path / run
        config = _write_config(tmp_path)
        base = ["--config", config, "--seed", "3", "--out", str(out)]
        assert cli.main(["generate", *base]) == 0
        assert cli.main(["specialize", *base]) == 0
        hashes.append({
            "corpus": _sha(out / "corpus" / "train.jsonl"),
            "vocab": _sha(out / "corpus" / "vocab.txt"),
            "manifest": _sha(out / "corpus" / "manifest.csv"),
            "ckpt": _sha(out / "specialized.MTL-W-CLS.ckpt.best"),
            "log": _sha(out / "specialize.MTL-W-CLS.log.jsonl"),
        })
    assert hashes[0] == hashes[1]


# -- exit codes -----------------------------------------------------------------


def test_exit_code_1_for_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n", encoding="utf-8")
    assert cli.main(["generate", "--config", str(bad)]) == 1
    assert "config error" in capsys.readouterr().err


def test_exit_code_2_for_missing_corpus(tmp_path, capsys):
    config = _write_config(tmp_path)
    out = str(tmp_path / "empty")
    assert cli.main(["specialize", "--config", config, "--out", out]) == 2
    assert "generate" in capsys.readouterr().err


def test_project_requires_checkpoint(tmp_path, capsys):
    config = _write_config(tmp_path)
    assert cli.main(["project", "--config", config]) == 1
    assert "checkpoint" in capsys.readouterr().err
