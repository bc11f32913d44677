"""Command-line orchestration: generate -> specialize -> finetune -> grid
-> analyze / project / report, all driven by one YAML config per run.

Flags override config keys. All randomness derives from the root seed via
named child seeds, so stages can be re-run independently and every
artifact is checksum-reproducible (no timestamps are written).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import corpus as cp
from . import finetune_eval as fe
from .analysis import (cluster_purity, regression_report,
                       sample_projection_inputs, save_projection_csv,
                       save_projection_svg, tsne)
from .encoder import EncoderConfig, EncoderModel, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericError, SociospecError
from .seeding import child_seed
from .specialize import TrainConfig, canonical_method, train

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "out": "runs/default",
    "generator": {
        "n_languages": 5,
        "n_domains": 2,
        "filler_per_block": 40,
        "markers_per_group": 8,
        "cues_per_class": 2,
        "marker_prob": [0.1, 0.0],
        "sentiment_cue_prob": 0.15,
        "topic_cue_prob": 0.15,
        "min_len": 8,
        "max_len": 24,
        "n_per_cell": 100,
        "specialization_fraction": 0.5,
    },
    "encoder": {
        "max_len": 128,
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 4,
        "d_ff": 128,
        "dropout_prob": 0.1,
    },
    "specialize": {
        "method": "mlm",
        "epochs": 30,
        "batch_size": 32,
        "learning_rate": 5e-5,
        "patience": 3,
        "clip_norm": 1.0,
        # paper-scale 100K gender / 50K age, scaled down at the 2:1 ratio
        "n_per_group": {"gender": 200, "age": 100},
        "languages": "all",
        "domain": "in",
        "factor": "gender",
    },
    "finetune": {
        "task": "AC-SA",
        "portion": "X",
        "factor": "gender",
        "epochs": 20,
        "batch_size": 32,
        "learning_rates": [5e-5, 1e-5, 5e-6, 1e-6],
        "patience": 5,
        "clip_norm": 1.0,
    },
    "grid": {
        "languages": [0, 1, 2, 3, 4],
        "methods": ["none", "MLM", "MTL-W-CLS", "MTL-W-CTX"],
        "mono_multi": ["multi"],
        "domains": ["in"],
        "portions": ["X"],
        "factors": ["gender"],
        "tasks": ["AC-SA"],
        "seeds": [0],
    },
    "analysis": {
        "perplexity": 30.0,
        "iterations": 1000,
        "n_projection": 2000,
        "weight_threshold": 0.2,
    },
}


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = dict(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict) \
                and key != "n_per_group":
            out[key] = _merge(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | None, seed: int | None, out: str | None) -> dict:
    overrides: dict = {}
    if path:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        overrides = loaded
    cfg = _merge(DEFAULT_CONFIG, overrides)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    return cfg


def _write_resolved(cfg: dict, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = dict(cfg)
    snapshot["command"] = command
    (out_dir / f"resolved_config.{command}.yaml").write_text(
        yaml.safe_dump(snapshot, sort_keys=True), encoding="utf-8")


def _generator_config(cfg: dict) -> tuple[cp.GeneratorConfig, int, float]:
    g = cfg["generator"]
    gen = cp.GeneratorConfig(
        n_languages=g["n_languages"], n_domains=g["n_domains"],
        filler_per_block=g["filler_per_block"], markers_per_group=g["markers_per_group"],
        cues_per_class=g["cues_per_class"], marker_prob=tuple(g["marker_prob"]),
        sentiment_cue_prob=g["sentiment_cue_prob"], topic_cue_prob=g["topic_cue_prob"],
        min_len=g["min_len"], max_len=g["max_len"],
        seed=child_seed(cfg["seed"], "generator"),
    )
    return gen, g["n_per_cell"], g["specialization_fraction"]


# -- corpus artifacts ---------------------------------------------------------


def _corpus_dir(cfg: dict) -> Path:
    return Path(cfg["out"]) / "corpus"


def cmd_generate(cfg: dict) -> int:
    gen, n_per_cell, spec_frac = _generator_config(cfg)
    reviews, layout = cp.generate(gen, n_per_cell)
    splits = cp.split(reviews, child_seed(cfg["seed"], "split"), spec_frac)
    out = _corpus_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    layout.vocab.save(out / "vocab.txt")
    for name, part in (("train", splits.train), ("dev", splits.dev),
                       ("test", splits.test), ("specialization", splits.specialization)):
        cp.save_corpus(part, layout.vocab, out / f"{name}.jsonl")

    lines = ["language,domain,group,n_specialization,n_SA,n_TD,n_AC"]
    task_all = splits.train + splits.dev + splits.test
    for lang in range(gen.n_languages):
        for dom in range(gen.n_domains):
            cell_task = [r for r in task_all if r.language == lang and r.domain == dom]
            n_bal = len(cp.balance_groups(cell_task, 0)) if cell_task else 0
            for grp in range(cp.N_GROUPS):
                n_spec = sum(1 for r in splits.specialization
                             if (r.language, r.domain, r.group) == (lang, dom, grp))
                n_task = sum(1 for r in cell_task if r.group == grp)
                lines.append(f"{lang},{dom},{grp},{n_spec},{n_task},{n_task},{n_bal // 2}")
    (out / "manifest.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_resolved(cfg, Path(cfg["out"]), "generate")
    return 0


def _load_splits(cfg: dict) -> tuple[cp.SplitSet, cp.Vocabulary]:
    out = _corpus_dir(cfg)
    if not (out / "vocab.txt").exists():
        raise DataError(f"missing corpus at {out}; run `sociospec generate` first")
    vocab = cp.Vocabulary.load(out / "vocab.txt")
    max_len = cfg["encoder"]["max_len"]
    splits = cp.SplitSet()
    for name in ("train", "dev", "test", "specialization"):
        part = cp.ingest(out / f"{name}.jsonl", vocab, max_len=max_len)
        setattr(splits, name, part)
    return splits, vocab


def _encoder_config(cfg: dict, vocab_size: int, seed_label: str) -> EncoderConfig:
    e = cfg["encoder"]
    return EncoderConfig(vocab_size=vocab_size, max_len=e["max_len"],
                         d_model=e["d_model"], n_layers=e["n_layers"],
                         n_heads=e["n_heads"], d_ff=e["d_ff"],
                         dropout_prob=e["dropout_prob"],
                         seed=child_seed(cfg["seed"], seed_label))


def _specialization_pool(splits: cp.SplitSet, spec_cfg: dict, seed: int) -> list[cp.Review]:
    domain = 0 if spec_cfg["domain"] == "in" else 1
    pool = cp.SplitSet(
        specialization=[r for r in splits.specialization if r.domain == domain])
    languages = spec_cfg["languages"]
    selector = "all" if languages == "all" else set(languages)
    n_map = spec_cfg["n_per_group"]
    n = n_map[spec_cfg["factor"]] if isinstance(n_map, dict) else int(n_map)
    return cp.sample_specialization(pool, n, languages=selector, seed=seed)


def cmd_specialize(cfg: dict, method: str | None = None) -> int:
    splits, vocab = _load_splits(cfg)
    s = cfg["specialize"]
    method = canonical_method(method or s["method"])
    model = EncoderModel(_encoder_config(cfg, len(vocab), "encoder-init"))
    tc = TrainConfig(method=method, epochs=s["epochs"], batch_size=s["batch_size"],
                     learning_rate=s["learning_rate"], patience=s["patience"],
                     clip_norm=s["clip_norm"], max_len=cfg["encoder"]["max_len"],
                     seed=child_seed(cfg["seed"], "specialize"))
    data = _specialization_pool(splits, s, child_seed(cfg["seed"], "spec-sample"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"specialize.{method}.log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        model, state, _ = train(model, method, data, splits.dev, tc,
                                log_fn=lambda row: log.write(json.dumps(row) + "\n"))
    save_checkpoint(model, out / f"specialized.{method}.ckpt.best")
    _write_resolved(cfg, out, "specialize")
    return 0


def _finetune_config(cfg: dict, seed_label: str) -> fe.FinetuneConfig:
    f = cfg["finetune"]
    return fe.FinetuneConfig(epochs=f["epochs"], batch_size=f["batch_size"],
                             learning_rates=tuple(f["learning_rates"]),
                             patience=f["patience"], clip_norm=f["clip_norm"],
                             max_len=cfg["encoder"]["max_len"],
                             seed=child_seed(cfg["seed"], seed_label))


def cmd_finetune(cfg: dict, checkpoint: str | None = None) -> int:
    splits, vocab = _load_splits(cfg)
    f = cfg["finetune"]
    task = fe.TaskSpec(f["task"], f["portion"], f["factor"])
    if checkpoint:
        if not Path(checkpoint).exists():
            raise DataError(f"missing checkpoint {checkpoint}; "
                            "run `sociospec specialize` first")
        model = load_checkpoint(checkpoint)
        model.drop_head("socio")
    else:
        model = EncoderModel(_encoder_config(cfg, len(vocab), "encoder-init"))
    ftc = _finetune_config(cfg, "finetune")
    model, info = fe.finetune(model, task, splits, ftc)
    score = fe.test_f1(model, task, splits, ftc)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / f"finetuned.{task.task}.{task.portion}.ckpt")
    (out / f"finetune.{task.task}.{task.portion}.json").write_text(
        json.dumps({"task": task.task, "portion": task.portion, "factor": task.factor,
                    "lr": info["lr"], "dev_f1": info["dev_f1"], "test_f1": score},
                   sort_keys=True) + "\n", encoding="utf-8")
    _write_resolved(cfg, out, "finetune")
    return 0


def cmd_grid(cfg: dict, resume: bool = False) -> int:
    splits, vocab = _load_splits(cfg)
    g = cfg["grid"]
    cells = fe.grid_cells(g["languages"], g["methods"], g["mono_multi"], g["domains"],
                          g["portions"], g["factors"], g["tasks"], g["seeds"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    if not resume and results_path.exists():
        results_path.unlink()

    def runner(cell: dict) -> float:
        cell_seed = child_seed(cfg["seed"], "cell:" + json.dumps(cell, sort_keys=True))
        lang = int(cell["language"])
        model = EncoderModel(replace(
            _encoder_config(cfg, len(vocab), "encoder-init"), seed=cell_seed))
        if cell["method"] != "none":
            s = dict(cfg["specialize"])
            s["domain"] = cell["domain"]
            s["factor"] = cell["factor"]
            s["languages"] = "all" if cell["mono_multi"] == "multi" else [lang]
            data = _specialization_pool(splits, s, cell_seed)
            tc = TrainConfig(method=cell["method"], epochs=s["epochs"],
                             batch_size=s["batch_size"], learning_rate=s["learning_rate"],
                             patience=s["patience"], clip_norm=s["clip_norm"],
                             max_len=cfg["encoder"]["max_len"], seed=cell_seed)
            dev = [r for r in splits.dev if r.language == lang]
            model, _, _ = train(model, cell["method"], data, dev or splits.dev, tc)
            model.drop_head("socio")
        task = fe.TaskSpec(cell["task"], cell["portion"], cell["factor"])
        cell_splits = cp.SplitSet(
            train=[r for r in splits.train if r.language == lang and r.domain == 0],
            dev=[r for r in splits.dev if r.language == lang and r.domain == 0],
            test=[r for r in splits.test if r.language == lang and r.domain == 0],
        )
        ftc = replace(_finetune_config(cfg, "ft"), seed=cell_seed)
        model, _ = fe.finetune(model, task, cell_splits, ftc)
        return fe.test_f1(model, task, cell_splits, ftc)

    _, errors = fe.run_grid(cells, runner, results_path)
    _write_resolved(cfg, out, "grid")
    for err in errors:
        print(err, file=sys.stderr)
    return 0 if not errors else 2


def cmd_analyze(cfg: dict) -> int:
    out = Path(cfg["out"])
    results_path = out / "results.csv"
    if not results_path.exists():
        raise DataError(f"missing {results_path}; run `sociospec grid` first")
    records = fe.load_results(results_path)
    regression_report(records, out / "regression_report.csv",
                      threshold=cfg["analysis"]["weight_threshold"])
    _write_resolved(cfg, out, "analyze")
    return 0


def cmd_project(cfg: dict, checkpoint: str) -> int:
    if not Path(checkpoint).exists():
        raise DataError(f"missing checkpoint {checkpoint}; "
                        "run `sociospec specialize` first")
    splits, _ = _load_splits(cfg)
    model = load_checkpoint(checkpoint)
    a = cfg["analysis"]
    points, metadata = sample_projection_inputs(
        model, splits.dev, n=a["n_projection"],
        seed=child_seed(cfg["seed"], "project"), max_len=cfg["encoder"]["max_len"])
    proj = tsne(points, perplexity=a["perplexity"], iterations=a["iterations"],
                seed=child_seed(cfg["seed"], "tsne"))
    proj.metadata = metadata
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_projection_csv(proj, out / "projection.csv",
                        factor=cfg["specialize"]["factor"])
    save_projection_svg(proj, out / "projection.svg")
    # single-level fields (e.g. one domain) carry no cluster structure
    purity = {fld: (cluster_purity(proj.coords, vals,
                                   seed=child_seed(cfg["seed"], "purity"))
                    if len(set(vals)) > 1 else None)
              for fld, vals in metadata.items()}
    (out / "purity.json").write_text(json.dumps(purity, sort_keys=True) + "\n",
                                     encoding="utf-8")
    _write_resolved(cfg, out, "project")
    return 0


def cmd_report(cfg: dict) -> int:
    out = Path(cfg["out"])
    results_path = out / "results.csv"
    if not results_path.exists():
        raise DataError(f"missing {results_path}; run `sociospec grid` first")
    records = fe.load_results(results_path)
    fe.emit_report(records, out / "report.csv")
    _write_resolved(cfg, out, "report")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sociospec")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "specialize", "finetune", "grid", "analyze",
                 "project", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--resume", action="store_true")
        if name == "specialize":
            p.add_argument("--method", default=None,
                           help="mlm | mtl-cls | mtl-ctx")
        if name in ("finetune", "project"):
            p.add_argument("--checkpoint", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "specialize":
            return cmd_specialize(cfg, method=args.method)
        if args.command == "finetune":
            return cmd_finetune(cfg, checkpoint=args.checkpoint)
        if args.command == "grid":
            return cmd_grid(cfg, resume=args.resume)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "project":
            if not args.checkpoint:
                raise ConfigError("project requires --checkpoint")
            return cmd_project(cfg, args.checkpoint)
        if args.command == "report":
            return cmd_report(cfg)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, yaml.YAMLError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except SociospecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
