"""Downstream fine-tuning (SA / TD / AC), macro-F1 scoring, and the
resumable experiment grid whose CSV output feeds the analysis module.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .corpus import Review, SplitSet, balance_groups, plain_batch
from .encoder import EncoderModel, cls_representation, encode, head_logits
from .errors import ConfigError, ContractError, DataError
from .seeding import rng_for
from .specialize import Adam

TASKS = {"SA": 3, "TD": 5, "AC-SA": 2, "AC-TD": 2}
PORTIONS = ("group0", "group1", "X")
FACTORS = ("gender", "age")

RESULTS_HEADER = ["language", "method", "mono_multi", "domain",
                  "portion", "factor", "task", "seed", "f1"]


@dataclass
class TaskSpec:
    task: str
    portion: str = "X"
    factor: str = "gender"

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")
        if self.portion not in PORTIONS:
            raise ConfigError(f"unknown portion {self.portion!r}")
        if self.factor not in FACTORS:
            raise ConfigError(f"unknown factor {self.factor!r}")

    @property
    def n_classes(self) -> int:
        return TASKS[self.task]

    @property
    def head_name(self) -> str:
        return {"SA": "SA", "TD": "TD", "AC-SA": "AC", "AC-TD": "AC"}[self.task]

    def label_of(self, r: Review) -> int:
        if self.task == "SA":
            return r.sentiment
        if self.task == "TD":
            return r.topic
        return r.group

    def select(self, reviews: list[Review], seed: int = 0) -> list[Review]:
        """Apply portion filtering; AC portions are additionally group-balanced."""
        if self.portion == "group0":
            subset = [r for r in reviews if r.group == 0]
        elif self.portion == "group1":
            subset = [r for r in reviews if r.group == 1]
        else:
            subset = list(reviews)
        if self.task.startswith("AC"):
            if self.portion != "X":
                raise ConfigError("AC is the group-prediction task; portion must be X")
            subset = balance_groups(subset, seed)
        return subset


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rates: tuple[float, ...] = (5e-5, 1e-5, 5e-6, 1e-6)
    patience: int = 5
    seed: int = 0
    clip_norm: float | None = 1.0
    max_len: int = 128


def f1(predictions: Sequence[int], gold: Sequence[int], n_classes: int) -> float:
    """Macro-averaged F1; classes with empty P+R denominators score 0."""
    predictions = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if predictions.size == 0 or predictions.shape != gold.shape:
        raise ContractError("predictions and gold must be equal-length and non-empty")
    total = 0.0
    for c in range(n_classes):
        tp = int(((predictions == c) & (gold == c)).sum())
        fp = int(((predictions == c) & (gold != c)).sum())
        fn = int(((predictions != c) & (gold == c)).sum())
        denom = 2 * tp + fp + fn
        total += (2 * tp / denom) if denom else 0.0
    return total / n_classes


def per_class_f1(predictions: Sequence[int], gold: Sequence[int],
                 n_classes: int) -> list[float]:
    predictions = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    scores = []
    for c in range(n_classes):
        tp = int(((predictions == c) & (gold == c)).sum())
        fp = int(((predictions == c) & (gold != c)).sum())
        fn = int(((predictions != c) & (gold == c)).sum())
        denom = 2 * tp + fp + fn
        scores.append((2 * tp / denom) if denom else 0.0)
    return scores


def predict(model: EncoderModel, task: TaskSpec, reviews: list[Review],
            batch_size: int = 32, max_len: int = 128) -> np.ndarray:
    preds = []
    for start in range(0, len(reviews), batch_size):
        chunk = reviews[start:start + batch_size]
        ids, lengths = plain_batch(chunk, max_len=max_len)
        hidden = encode(model, ids, lengths)
        logits = head_logits(model, cls_representation(hidden), task.head_name)
        preds.append(logits.data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _task_f1(model: EncoderModel, task: TaskSpec, reviews: list[Review],
             config: FinetuneConfig) -> float:
    gold = [task.label_of(r) for r in reviews]
    preds = predict(model, task, reviews, config.batch_size, config.max_len)
    return f1(preds, gold, task.n_classes)


def _finetune_once(model: EncoderModel, task: TaskSpec, train: list[Review],
                   dev: list[Review], config: FinetuneConfig, lr: float) -> float:
    """Train in place with one learning rate; returns best dev F1."""
    labels_ok = all(0 <= task.label_of(r) < task.n_classes for r in train + dev)
    if not labels_ok:
        raise DataError(f"label outside range for task {task.task}")
    opt = Adam(model.params, lr=lr, clip_norm=config.clip_norm)
    drop_rng = rng_for(config.seed, f"ft-dropout:{lr}")
    best_dev = -1.0
    best_state = model.copy_state()
    since = 0
    for epoch in range(config.epochs):
        order = rng_for(config.seed, f"ft-shuffle:{lr}:{epoch}").permutation(len(train))
        data = [train[i] for i in order]
        for start in range(0, len(data), config.batch_size):
            chunk = data[start:start + config.batch_size]
            ids, lengths = plain_batch(chunk, max_len=config.max_len)
            hidden = encode(model, ids, lengths, train_mode=True, rng=drop_rng)
            logits = head_logits(model, cls_representation(hidden), task.head_name)
            labels = [task.label_of(r) for r in chunk]
            loss = ag.softmax_cross_entropy(logits, labels)
            opt.zero_grads()
            loss.backward()
            opt.step()
        dev_f1 = _task_f1(model, task, dev, config)
        if dev_f1 > best_dev:
            best_dev = dev_f1
            best_state = model.copy_state()
            since = 0
        else:
            since += 1
            if since >= config.patience:
                break
    model.load_state(best_state)
    return best_dev


def finetune(model: EncoderModel, task: TaskSpec, splits: SplitSet,
             config: FinetuneConfig) -> tuple[EncoderModel, dict]:
    """Fine-tune on the task portion, searching the learning-rate grid on dev."""
    model.ensure_head(task.head_name)
    train = task.select(splits.train, config.seed)
    dev = task.select(splits.dev, config.seed)
    if not train or not dev:
        raise DataError(f"empty train/dev after portion selection for {task.task}")
    if config.epochs == 0:
        return model, {"lr": None, "dev_f1": float("nan")}

    start_state = model.copy_state()
    best = {"lr": None, "dev_f1": -1.0, "state": None}
    for lr in config.learning_rates:
        model.load_state(start_state)
        dev_f1 = _finetune_once(model, task, train, dev, config, lr)
        if dev_f1 > best["dev_f1"]:
            best = {"lr": lr, "dev_f1": dev_f1, "state": model.copy_state()}
    model.load_state(best.pop("state"))
    return model, best


def test_f1(model: EncoderModel, task: TaskSpec, splits: SplitSet,
            config: FinetuneConfig) -> float:
    test = task.select(splits.test, config.seed)
    return _task_f1(model, task, test, config)


# -- experiment grid ----------------------------------------------------------


@dataclass
class ExperimentRecord:
    language: str
    method: str
    mono_multi: str
    domain: str
    portion: str
    factor: str
    task: str
    seed: int
    f1: float

    def key(self) -> tuple:
        return (self.language, self.method, self.mono_multi, self.domain,
                self.portion, self.factor, self.task, self.seed)

    def row(self) -> list:
        return [self.language, self.method, self.mono_multi, self.domain,
                self.portion, self.factor, self.task, self.seed, f"{self.f1:.6f}"]


def load_results(path: str | Path) -> list[ExperimentRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER:
            raise DataError(f"{path}: unexpected results header {reader.fieldnames}")
        for row in reader:
            records.append(ExperimentRecord(
                language=row["language"], method=row["method"],
                mono_multi=row["mono_multi"], domain=row["domain"],
                portion=row["portion"], factor=row["factor"], task=row["task"],
                seed=int(row["seed"]), f1=float(row["f1"]),
            ))
    return records


def grid_cells(languages: Sequence, methods: Sequence[str], mono_multi: Sequence[str],
               domains: Sequence[str], portions: Sequence[str], factors: Sequence[str],
               tasks: Sequence[str], seeds: Sequence[int]) -> list[dict]:
    cells = []
    for combo in itertools.product(languages, methods, mono_multi, domains,
                                   portions, factors, tasks, seeds):
        cells.append(dict(zip(("language", "method", "mono_multi", "domain",
                               "portion", "factor", "task", "seed"), combo)))
    return cells


def run_grid(cells: list[dict], runner: Callable[[dict], float],
             results_path: str | Path) -> tuple[list[ExperimentRecord], list[str]]:
    """Execute missing cells, appending to the results CSV; returns all
    records plus error notes for failed cells (grid continues past them)."""
    results_path = Path(results_path)
    existing = load_results(results_path)
    done = {r.key() for r in existing}
    new_file = not results_path.exists()
    errors: list[str] = []
    records = list(existing)
    with open(results_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(RESULTS_HEADER)
        for cell in cells:
            key = (str(cell["language"]), cell["method"], cell["mono_multi"],
                   cell["domain"], cell["portion"], cell["factor"], cell["task"],
                   int(cell["seed"]))
            if key in done:
                continue
            try:
                score = runner(cell)
            except Exception as e:  # noqa: BLE001 - grid must survive cell failures
                errors.append(f"cell {key}: {type(e).__name__}: {e}")
                continue
            rec = ExperimentRecord(*key[:7], seed=key[7], f1=float(score))
            writer.writerow(rec.row())
            fh.flush()
            records.append(rec)
            done.add(key)
    if errors:
        err_path = results_path.with_suffix(results_path.suffix + ".errors.log")
        with open(err_path, "a", encoding="utf-8") as fh:
            fh.write("\n".join(errors) + "\n")
    return records, errors


def emit_report(records: list[ExperimentRecord], path: str | Path) -> None:
    """Per (factor, task) table: rows = methods, columns = language x portion,
    plus an Avg. column averaging the displayed cells of each row."""
    lines = []
    pairs = sorted({(r.factor, r.task) for r in records})
    for factor, task in pairs:
        subset = [r for r in records if r.factor == factor and r.task == task]
        languages = sorted({r.language for r in subset})
        portions = sorted({r.portion for r in subset})
        methods = sorted({r.method for r in subset})
        lines.append(f"# factor={factor} task={task}")
        header = ["method"] + [f"{lg}/{p}" for lg in languages for p in portions] + ["Avg."]
        lines.append(",".join(header))
        for m in methods:
            cells = []
            shown = []
            for lg in languages:
                for p in portions:
                    vals = [r.f1 for r in subset
                            if r.method == m and r.language == lg and r.portion == p]
                    if vals:
                        mean = sum(vals) / len(vals)
                        shown.append(mean)
                        cells.append(f"{mean:.4f}")
                    else:
                        cells.append("-")
            avg = f"{sum(shown) / len(shown):.4f}" if shown else "-"
            lines.append(",".join([m] + cells + [avg]))
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


__all__ = [
    "TASKS", "PORTIONS", "FACTORS", "RESULTS_HEADER",
    "TaskSpec", "FinetuneConfig", "ExperimentRecord",
    "f1", "per_class_f1", "predict", "finetune", "test_f1",
    "grid_cells", "run_grid", "load_results", "emit_report",
]
