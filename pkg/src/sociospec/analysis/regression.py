"""OLS meta-regression of experiment factors onto F1 scores.

Encoding: intercept plus one-hot indicators per factor level with the
first (sorted) level dropped as reference; no regularization; in-sample
RMSE/MAE. F1 is regressed on a 0-100 scale so coefficient magnitudes are
comparable across reports. All four choices are stated in the report
header because none is forced by the method itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ContractError, DataError
from ..finetune_eval import ExperimentRecord

DESIGN_FACTORS = ("language", "method", "mono_multi", "domain", "portion", "factor")

ABLATIONS = {"ex-D": "domain", "ex-M": "mono_multi", "ex-S": "factor", "ex-C": "language"}

F1_SCALE = 100.0


@dataclass
class RegressionResult:
    weights: dict[str, float]
    rmse: float
    mae: float

    def selected_features(self, threshold: float = 0.2) -> list[str]:
        named = [(n, w) for n, w in self.weights.items()
                 if n != "intercept" and abs(w) >= threshold]
        named.sort(key=lambda kv: abs(kv[1]), reverse=True)
        return [n for n, _ in named]


def build_design(records: Sequence[ExperimentRecord],
                 exclude: Sequence[str] = ()) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """One-hot design matrix with intercept and dropped reference levels."""
    if not records:
        raise ContractError("no records to regress on")
    factors = [f for f in DESIGN_FACTORS if f not in exclude]
    columns: list[np.ndarray] = [np.ones(len(records))]
    names = ["intercept"]
    for factor in factors:
        levels = sorted({str(getattr(r, factor)) for r in records})
        for level in levels[1:]:  # first level is the reference
            columns.append(np.asarray(
                [1.0 if str(getattr(r, factor)) == level else 0.0 for r in records]
            ))
            names.append(f"{factor}={level}")
    x = np.column_stack(columns)
    y = np.asarray([r.f1 for r in records]) * F1_SCALE
    return x, y, names


def _check_rank(x: np.ndarray, names: list[str]) -> None:
    if x.shape[0] < x.shape[1]:
        raise DataError(f"need >= {x.shape[1]} records for {x.shape[1]} columns, "
                        f"have {x.shape[0]}")
    rank = np.linalg.matrix_rank(x)
    if rank < x.shape[1]:
        _, r = np.linalg.qr(x)
        bad = [names[i] for i in range(x.shape[1]) if abs(r[i, i]) < 1e-10]
        raise DataError(f"design matrix rank-deficient; collinear columns: {bad}")


def ols(x: np.ndarray, y: np.ndarray, names: list[str]) -> RegressionResult:
    """Least squares via a stable orthogonal decomposition (lstsq/SVD)."""
    _check_rank(x, names)
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ w
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    mae = float(np.mean(np.abs(resid)))
    return RegressionResult(dict(zip(names, w.tolist())), rmse, mae)


def fit_ols(records: Sequence[ExperimentRecord],
            exclude: Sequence[str] = ()) -> RegressionResult:
    x, y, names = build_design(records, exclude)
    return ols(x, y, names)


def ablate(records: Sequence[ExperimentRecord], exclude_factor: str) -> RegressionResult:
    if exclude_factor not in DESIGN_FACTORS:
        raise ContractError(f"unknown factor {exclude_factor!r}; "
                            f"choose from {DESIGN_FACTORS}")
    return fit_ols(records, exclude=(exclude_factor,))


def select_features(result: RegressionResult, threshold: float = 0.2) -> list[str]:
    return result.selected_features(threshold)


def regression_report(records: Sequence[ExperimentRecord], path: str | Path,
                      threshold: float = 0.2) -> None:
    """One regression per task; columns in / ex-D / ex-M / ex-S / ex-C for
    RMSE and MAE, plus the selected features of the full model."""
    lines = [
        "# meta-regression report",
        "# encoding: one-hot with dropped reference levels, intercept, "
        "no regularization, in-sample errors",
        f"# target: F1 scaled to [0,{F1_SCALE:.0f}]",
        "task,in_rmse,ex-D_rmse,ex-M_rmse,ex-S_rmse,ex-C_rmse,"
        "in_mae,ex-D_mae,ex-M_mae,ex-S_mae,ex-C_mae,selected_features",
    ]
    tasks = sorted({r.task for r in records})
    for task in tasks:
        subset = [r for r in records if r.task == task]
        full = fit_ols(subset)
        rmses, maes = [f"{full.rmse:.4f}"], [f"{full.mae:.4f}"]
        for name in ("ex-D", "ex-M", "ex-S", "ex-C"):
            try:
                res = ablate(subset, ABLATIONS[name])
                rmses.append(f"{res.rmse:.4f}")
                maes.append(f"{res.mae:.4f}")
            except DataError:
                rmses.append("-")
                maes.append("-")
        feats = "; ".join(
            f"{n} ({full.weights[n]:.1f})" for n in full.selected_features(threshold)
        )
        lines.append(",".join([task] + rmses + maes + [f"\"{feats}\""]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
