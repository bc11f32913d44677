"""Specialization procedures: MLM-only and the two uncertainty-weighted
multi-task variants (CLS pooling vs masked-token-context pooling).

Each task loss L_t is scaled by a learnable log-variance eta_t as
0.5 * (exp(-eta_t) * L_t + eta_t); the joint objective is the plain sum of
the two scaled losses. At the stationary point exp(eta_t) = L_t, so noisy
tasks are down-weighted automatically as training progresses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Review, dynamic_mask
from .encoder import (EncoderModel, cls_representation, ctx_masked_mean,
                      encode, head_logits, mlm_logits)
from .errors import ConfigError, NumericError
from .seeding import child_seed, rng_for

METHODS = ("MLM", "MTL-W-CLS", "MTL-W-CTX")

_METHOD_ALIASES = {
    "mlm": "MLM",
    "mtl-w-cls": "MTL-W-CLS",
    "mtl-cls": "MTL-W-CLS",
    "mtl-w-ctx": "MTL-W-CTX",
    "mtl-ctx": "MTL-W-CTX",
}


def canonical_method(name: str) -> str:
    key = name.strip().lower()
    if key not in _METHOD_ALIASES:
        raise ConfigError(f"unknown method {name!r}; choose from {METHODS}")
    return _METHOD_ALIASES[key]


# -- losses -------------------------------------------------------------------


def mlm_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of the true tokens at masked positions."""
    return ag.softmax_cross_entropy(logits, targets)


def socio_loss(logits: Tensor, groups: Sequence[int]) -> Tensor:
    """Mean cross-entropy of the binary group prediction."""
    return ag.softmax_cross_entropy(logits, groups)


def weighted_task_loss(task_loss: Tensor, eta: Tensor) -> Tensor:
    """0.5 * (exp(-eta) * L + eta); stationary eta satisfies exp(eta) = L."""
    return ((-eta).exp() * task_loss + eta) * 0.5


@dataclass
class UncertaintyWeights:
    """Learnable log-variances for the two tasks, initialized at 0."""

    eta_mlm: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True))
    eta_socio: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True))

    def as_params(self) -> dict[str, Tensor]:
        return {"eta_mlm": self.eta_mlm, "eta_socio": self.eta_socio}


def joint_loss(l_mlm: Tensor, l_socio: Tensor, weights: UncertaintyWeights) -> Tensor:
    return weighted_task_loss(l_mlm, weights.eta_mlm) \
        + weighted_task_loss(l_socio, weights.eta_socio)


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Adam with bias correction; optional global-norm gradient clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        grads: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            grads[name] = g
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    method: str = "MLM"
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 5e-5
    patience: int = 3
    seed: int = 0
    clip_norm: float | None = 1.0
    max_len: int = 128

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 0:
            raise ConfigError("epochs/batch_size/patience must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be > 0")


@dataclass
class TrainState:
    step: int = 0
    best_dev: float = float("inf")
    best_epoch: int = -1
    epochs_run: int = 0
    stopped_early: bool = False
    history: list[dict] = field(default_factory=list)


def _method_loss(model: EncoderModel, batch, method: str,
                 weights: UncertaintyWeights | None, train_mode: bool,
                 rng: np.random.Generator | None) -> tuple[Tensor, float, float]:
    hidden = encode(model, batch.input_ids, batch.lengths,
                    train_mode=train_mode, rng=rng)
    l_mlm = mlm_loss(mlm_logits(model, hidden, batch.masked_positions),
                     batch.flat_targets())
    if method == "MLM":
        return l_mlm, l_mlm.item(), float("nan")
    if method == "MTL-W-CLS":
        pooled = cls_representation(hidden)
    else:
        pooled = ctx_masked_mean(hidden, batch.masked_positions)
    l_socio = socio_loss(head_logits(model, pooled, "socio"), batch.group_labels)
    assert weights is not None
    return joint_loss(l_mlm, l_socio, weights), l_mlm.item(), l_socio.item()


def evaluate_dev(model: EncoderModel, dev: list[Review], method: str,
                 config: TrainConfig, weights: UncertaintyWeights | None) -> float:
    """Dev loss under fixed masking so values are comparable across epochs."""
    vocab_size = model.config.vocab_size
    total, n = 0.0, 0
    for start in range(0, len(dev), config.batch_size):
        chunk = dev[start:start + config.batch_size]
        batch = dynamic_mask(chunk, vocab_size, child_seed(config.seed, "devmask"),
                             step=start, max_len=config.max_len)
        loss, _, _ = _method_loss(model, batch, method, weights,
                                  train_mode=False, rng=None)
        total += loss.item() * len(chunk)
        n += len(chunk)
    return total / n


def socio_dev_accuracy(model: EncoderModel, dev: list[Review],
                       config: TrainConfig, pooling: str = "cls") -> float:
    """Accuracy of the socio head on dev, CLS or masked-context pooling."""
    vocab_size = model.config.vocab_size
    correct, n = 0, 0
    for start in range(0, len(dev), config.batch_size):
        chunk = dev[start:start + config.batch_size]
        batch = dynamic_mask(chunk, vocab_size, child_seed(config.seed, "devmask"),
                             step=start, max_len=config.max_len)
        hidden = encode(model, batch.input_ids, batch.lengths)
        pooled = (cls_representation(hidden) if pooling == "cls"
                  else ctx_masked_mean(hidden, batch.masked_positions))
        logits = head_logits(model, pooled, "socio")
        correct += int((logits.data.argmax(axis=1) == batch.group_labels).sum())
        n += len(chunk)
    return correct / n


def train(model: EncoderModel, method: str, specialization_data: list[Review],
          dev_data: list[Review], config: TrainConfig,
          weights: UncertaintyWeights | None = None,
          log_fn=None) -> tuple[EncoderModel, TrainState, UncertaintyWeights | None]:
    """Run one specialization; restores best-dev parameters before returning."""
    config.validate()
    method = canonical_method(method)
    if not specialization_data or not dev_data:
        raise ConfigError("specialization and dev data must be non-empty")

    is_mtl = method != "MLM"
    if is_mtl:
        model.ensure_head("socio")
        if weights is None:
            weights = UncertaintyWeights()
    else:
        weights = None

    # MLM-only training must not touch the socio head or the etas
    opt_params = {k: v for k, v in model.params.items()
                  if is_mtl or not k.startswith("head.socio")}
    if is_mtl:
        opt_params.update(weights.as_params())
    opt = Adam(opt_params, lr=config.learning_rate, clip_norm=config.clip_norm)

    state = TrainState()
    vocab_size = model.config.vocab_size
    drop_rng = rng_for(config.seed, "dropout")
    best_state: dict[str, np.ndarray] | None = None
    best_etas: tuple[float, float] | None = None
    since_improvement = 0

    for epoch in range(config.epochs):
        order = rng_for(config.seed, f"shuffle:{epoch}").permutation(len(specialization_data))
        data = [specialization_data[i] for i in order]
        ep_mlm, ep_socio, n_batches = 0.0, 0.0, 0
        for start in range(0, len(data), config.batch_size):
            chunk = data[start:start + config.batch_size]
            batch = dynamic_mask(chunk, vocab_size, config.seed, step=state.step,
                                 max_len=config.max_len)
            loss, v_mlm, v_socio = _method_loss(model, batch, method, weights,
                                                train_mode=True, rng=drop_rng)
            opt.zero_grads()
            loss.backward()
            opt.step()
            state.step += 1
            ep_mlm += v_mlm
            ep_socio += 0.0 if np.isnan(v_socio) else v_socio
            n_batches += 1

        dev_metric = evaluate_dev(model, dev_data, method, config, weights)
        row = {
            "epoch": epoch,
            "L_mlm": ep_mlm / n_batches,
            "L_socio": (ep_socio / n_batches) if is_mtl else None,
            "eta_mlm": weights.eta_mlm.item() if is_mtl else None,
            "eta_socio": weights.eta_socio.item() if is_mtl else None,
            "dev_metric": dev_metric,
        }
        state.history.append(row)
        if log_fn is not None:
            log_fn(row)
        state.epochs_run = epoch + 1

        if dev_metric < state.best_dev:
            state.best_dev = dev_metric
            state.best_epoch = epoch
            best_state = model.copy_state()
            if is_mtl:
                best_etas = (weights.eta_mlm.item(), weights.eta_socio.item())
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= config.patience:
                state.stopped_early = True
                break

    if best_state is not None:
        model.load_state(best_state)
        if is_mtl and best_etas is not None:
            weights.eta_mlm.data = np.asarray(best_etas[0])
            weights.eta_socio.data = np.asarray(best_etas[1])
    return model, state, weights
