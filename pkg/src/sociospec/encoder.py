"""Small pre-norm transformer encoder with MLM and classification heads.

Two pooling variants feed the sociodemographic head: the CLS vector, or
the mean of the contextualized masked-token vectors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError
from .seeding import rng_for

HEAD_SIZES = {"socio": 2, "SA": 3, "TD": 5, "AC": 2}


@dataclass
class EncoderConfig:
    vocab_size: int
    max_len: int = 128
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    dropout_prob: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2 (CLS + at least one token)")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EncoderModel:
    """Parameter container plus head registry; forward lives in `encode`."""

    def __init__(self, config: EncoderConfig):
        config.validate()
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = rng_for(config.seed, "init")
        d, v, ff = config.d_model, config.vocab_size, config.d_ff

        def emb(name: str, rows: int) -> None:
            self.params[name] = Tensor(rng.normal(0.0, 0.02, size=(rows, d)), requires_grad=True)

        def proj(name: str, fan_in: int, fan_out: int) -> None:
            self.params[name] = Tensor(_xavier(rng, fan_in, fan_out), requires_grad=True)
            self.params[name + "_b"] = Tensor(np.zeros(fan_out), requires_grad=True)

        def norm(name: str) -> None:
            self.params[name + "_g"] = Tensor(np.ones(d), requires_grad=True)
            self.params[name + "_b"] = Tensor(np.zeros(d), requires_grad=True)

        emb("tok_emb", v)
        emb("pos_emb", config.max_len)
        for i in range(config.n_layers):
            norm(f"l{i}.ln1")
            for w in ("wq", "wk", "wv", "wo"):
                proj(f"l{i}.{w}", d, d)
            norm(f"l{i}.ln2")
            proj(f"l{i}.ff1", d, ff)
            proj(f"l{i}.ff2", ff, d)
        norm("ln_f")
        proj("mlm_head", d, v)
        self._head_rng = rng

    # heads are created lazily so specialization heads can be dropped
    # before fine-tuning without dead parameters in checkpoints
    def ensure_head(self, name: str) -> None:
        if f"head.{name}" in self.params:
            return
        if name not in HEAD_SIZES:
            raise ConfigError(f"unknown head {name!r}; known: {sorted(HEAD_SIZES)}")
        d, c = self.config.d_model, HEAD_SIZES[name]
        # zero init: predictions then depend on learned structure only, never
        # on the random alignment of a fresh head with the pooled features
        self.params[f"head.{name}"] = Tensor(np.zeros((d, c)), requires_grad=True)
        self.params[f"head.{name}_b"] = Tensor(np.zeros(c), requires_grad=True)

    def drop_head(self, name: str) -> None:
        self.params.pop(f"head.{name}", None)
        self.params.pop(f"head.{name}_b", None)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, arr in state.items():
            if k in self.params:
                self.params[k].data = arr.copy()
            else:
                self.params[k] = Tensor(arr.copy(), requires_grad=True)


def encode(model: EncoderModel, input_ids: np.ndarray, lengths: np.ndarray,
           train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Forward pass -> hidden states [B x L x d]; padding is attention-masked."""
    cfg = model.config
    p = model.params
    input_ids = np.asarray(input_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    b, l = input_ids.shape
    if input_ids.max() >= cfg.vocab_size or input_ids.min() < 0:
        raise IndexError(f"token id out of range for vocab size {cfg.vocab_size}")
    if l > cfg.max_len or lengths.max() > l or lengths.min() < 1:
        raise IndexError(f"sequence length out of range (L={l}, max_len={cfg.max_len})")
    if train_mode and cfg.dropout_prob > 0.0 and rng is None:
        raise ConfigError("train_mode with dropout requires an rng")

    d, h = cfg.d_model, cfg.n_heads
    dh = d // h
    scale = 1.0 / np.sqrt(dh)
    drop = cfg.dropout_prob if train_mode else 0.0

    tok = ag.embedding_lookup(p["tok_emb"], input_ids.reshape(-1)).reshape(b, l, d)
    pos = ag.embedding_lookup(p["pos_emb"], np.arange(l))
    x = tok + pos
    if drop > 0.0:
        x = x.dropout(drop, rng)

    valid = np.arange(l)[None, :] < lengths[:, None]          # [B x L]
    attn_mask = valid[:, None, None, :]                        # [B x 1 x 1 x L]

    for i in range(cfg.n_layers):
        pre = f"l{i}."
        hn = ag.layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])

        def heads_of(t: Tensor) -> Tensor:
            return t.reshape(b, l, h, dh).transpose(0, 2, 1, 3)

        q = heads_of(hn @ p[pre + "wq"] + p[pre + "wq_b"])
        k = heads_of(hn @ p[pre + "wk"] + p[pre + "wk_b"])
        v = heads_of(hn @ p[pre + "wv"] + p[pre + "wv_b"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale         # [B x H x L x L]
        probs = ag.masked_softmax(scores, attn_mask)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(b, l, d)
        ctx = ctx @ p[pre + "wo"] + p[pre + "wo_b"]
        if drop > 0.0:
            ctx = ctx.dropout(drop, rng)
        x = x + ctx

        fn = ag.layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
        ff = (fn @ p[pre + "ff1"] + p[pre + "ff1_b"]).gelu() @ p[pre + "ff2"] + p[pre + "ff2_b"]
        if drop > 0.0:
            ff = ff.dropout(drop, rng)
        x = x + ff

    return ag.layer_norm(x, p["ln_f_g"], p["ln_f_b"])


def cls_representation(hidden: Tensor) -> Tensor:
    """Position-0 vector of every sequence -> [B x d]."""
    return ag.take_position(hidden, 0)


def ctx_masked_mean(hidden: Tensor, masked_positions: list[list[int]]) -> Tensor:
    """Mean of the masked-token vectors per sequence -> [B x d]."""
    return ag.masked_mean_pool(hidden, masked_positions)


def head_logits(model: EncoderModel, pooled: Tensor, head_name: str) -> Tensor:
    if f"head.{head_name}" not in model.params:
        raise ConfigError(f"head {head_name!r} not created (call ensure_head first)")
    return pooled @ model.params[f"head.{head_name}"] + model.params[f"head.{head_name}_b"]


def mlm_logits(model: EncoderModel, hidden: Tensor,
               masked_positions: list[list[int]]) -> Tensor:
    """[M_total x V] logits at the masked positions, batch-then-position order."""
    gathered = ag.gather_positions(hidden, masked_positions)
    return gathered @ model.params["mlm_head"] + model.params["mlm_head_b"]


# -- checkpoint format -------------------------------------------------------
# Deterministic container: magic, u64 header length, JSON header (config +
# ordered parameter manifest), then raw little-endian float64 data.

_MAGIC = b"SOCIOSPEC-CKPT1\n"


def save_checkpoint(model: EncoderModel, path: str | Path) -> None:
    names = sorted(model.params)
    header = {
        "config": asdict(model.config),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> EncoderModel:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        model = EncoderModel(EncoderConfig(**header["config"]))
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n_bytes = int(np.prod(shape)) * 8
            arr = np.frombuffer(fh.read(n_bytes), dtype="<f8").reshape(shape)
            model.params[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
    return model
