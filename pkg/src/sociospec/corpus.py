"""Synthetic review corpora with planted demographic/language/domain signal.

Languages use disjoint vocabulary blocks that share only the special
tokens, which makes "language" a strong, controllable confound. Domain is
a second disjoint filler/cue block. Group signal is planted as marker
tokens drawn with a per-group probability, so the strength of the
sociodemographic signal is a single knob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError, ParseError, SchemaError
from .seeding import child_seed, rng_for

PAD_ID, MASK_ID, UNK_ID, CLS_ID = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[MASK]", "[UNK]", "[CLS]")

SENTIMENT_LABELS = ("negative", "neutral", "positive")
N_SENTIMENT = 3
N_TOPIC = 5
N_GROUPS = 2

MASK_RATE = 0.15
MASK_SPLIT = (0.8, 0.1, 0.1)  # MASK / random id / keep


@dataclass
class Review:
    """One text instance with all its labels."""

    tokens: list[int]
    language: int
    domain: int
    group: int
    sentiment: int
    topic: int
    uid: int = -1


@dataclass
class GeneratorConfig:
    n_languages: int = 5
    n_domains: int = 2
    filler_per_block: int = 40
    markers_per_group: int = 8
    cues_per_class: int = 2
    marker_prob: tuple[float, float] = (0.1, 0.0)
    sentiment_cue_prob: float = 0.15
    topic_cue_prob: float = 0.15
    min_len: int = 8
    max_len: int = 24
    sentiment_priors: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    topic_priors: tuple[float, ...] = (0.2,) * N_TOPIC
    seed: int = 0

    def validate(self) -> None:
        probs = (*self.marker_prob, self.sentiment_cue_prob, self.topic_cue_prob)
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ConfigError(f"probabilities must lie in [0,1]: {probs}")
        if self.min_len > self.max_len or self.min_len < 1:
            raise ConfigError(f"bad length range ({self.min_len}, {self.max_len})")
        if len(self.marker_prob) != N_GROUPS:
            raise ConfigError("marker_prob needs one value per group")
        if self.n_languages < 1 or self.n_domains < 1:
            raise ConfigError("need >= 1 language and >= 1 domain")


class Vocabulary:
    """Token list where line number == id; first four ids are reserved."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ConfigError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


class VocabLayout:
    """Id blocks planted by the generator: fillers, markers, and cues.

    Blocks are disjoint by construction; `validate` re-checks because
    configs may be hand-edited.
    """

    def __init__(self, cfg: GeneratorConfig):
        self.cfg = cfg
        tokens = list(SPECIAL_TOKENS)
        self.filler: dict[tuple[int, int], list[int]] = {}
        self.marker: dict[tuple[int, int], list[int]] = {}
        self.sent_cue: dict[tuple[int, int, int], list[int]] = {}
        self.topic_cue: dict[tuple[int, int, int], list[int]] = {}

        def block(names: list[str]) -> list[int]:
            start = len(tokens)
            tokens.extend(names)
            return list(range(start, start + len(names)))

        for lang in range(cfg.n_languages):
            for dom in range(cfg.n_domains):
                self.filler[lang, dom] = block(
                    [f"l{lang}d{dom}_w{i}" for i in range(cfg.filler_per_block)]
                )
                for s in range(N_SENTIMENT):
                    self.sent_cue[lang, dom, s] = block(
                        [f"l{lang}d{dom}_s{s}c{i}" for i in range(cfg.cues_per_class)]
                    )
                for t in range(N_TOPIC):
                    self.topic_cue[lang, dom, t] = block(
                        [f"l{lang}d{dom}_t{t}c{i}" for i in range(cfg.cues_per_class)]
                    )
            for grp in range(N_GROUPS):
                self.marker[lang, grp] = block(
                    [f"l{lang}g{grp}_m{i}" for i in range(cfg.markers_per_group)]
                )
        self.vocab = Vocabulary(tokens)
        self.validate()

    def validate(self) -> None:
        seen: set[int] = set()
        for name, groups in (("marker", self.marker), ("sentiment cue", self.sent_cue),
                             ("topic cue", self.topic_cue)):
            for ids in groups.values():
                overlap = seen.intersection(ids)
                if overlap:
                    raise ConfigError(f"{name} ids overlap another planted set: {sorted(overlap)}")
                seen.update(ids)


def generate(cfg: GeneratorConfig, n_per_cell: int) -> tuple[list[Review], VocabLayout]:
    """n_per_cell reviews for every (language, domain, group) cell."""
    if n_per_cell < 1:
        raise ConfigError("n_per_cell must be >= 1")
    cfg.validate()
    layout = VocabLayout(cfg)
    reviews: list[Review] = []
    uid = 0
    for lang in range(cfg.n_languages):
        for dom in range(cfg.n_domains):
            for grp in range(N_GROUPS):
                rng = rng_for(cfg.seed, f"gen:{lang}:{dom}:{grp}")
                for _ in range(n_per_cell):
                    sentiment = int(rng.choice(N_SENTIMENT, p=cfg.sentiment_priors))
                    topic = int(rng.choice(N_TOPIC, p=cfg.topic_priors))
                    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
                    toks = _draw_tokens(rng, cfg, layout, lang, dom, grp, sentiment, topic, length)
                    reviews.append(Review(toks, lang, dom, grp, sentiment, topic, uid))
                    uid += 1
    return reviews, layout


def _draw_tokens(rng, cfg, layout, lang, dom, grp, sentiment, topic, length) -> list[int]:
    marker = layout.marker[lang, grp]
    sent = layout.sent_cue[lang, dom, sentiment]
    top = layout.topic_cue[lang, dom, topic]
    filler = layout.filler[lang, dom]
    p_marker = cfg.marker_prob[grp]
    toks = []
    for _ in range(length):
        u = rng.random()
        if u < p_marker:
            toks.append(int(rng.choice(marker)))
        elif u < p_marker + (1 - p_marker) * cfg.sentiment_cue_prob:
            toks.append(int(rng.choice(sent)))
        elif u < p_marker + (1 - p_marker) * (cfg.sentiment_cue_prob + cfg.topic_cue_prob):
            toks.append(int(rng.choice(top)))
        else:
            toks.append(int(rng.choice(filler)))
    return toks


# -- serialization ---------------------------------------------------------


def save_corpus(reviews: list[Review], vocab: Vocabulary, path: str | Path) -> None:
    """Line-delimited JSON, text round-trippable through `ingest`."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in reviews:
            rec = {
                "text": " ".join(vocab.tokens[t] for t in r.tokens),
                "language": r.language,
                "domain": r.domain,
                "group": r.group,
                "sentiment": SENTIMENT_LABELS[r.sentiment],
                "topic": r.topic,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


_REQUIRED_FIELDS = ("text", "language", "domain", "group", "sentiment", "topic")


def ingest(path: str | Path, vocab: Vocabulary, max_len: int = 128) -> list[Review]:
    """Read a line-delimited corpus file, tokenizing against `vocab`."""
    reviews: list[Review] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"line {lineno}: invalid record ({e})") from e
            missing = [f for f in _REQUIRED_FIELDS if f not in rec]
            if missing:
                raise ParseError(f"line {lineno}: missing fields {missing}")
            sentiment = rec["sentiment"]
            if sentiment not in SENTIMENT_LABELS:
                raise SchemaError(f"line {lineno}: unknown sentiment {sentiment!r}")
            topic = rec["topic"]
            if not isinstance(topic, int) or not 0 <= topic < N_TOPIC:
                raise SchemaError(f"line {lineno}: topic must be in 0..{N_TOPIC - 1}")
            group = rec["group"]
            if group not in (0, 1):
                raise SchemaError(f"line {lineno}: group must be 0 or 1")
            toks = [vocab.id_of(t) for t in str(rec["text"]).split()][:max_len]
            reviews.append(Review(
                tokens=toks,
                language=int(rec["language"]),
                domain=int(rec["domain"]),
                group=int(group),
                sentiment=SENTIMENT_LABELS.index(sentiment),
                topic=int(topic),
                uid=lineno - 1,
            ))
    return reviews


# -- splitting --------------------------------------------------------------


@dataclass
class SplitSet:
    train: list[Review] = field(default_factory=list)
    dev: list[Review] = field(default_factory=list)
    test: list[Review] = field(default_factory=list)
    specialization: list[Review] = field(default_factory=list)


def _largest_remainder(n: int, fractions: tuple[float, ...]) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[order[i % len(order)]] += 1
    return counts


def split(reviews: list[Review], seed: int, specialization_fraction: float = 0.5) -> SplitSet:
    """Reserve the specialization pool, then stratified 60/20/20 task splits."""
    by_group: dict[int, int] = {}
    for r in reviews:
        by_group[r.group] = by_group.get(r.group, 0) + 1
    small = [g for g, n in by_group.items() if n < 10]
    if small or not by_group:
        raise DataError(f"too few reviews in group cells {small or 'all'} (need >= 10)")

    rng = rng_for(seed, "split")
    pool = list(reviews)
    perm = rng.permutation(len(pool))
    pool = [pool[i] for i in perm]
    n_spec = int(round(specialization_fraction * len(pool)))
    out = SplitSet(specialization=pool[:n_spec])
    task = pool[n_spec:]

    strata: dict[tuple[int, int, int], list[Review]] = {}
    for r in task:
        strata.setdefault((r.group, r.sentiment, r.topic), []).append(r)
    for key in sorted(strata):
        members = strata[key]
        n_tr, n_dev, n_te = _largest_remainder(len(members), (0.6, 0.2, 0.2))
        out.train.extend(members[:n_tr])
        out.dev.extend(members[n_tr:n_tr + n_dev])
        out.test.extend(members[n_tr + n_dev:])
    return out


def balance_groups(reviews: list[Review], seed: int) -> list[Review]:
    """Downsample the majority group so per-group counts differ by <= 1."""
    rng = rng_for(seed, "balance")
    by_group: dict[int, list[Review]] = {}
    for r in reviews:
        by_group.setdefault(r.group, []).append(r)
    n_min = min(len(v) for v in by_group.values())
    kept: list[Review] = []
    for g in sorted(by_group):
        members = by_group[g]
        idx = rng.permutation(len(members))[:n_min]
        kept.extend(members[i] for i in sorted(idx))
    return kept


def sample_specialization(splits: SplitSet, n_per_group: int,
                          languages: str | set[int] = "all",
                          seed: int = 0) -> list[Review]:
    """n_per_group reviews per group from the specialization pool.

    `languages="all"` is the multilingual setting; a set of language ids
    restricts to the monolingual setting.
    """
    pool = splits.specialization
    if languages != "all":
        pool = [r for r in pool if r.language in languages]
    by_group: dict[int, list[Review]] = {}
    for r in pool:
        by_group.setdefault(r.group, []).append(r)
    counts = {g: len(v) for g, v in by_group.items()}
    if any(counts.get(g, 0) < n_per_group for g in range(N_GROUPS)):
        raise DataError(
            f"specialization pool too small: need {n_per_group} per group, have {counts}"
        )
    rng = rng_for(seed, "sample_specialization")
    sampled: list[Review] = []
    for g in range(N_GROUPS):
        members = by_group[g]
        idx = rng.permutation(len(members))[:n_per_group]
        sampled.extend(members[i] for i in sorted(idx))
    return sampled


# -- masking ----------------------------------------------------------------


@dataclass
class MaskedBatch:
    input_ids: np.ndarray          # [B x L], CLS at position 0, PAD-filled
    lengths: np.ndarray            # [B], effective lengths incl. CLS
    masked_positions: list[list[int]]
    masked_targets: list[list[int]]
    group_labels: np.ndarray       # [B]

    def flat_targets(self) -> np.ndarray:
        return np.asarray([t for seq in self.masked_targets for t in seq], dtype=np.int64)


def mask_count(length: int) -> int:
    return max(1, round(MASK_RATE * length))


def dynamic_mask(batch: list[Review], vocab_size: int, seed: int, step: int,
                 max_len: int = 128) -> MaskedBatch:
    """Fresh 15% masking per (seed, step); 80/10/10 replacement policy."""
    if any(len(r.tokens) < 1 for r in batch):
        raise ContractError("dynamic_mask requires non-empty sequences")
    rng = np.random.default_rng(child_seed(seed, f"mask:{step}"))
    content_len = [min(len(r.tokens), max_len - 1) for r in batch]
    width = max(content_len) + 1
    b = len(batch)
    input_ids = np.full((b, width), PAD_ID, dtype=np.int64)
    input_ids[:, 0] = CLS_ID
    lengths = np.zeros(b, dtype=np.int64)
    masked_positions: list[list[int]] = []
    masked_targets: list[list[int]] = []
    for i, r in enumerate(batch):
        n = content_len[i]
        input_ids[i, 1:n + 1] = r.tokens[:n]
        lengths[i] = n + 1
        k = mask_count(n)
        chosen = rng.choice(n, size=k, replace=False) + 1  # offset for CLS
        chosen = sorted(int(c) for c in chosen)
        targets = [int(input_ids[i, c]) for c in chosen]
        for c in chosen:
            u = rng.random()
            if u < MASK_SPLIT[0]:
                input_ids[i, c] = MASK_ID
            elif u < MASK_SPLIT[0] + MASK_SPLIT[1]:
                input_ids[i, c] = int(rng.integers(len(SPECIAL_TOKENS), vocab_size))
            # else: keep the original token
        masked_positions.append(chosen)
        masked_targets.append(targets)
    groups = np.asarray([r.group for r in batch], dtype=np.int64)
    return MaskedBatch(input_ids, lengths, masked_positions, masked_targets, groups)


def plain_batch(batch: list[Review], max_len: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """CLS-prefixed, PAD-filled ids and lengths without masking."""
    content_len = [min(len(r.tokens), max_len - 1) for r in batch]
    width = max(content_len) + 1
    input_ids = np.full((len(batch), width), PAD_ID, dtype=np.int64)
    input_ids[:, 0] = CLS_ID
    lengths = np.zeros(len(batch), dtype=np.int64)
    for i, r in enumerate(batch):
        n = content_len[i]
        input_ids[i, 1:n + 1] = r.tokens[:n]
        lengths[i] = n + 1
    return input_ids, lengths
