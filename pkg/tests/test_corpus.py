import json

import numpy as np
import pytest

from sociospec import corpus as cp
from sociospec.errors import (ConfigError, ContractError, DataError, ParseError,
                              SchemaError)


# -- generation ---------------------------------------------------------------


def test_generate_counts_and_labels(tiny_corpus, tiny_gen):
    reviews, layout, _ = tiny_corpus
    cfg = tiny_gen
    assert len(reviews) == cfg.n_languages * cfg.n_domains * cp.N_GROUPS * 60
    for r in reviews:
        assert 0 <= r.language < cfg.n_languages
        assert 0 <= r.domain < cfg.n_domains
        assert r.group in (0, 1)
        assert 0 <= r.sentiment < cp.N_SENTIMENT
        assert 0 <= r.topic < cp.N_TOPIC
        assert cfg.min_len <= len(r.tokens) <= cfg.max_len
        assert all(t >= len(cp.SPECIAL_TOKENS) for t in r.tokens)


def test_generate_deterministic(tiny_gen):
    a, _ = cp.generate(tiny_gen, 10)
    b, _ = cp.generate(tiny_gen, 10)
    assert [(r.tokens, r.sentiment, r.topic) for r in a] == \
           [(r.tokens, r.sentiment, r.topic) for r in b]


def test_language_blocks_disjoint(tiny_corpus):
    reviews, layout, _ = tiny_corpus
    per_lang = {}
    for r in reviews:
        per_lang.setdefault(r.language, set()).update(r.tokens)
    assert not per_lang[0] & per_lang[1]


def test_zero_marker_prob_plants_no_markers():
    cfg = cp.GeneratorConfig(n_languages=1, n_domains=1, marker_prob=(0.0, 0.0),
                             seed=5)
    reviews, layout = cp.generate(cfg, 50)
    marker_ids = {t for ids in layout.marker.values() for t in ids}
    assert all(not marker_ids & set(r.tokens) for r in reviews)


def test_marker_rate_matches_probability():
    cfg = cp.GeneratorConfig(n_languages=1, n_domains=1, marker_prob=(0.4, 0.0),
                             min_len=20, max_len=20, seed=6)
    reviews, layout = cp.generate(cfg, 300)
    marker_ids = {t for ids in layout.marker.values() for t in ids}
    g0 = [r for r in reviews if r.group == 0]
    rate = sum(t in marker_ids for r in g0 for t in r.tokens) / (20 * len(g0))
    assert rate == pytest.approx(0.4, abs=0.02)


def test_config_validation():
    with pytest.raises(ConfigError):
        cp.GeneratorConfig(marker_prob=(1.5, 0.0)).validate()
    with pytest.raises(ConfigError):
        cp.GeneratorConfig(min_len=10, max_len=5).validate()
    with pytest.raises(ConfigError):
        cp.generate(cp.GeneratorConfig(), 0)


# -- vocabulary and serialization ----------------------------------------------


def test_vocab_round_trip(tmp_path, tiny_corpus):
    _, layout, _ = tiny_corpus
    path = tmp_path / "vocab.txt"
    layout.vocab.save(path)
    loaded = cp.Vocabulary.load(path)
    assert loaded.tokens == layout.vocab.tokens


def test_vocab_requires_specials():
    with pytest.raises(ConfigError):
        cp.Vocabulary(["a", "b", "c", "d"])


def test_corpus_round_trip(tmp_path, tiny_corpus):
    reviews, layout, _ = tiny_corpus
    path = tmp_path / "c.jsonl"
    cp.save_corpus(reviews[:50], layout.vocab, path)
    back = cp.ingest(path, layout.vocab)
    assert [(r.tokens, r.language, r.domain, r.group, r.sentiment, r.topic)
            for r in back] == \
           [(r.tokens, r.language, r.domain, r.group, r.sentiment, r.topic)
            for r in reviews[:50]]


def test_ingest_reports_line_numbers(tmp_path, tiny_corpus):
    _, layout, _ = tiny_corpus
    good = json.dumps({"text": "l0d0_w0", "language": 0, "domain": 0,
                       "group": 0, "sentiment": "neutral", "topic": 0})
    path = tmp_path / "bad.jsonl"
    path.write_text(good + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 2"):
        cp.ingest(path, layout.vocab)


def test_ingest_schema_errors(tmp_path, tiny_corpus):
    _, layout, _ = tiny_corpus
    rec = {"text": "l0d0_w0", "language": 0, "domain": 0,
           "group": 0, "sentiment": "meh", "topic": 0}
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="sentiment"):
        cp.ingest(path, layout.vocab)
    rec["sentiment"], rec["group"] = "neutral", 3
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="group"):
        cp.ingest(path, layout.vocab)


def test_ingest_unknown_token_maps_to_unk(tmp_path, tiny_corpus):
    _, layout, _ = tiny_corpus
    rec = {"text": "never_seen_token l0d0_w0", "language": 0, "domain": 0,
           "group": 0, "sentiment": "positive", "topic": 1}
    path = tmp_path / "unk.jsonl"
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    (r,) = cp.ingest(path, layout.vocab)
    assert r.tokens[0] == cp.UNK_ID
    assert r.tokens[1] == layout.vocab.id_of("l0d0_w0")


# -- splitting -----------------------------------------------------------------


def test_split_proportions(tiny_corpus):
    reviews, _, splits = tiny_corpus
    n = len(reviews)
    assert len(splits.specialization) == round(0.5 * n)
    task_n = n - len(splits.specialization)
    assert abs(len(splits.train) - 0.6 * task_n) <= 30
    assert abs(len(splits.dev) - 0.2 * task_n) <= 30
    assert len(splits.train) + len(splits.dev) + len(splits.test) == task_n
    uids = [r.uid for part in (splits.train, splits.dev, splits.test,
                               splits.specialization) for r in part]
    assert len(uids) == len(set(uids)) == n


def test_split_stratified_by_group(tiny_corpus):
    _, _, splits = tiny_corpus
    for part in (splits.train, splits.dev, splits.test):
        counts = np.bincount([r.group for r in part], minlength=2)
        assert abs(counts[0] - counts[1]) <= len(cp.SENTIMENT_LABELS) * cp.N_TOPIC


def test_split_rejects_tiny_groups():
    reviews, _ = cp.generate(cp.GeneratorConfig(n_languages=1, n_domains=1, seed=1), 4)
    with pytest.raises(DataError):
        cp.split(reviews, seed=0)


def test_largest_remainder_sums():
    for n in range(1, 60):
        counts = cp._largest_remainder(n, (0.6, 0.2, 0.2))
        assert sum(counts) == n


def test_balance_groups():
    reviews, _ = cp.generate(cp.GeneratorConfig(n_languages=1, n_domains=1, seed=2), 30)
    skewed = [r for r in reviews if r.group == 0] + \
             [r for r in reviews if r.group == 1][:10]
    balanced = cp.balance_groups(skewed, seed=0)
    counts = np.bincount([r.group for r in balanced], minlength=2)
    assert counts[0] == counts[1] == 10


def test_sample_specialization(tiny_corpus):
    _, _, splits = tiny_corpus
    sampled = cp.sample_specialization(splits, 20, seed=1)
    counts = np.bincount([r.group for r in sampled], minlength=2)
    assert counts[0] == counts[1] == 20
    mono = cp.sample_specialization(splits, 10, languages={0}, seed=1)
    assert all(r.language == 0 for r in mono)
    with pytest.raises(DataError, match="have"):
        cp.sample_specialization(splits, 10 ** 6, seed=1)


# -- masking -------------------------------------------------------------------


def test_mask_count_formula():
    for length in range(1, 129):
        assert cp.mask_count(length) == max(1, round(0.15 * length))


def test_dynamic_mask_structure(tiny_corpus):
    reviews, layout, _ = tiny_corpus
    batch = cp.dynamic_mask(reviews[:8], len(layout.vocab), seed=3, step=0)
    assert batch.input_ids[:, 0].tolist() == [cp.CLS_ID] * 8
    for i, r in enumerate(reviews[:8]):
        assert batch.lengths[i] == len(r.tokens) + 1
        pos = batch.masked_positions[i]
        assert len(pos) == cp.mask_count(len(r.tokens))
        assert all(1 <= p < batch.lengths[i] for p in pos)
        assert batch.masked_targets[i] == [r.tokens[p - 1] for p in pos]
        # positions outside the sequence stay PAD
        assert np.all(batch.input_ids[i, batch.lengths[i]:] == cp.PAD_ID)


def test_dynamic_mask_deterministic_per_step(tiny_corpus):
    reviews, layout, _ = tiny_corpus
    a = cp.dynamic_mask(reviews[:8], len(layout.vocab), seed=3, step=5)
    b = cp.dynamic_mask(reviews[:8], len(layout.vocab), seed=3, step=5)
    c = cp.dynamic_mask(reviews[:8], len(layout.vocab), seed=3, step=6)
    assert np.array_equal(a.input_ids, b.input_ids)
    assert a.masked_positions == b.masked_positions
    assert not np.array_equal(a.input_ids, c.input_ids)


def test_dynamic_mask_truncation(tiny_corpus):
    reviews, layout, _ = tiny_corpus
    batch = cp.dynamic_mask(reviews[:4], len(layout.vocab), seed=0, step=0, max_len=5)
    assert batch.input_ids.shape[1] == 5
    assert np.all(batch.lengths == 5)


def test_dynamic_mask_empty_sequence_rejected(tiny_corpus):
    _, layout, _ = tiny_corpus
    bad = cp.Review(tokens=[], language=0, domain=0, group=0, sentiment=0, topic=0)
    with pytest.raises(ContractError):
        cp.dynamic_mask([bad], len(layout.vocab), seed=0, step=0)


def test_mask_split_proportions(tiny_corpus):
    reviews, layout, _ = tiny_corpus
    v = len(layout.vocab)
    n_mask = n_keep = n_rand = 0
    step = 0
    while n_mask + n_keep + n_rand < 100_000:
        batch = cp.dynamic_mask(reviews, v, seed=9, step=step)
        for i, r in enumerate(reviews):
            for p in batch.masked_positions[i]:
                tok = int(batch.input_ids[i, p])
                if tok == cp.MASK_ID:
                    n_mask += 1
                elif tok == r.tokens[p - 1]:
                    n_keep += 1
                else:
                    n_rand += 1
        step += 1
    total = n_mask + n_keep + n_rand
    assert n_mask / total == pytest.approx(0.8, abs=0.01)
    assert n_rand / total == pytest.approx(0.1, abs=0.01)
    assert n_keep / total == pytest.approx(0.1, abs=0.01)


def test_plain_batch(tiny_corpus):
    reviews, _, _ = tiny_corpus
    ids, lengths = cp.plain_batch(reviews[:4], max_len=16)
    assert ids[:, 0].tolist() == [cp.CLS_ID] * 4
    for i, r in enumerate(reviews[:4]):
        assert lengths[i] == len(r.tokens) + 1
        assert ids[i, 1:lengths[i]].tolist() == r.tokens
