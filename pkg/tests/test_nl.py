import numpy as np
import pytest

from prefplan.nl import (
    DECREASE,
    INCREASE,
    CorpusEntry,
    NlError,
    apply,
    apply_to_query,
    default_corpus,
    embed,
    load_corpus,
    match,
    save_corpus,
)

HELD_OUT = [
    ("please move a bit faster", "speed", INCREASE),
    ("can you speed up", "speed", INCREASE),
    ("please slow down now", "speed", DECREASE),
    ("move a little slower", "speed", DECREASE),
    ("jump a bit higher", "hop_height", INCREASE),
    ("i want taller hops", "hop_height", INCREASE),
    ("keep those jumps lower", "hop_height", DECREASE),
    ("make your hops smaller", "hop_height", DECREASE),
    ("hop more frequently", "hop_frequency", INCREASE),
    ("bounce more often", "hop_frequency", INCREASE),
    ("hop less frequently", "hop_frequency", DECREASE),
    ("take fewer jumps", "hop_frequency", DECREASE),
]


def test_embed_unit_norm():
    for t in ("go faster", "hop", "a b c d e"):
        assert np.linalg.norm(embed(t)) == pytest.approx(1.0, abs=1e-6)


def test_embed_punctuation_invariant():
    assert float(embed("go faster") @ embed("go faster!")) == pytest.approx(1.0, abs=1e-6)
    assert float(embed("Go,  FASTER?") @ embed("go faster")) == pytest.approx(1.0, abs=1e-6)


def test_embed_partial_overlap_strictly_between():
    sim = float(embed("please move faster") @ embed("please run faster"))
    assert 0.0 < sim < 1.0


def test_embed_rejects_empty():
    with pytest.raises(NlError):
        embed("!!!")


def test_embed_deterministic():
    np.testing.assert_array_equal(embed("hop more often"), embed("hop more often"))


def test_match_exact_corpus_phrase():
    corpus = default_corpus()
    m = match("move faster", corpus)
    assert (m.attr, m.direction) == ("speed", INCREASE)
    assert m.similarity == pytest.approx(1.0, abs=1e-6)


def test_match_prefers_closest_phrase():
    corpus = [
        CorpusEntry.make("please move faster", "speed", INCREASE),
        CorpusEntry.make("slow down", "speed", DECREASE),
    ]
    m = match("go faster", corpus)
    assert (m.attr, m.direction) == ("speed", INCREASE)


def test_match_gibberish_has_no_intent():
    m = match("qwxz", default_corpus())
    assert not m.has_intent
    assert m.attr is None and m.direction is None


def test_match_tie_breaks_by_corpus_order():
    corpus = [
        CorpusEntry.make("same phrase", "speed", INCREASE),
        CorpusEntry.make("same phrase", "hop_height", DECREASE),
    ]
    m = match("same phrase", corpus)
    assert (m.attr, m.direction) == ("speed", INCREASE)


def test_match_empty_corpus_rejected():
    with pytest.raises(NlError):
        match("anything", [])


def test_held_out_paraphrases_routed_correctly():
    corpus = default_corpus()
    hits = sum((match(t, corpus).attr, match(t, corpus).direction) == (a, d)
               for t, a, d in HELD_OUT)
    assert hits >= 11, f"only {hits}/12 held-out paraphrases matched"


def test_apply_formulas():
    assert apply(INCREASE, 0.5) == pytest.approx(0.75)
    assert apply(DECREASE, 0.5) == pytest.approx(0.25)
    assert apply(INCREASE, 1.0) == 1.0
    assert apply(DECREASE, 0.0) == 0.0
    with pytest.raises(NlError):
        apply(INCREASE, 1.5)
    with pytest.raises(NlError):
        apply("sideways", 0.5)


def test_apply_is_monotone_contraction():
    v = 0.1
    prev = v
    for _ in range(20):
        v = apply(INCREASE, v)
        assert v >= prev
        prev = v
    assert v == pytest.approx(1.0, abs=1e-4)
    v = 0.9
    for _ in range(20):
        v = apply(DECREASE, v)
    assert v == pytest.approx(0.0, abs=1e-4)


def test_apply_to_query_sets_mask_bit():
    v, m = apply_to_query(np.array([0.5, 0.5, 0.5], np.float32),
                          np.zeros(3, np.float32), 1, INCREASE)
    assert v[1] == pytest.approx(0.75)
    assert m.tolist() == [0.0, 1.0, 0.0]


def test_corpus_round_trip(tmp_path):
    corpus = default_corpus()
    path = tmp_path / "corpus.jsonl"
    save_corpus(path, corpus)
    loaded = load_corpus(path)
    assert [(e.text, e.attr, e.direction) for e in loaded] == \
           [(e.text, e.attr, e.direction) for e in corpus]


def test_corpus_has_multiple_phrasings_per_intent():
    corpus = default_corpus()
    from collections import Counter
    counts = Counter((e.attr, e.direction) for e in corpus)
    assert len(counts) == 6
    assert all(v >= 2 for v in counts.values())
