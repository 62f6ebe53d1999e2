from itertools import combinations, product

import pytest

from agent_pyramid import lcs
from agent_pyramid.cluster_model import (
    PredictionStats,
    PrototypeStore,
    StreamingRecognizer,
    finalize_episode,
    recognize,
    verify,
)
from agent_pyramid.errors import UndefinedInputError
from oracles import brute_lcs_length


def make_store(*seqs):
    store = PrototypeStore()
    for e, s in enumerate(seqs, 1):
        store.create(s, e)
    return store


def walkthrough_codes(store, stream, window, hints=None):
    """Per-tick recognition over fixed windows; ``hints[w]`` biases window ``w``."""
    codes = []
    for w in range(0, len(stream), window):
        rec = StreamingRecognizer(store)
        hint = (hints or {}).get(w // window)
        for s in stream[w:w + window]:
            rec.push(s)
            codes.append(rec.recognize(hint).cluster_id)
    return codes


@pytest.fixture
def abc_store():
    return make_store("ABC", "ABD", "ADD")


def test_empty_store_gives_blank():
    r = recognize(PrototypeStore(), "AB")
    assert (r.cluster_id, r.score, r.predicted_next) == (0, 0.0, None)


def test_ab_prefix_tie_goes_to_smallest_id(abc_store):
    r = recognize(abc_store, "AB")
    assert (r.cluster_id, r.score, r.predicted_next) == (1, 1.0, "C")


def test_hint_breaks_the_tie(abc_store):
    r = recognize(abc_store, "AB", hint=2)
    assert (r.cluster_id, r.predicted_next) == (2, "D")


def test_full_match(abc_store):
    r = recognize(abc_store, "ADD")
    assert (r.cluster_id, r.score, r.predicted_next) == (3, 1.0, None)


def test_hint_within_margin_wins_beyond_margin_loses():
    store = make_store("AAAAAAAAAB", "AAAAAAAAAC")
    buf = "AAAAAAAAAB"
    assert recognize(store, buf, hint=2, hint_margin=0.1).cluster_id == 2
    assert recognize(store, buf, hint=2, hint_margin=0.05).cluster_id == 1
    far = make_store("ABCD", "XYZW")
    assert recognize(far, "ABC", hint=2).cluster_id == 1


def test_unknown_hint_is_ignored(abc_store):
    assert recognize(abc_store, "AB", hint=9).cluster_id == 1


def test_recognition_invariants(abc_store):
    for buf in ("A", "AD", "ABD", "DDA", "CAB"):
        r = recognize(abc_store, buf)
        proto = abc_store[r.cluster_id].sequence
        assert r.score == pytest.approx(lcs.similarity_stream(buf, proto))
        if r.predicted_next is not None:
            assert r.predicted_next == proto[r.matched_prefix_end + 1]


def test_empty_buffer_is_rejected(abc_store):
    with pytest.raises(UndefinedInputError):
        recognize(abc_store, "")


def test_hint_tie_break_exhaustive():
    """Every store of up to 3 prototypes (length <= 3, 3 symbols), every buffer up to 2."""
    words = ["".join(w) for n in (1, 2, 3) for w in product("ABC", repeat=n)]
    buffers = ["".join(w) for n in (1, 2) for w in product("ABC", repeat=n)]
    checked = 0
    for k in (1, 2, 3):
        for protos in combinations(words, k):
            store = make_store(*protos)
            for buf in buffers:
                lens = [brute_lcs_length(buf, p) for p in protos]
                top = max(lens)
                tied = [i + 1 for i, n in enumerate(lens) if n == top]
                assert recognize(store, buf).cluster_id == tied[0]
                for h in tied:
                    assert recognize(store, buf, hint=h, hint_margin=0.0).cluster_id == h
                    checked += 1
    assert checked > 10_000


def test_walkthrough_without_hints_ties_on_ab(abc_store):
    codes = walkthrough_codes(abc_store, "ABCABDADD", 3)
    protos = [p.sequence for p in abc_store]
    expected = []
    for w in range(0, 9, 3):
        for i in range(w + 1, w + 4):
            lens = [brute_lcs_length("ABCABDADD"[w:i], p) for p in protos]
            expected.append(lens.index(max(lens)) + 1)
    assert codes == expected == [1, 1, 1, 1, 1, 2, 1, 2, 3]
    # the second tick of each AB window is an exact tie between 1 and 2
    for w in (0, 3):
        lens = [lcs.lcs_length("AB", p.sequence) for p in abc_store]
        assert lens[:2] == [2, 2] and codes[w + 1] == 1


def test_walkthrough_with_hints_is_stable(abc_store):
    codes = walkthrough_codes(abc_store, "ABCABDADD", 3, hints={1: 2, 2: 3})
    assert codes == [1, 1, 1, 2, 2, 2, 3, 3, 3]


def test_verify():
    s = PredictionStats()
    assert verify(s, None, "C") == s
    assert verify(s, "C", "C") == PredictionStats(1, 0, 0)
    s2 = verify(verify(s, "C", "D"), "C", "D")
    assert (s2.misses, s2.streak_misses) == (2, 2)
    assert verify(s2, "C", "C").streak_misses == 0


def test_finalize_creates_then_merges():
    store = PrototypeStore()
    assert finalize_episode(store, "ABC", 1, 0.8) == (1, True)
    assert finalize_episode(store, "ABC", 2, 0.8) == (1, False)
    assert store[1].support == 2 and store[1].last_update == 2
    assert finalize_episode(store, "ADD", 3, 0.8) == (2, True)


def test_finalize_replaces_prototype_with_latest():
    store = make_store("ABCDEFGHIJ")
    code, created = finalize_episode(store, "ABCDEFGHIX", 2, 0.8)
    assert (code, created) == (1, False)
    assert store[1].sequence == tuple("ABCDEFGHIX")


def test_finalize_postcondition_and_dense_ids():
    import random
    rng = random.Random(5)
    store = PrototypeStore()
    for e in range(1, 60):
        buf = "".join(rng.choice("AB") for _ in range(rng.randint(1, 6)))
        code, created = finalize_episode(store, buf, e, 0.8)
        if not created:
            assert lcs.similarity_full(buf, store[code].sequence) >= 0.8
    assert [p.cluster_id for p in store] == list(range(1, len(store) + 1))
    assert len(store) <= 59


def test_finalize_is_deterministic():
    stream = ["ABC", "ABD", "ABC", "ADD", "ABD", "AB"]

    def replay():
        store = PrototypeStore()
        return [finalize_episode(store, s, e, 0.8) for e, s in enumerate(stream, 1)]

    assert replay() == replay()


def test_finalize_validates_inputs():
    with pytest.raises(UndefinedInputError):
        finalize_episode(PrototypeStore(), "", 1, 0.8)
    with pytest.raises(ValueError):
        finalize_episode(PrototypeStore(), "A", 1, 0.0)


def test_streaming_matches_batch(abc_store):
    rec = StreamingRecognizer(abc_store)
    for i, s in enumerate("ADBDCA", 1):
        rec.push(s)
        assert rec.lengths() == [lcs.lcs_length("ADBDCA"[:i], p.sequence) for p in abc_store]
        assert rec.recognize(2) == recognize(abc_store, "ADBDCA"[:i], 2)
