from itertools import product

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agent_pyramid.errors import TopologyError
from agent_pyramid.sequence import BLANK, Alphabet, Episode, compose, intern


def test_first_code_follows_reserved_blank():
    assert intern(Alphabet(), "ABC-segment") == 1
    assert BLANK == 0


def test_intern_is_idempotent():
    alpha = Alphabet()
    assert intern(alpha, "x") == intern(alpha, "x") == 1
    assert alpha.next_code == 2


def test_distinct_tokens_get_distinct_codes():
    alpha = Alphabet()
    assert (intern(alpha, "t1"), intern(alpha, "t2")) == (1, 2)


def test_registry_inverts():
    alpha = Alphabet()
    tokens = ["a", (1, 2), (2, 1), 7, "a", (1, 2)]
    codes = [alpha.intern(t) for t in tokens]
    assert all(alpha.token_of(c) == t for c, t in zip(codes, tokens))
    assert len(alpha) == alpha.next_code - 1 == 4


def test_compose_is_positional():
    assert compose([1, 1, 1, 1]) == compose([1, 1, 1, 1])
    assert compose([1, 2]) != compose([2, 1])


def test_compose_checks_fan_in():
    with pytest.raises(TopologyError):
        compose([1, 2, 3], fan_in=4)


def test_one_tick_of_children_is_one_parent_symbol():
    alpha = Alphabet()
    assert alpha.intern(compose([2, 2, 2, 3])) == 1
    assert len(alpha) == 1


def test_two_children_two_codes_give_four_parent_symbols():
    alpha = Alphabet()
    codes = {alpha.intern(compose(list(t))) for t in product((1, 2), repeat=2)}
    assert len(codes) == 4


@given(st.lists(st.integers(0, 16), min_size=1, max_size=4),
       st.lists(st.integers(0, 16), min_size=1, max_size=4))
def test_compose_injective(a, b):
    if len(a) == len(b):
        assert (compose(a) == compose(b)) == (a == b)


def test_episode_freezes_symbols():
    ep = Episode(3, [1, 2, 3], "TypeA")
    assert ep.symbols == (1, 2, 3) and len(ep) == 3
