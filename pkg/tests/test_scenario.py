import numpy as np
import pytest

from agent_pyramid import lcs, scenario
from agent_pyramid.errors import ConfigurationError
from agent_pyramid.scenario import BehaviorType
from oracles import occupancy_straight

GRID = (8, 8)


def test_gen_symbolic():
    (ep,) = scenario.gen_symbolic("ABCABDADD", 1)
    assert len(ep) == 9 and scenario.letters(ep.symbols) == "ABCABDADD"
    eps = scenario.gen_symbolic("A", 3)
    assert [e.id for e in eps] == [1, 2, 3] and all(len(e) == 1 for e in eps)
    assert scenario.gen_symbolic("AB", 0) == []


def test_straight_vehicle_matches_oracle():
    a = BehaviorType("TypeA", (0, 3), (1, 0), speed=1)
    frames, label = scenario.gen_traffic_episode(0, a, GRID, 10, 0.0)
    assert label == "TypeA"
    for t, cells in enumerate(occupancy_straight(0, 3, 8, 10)):
        assert {(x, y) for y, x in zip(*np.nonzero(frames[t]))} == cells


def test_same_seed_same_frames():
    a, _, _ = scenario.default_behaviors(GRID)
    f1, _ = scenario.gen_traffic_episode(42, a, GRID, 16, 0.05)
    f2, _ = scenario.gen_traffic_episode(42, a, GRID, 16, 0.05)
    assert np.array_equal(f1, f2)


def test_noise_bounds():
    a, _, _ = scenario.default_behaviors(GRID)
    with pytest.raises(ConfigurationError):
        scenario.gen_traffic_episode(0, a, GRID, 16, 0.5)


def test_duration_must_cover_traversal():
    a, _, _ = scenario.default_behaviors(GRID)
    with pytest.raises(ConfigurationError):
        scenario.gen_traffic_episode(0, a, GRID, 15, 0.0)


def test_entry_outside_grid():
    with pytest.raises(ConfigurationError):
        BehaviorType("TypeA", (9, 0), (1, 0)).path(GRID)


def test_small_grid_rejected():
    with pytest.raises(ConfigurationError):
        scenario.default_behaviors((4, 4))


def clean(b, duration=16):
    return scenario.occupancy(b, GRID, duration)


def test_default_types_differ_and_stay_in_bounds():
    a, b, c = scenario.default_behaviors(GRID)
    fa, fb = clean(a), clean(b)
    differing = sum(not np.array_equal(x, y) for x, y in zip(fa, fb))
    assert differing > 8
    for beh in (a, b, c):
        assert beh.traversal_time(GRID) <= 16
        assert all(0 <= x < 8 and 0 <= y < 8 for x, y in beh.path(GRID))


def test_typec_shares_the_typea_prefix():
    a, _, c = scenario.default_behaviors(GRID)
    fa, fc = clean(a), clean(c)
    turn_tick = 8  # head reaches the first cell after the turn at half a cell per tick
    assert all(np.array_equal(fa[t], fc[t]) for t in range(turn_tick))
    assert not np.array_equal(fa[turn_tick], fc[turn_tick])


def test_noise_free_episodes_are_identical():
    for beh in scenario.default_behaviors(GRID):
        f1, _ = scenario.gen_traffic_episode(1, beh, GRID, 16, 0.0)
        f2, _ = scenario.gen_traffic_episode(2, beh, GRID, 16, 0.0)
        assert np.array_equal(f1, f2)


def cell_similarity(f1, f2):
    """Mean per-cell similarity of the occupancy streams, as bottom agents see them."""
    s1 = f1.reshape(len(f1), -1).T
    s2 = f2.reshape(len(f2), -1).T
    return float(np.mean([lcs.similarity_full(tuple(x), tuple(y)) for x, y in zip(s1, s2)]))


def test_separability_at_low_noise():
    behaviors = scenario.default_behaviors(GRID)
    ok = 0
    for trial in range(100):
        ss = np.random.SeedSequence(trial).spawn(6)
        eps = [scenario.gen_traffic_episode(ss[i], behaviors[i % 3], GRID, 16, 0.05)[0]
               for i in range(6)]
        same = min(cell_similarity(eps[i], eps[i + 3]) for i in range(3))
        cross = max(cell_similarity(eps[i], eps[j]) for i in range(3) for j in range(3) if i != j)
        ok += same >= cross
    assert ok >= 95


def test_episode_log_round_trip(tmp_path):
    a, b, _ = scenario.default_behaviors(GRID)
    f1, _ = scenario.gen_traffic_episode(1, a, GRID, 16, 0.1)
    f2, _ = scenario.gen_traffic_episode(2, b, GRID, 16, 0.1)
    text = scenario.LOG_HEADER + "\n" + scenario.format_episode(1, f1, "TypeA") \
        + scenario.format_episode(2, f2, None)
    path = tmp_path / "episodes.log"
    path.write_text(text)
    (e1, l1, g1), (e2, l2, g2) = scenario.read_episode_log(path)
    assert (e1, l1, e2, l2) == (1, "TypeA", 2, None)
    assert np.array_equal(g1, f1) and np.array_equal(g2, f2)
