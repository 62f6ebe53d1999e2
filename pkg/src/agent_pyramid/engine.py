"""Compiled lock-step kernel for whole-protocol runs.

:class:`FastPyramid` reproduces :class:`~agent_pyramid.topology.Pyramid`
tick for tick (same codes, hints, predictions and cluster stores) but keeps
all agent state in flat numpy arrays and runs one complete episode per
compiled call.  It supports the configuration space used by the experiment
protocol: integer sensor tokens, single-use feedback and the
replace-with-latest merge rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError, InputError
from .topology import ADVERSARIAL_CODE, PyramidTopology, _per_layer

_EPS = 1e-9


@njit(cache=True, inline="always")
def _mix(h: np.uint64, x: np.int64) -> np.uint64:
    h ^= np.uint64(x) + np.uint64(0x9E3779B97F4A7C15) + (h << np.uint64(6)) + (h >> np.uint64(2))
    return h * np.uint64(0xBF58476D1CE4E5B9)


@njit(cache=True)
def _intern_tuple(keys, vals, agent, codes, next_code, inverse):
    """Open-addressing lookup of (agent, *codes); allocates the next code on a miss."""
    width = codes.shape[0]
    mask = keys.shape[0] - 1
    h = _mix(np.uint64(1469598103934665603), agent)
    for f in range(width):
        h = _mix(h, codes[f])
    slot = np.int64(h & np.uint64(mask))
    while True:
        if vals[slot] == 0:
            code = next_code[agent]
            next_code[agent] += 1
            keys[slot, 0] = agent
            for f in range(width):
                keys[slot, f + 1] = codes[f]
                inverse[agent, code, f] = codes[f]
            vals[slot] = code
            return code
        if keys[slot, 0] == agent:
            same = True
            for f in range(width):
                if keys[slot, f + 1] != codes[f]:
                    same = False
                    break
            if same:
                return vals[slot]
        slot = (slot + 1) & mask


@njit(cache=True)
def _alignment_end(a, n, b, m, table):
    """Last prototype index of the lexicographically smallest maximum alignment."""
    w = m + 1
    for j in range(m + 1):
        table[n * w + j] = 0
    for i in range(n - 1, -1, -1):
        table[i * w + m] = 0
        ai = a[i]
        for j in range(m - 1, -1, -1):
            if ai == b[j]:
                table[i * w + j] = table[(i + 1) * w + j + 1] + 1
            else:
                down = table[(i + 1) * w + j]
                right = table[i * w + j + 1]
                table[i * w + j] = down if down >= right else right
    remaining = table[0]
    i0 = 0
    j0 = 0
    last = -1
    while remaining > 0:
        for i in range(i0, n):
            ai = a[i]
            j = j0
            while j < m and b[j] != ai:
                j += 1
            if j == m:
                continue
            if table[(i + 1) * w + j + 1] == remaining - 1:
                last = j
                i0 = i + 1
                j0 = j + 1
                remaining -= 1
                break
    return last


@njit(cache=True)
def _run_episode(frames, episode_id, n_bottom, children, active, adversarial, adv_code,
                 theta, hint_margin, feedback,
                 nclus, proto, plen, support, last_update, rows,
                 buf, blen, tokcode, next_code, keys, vals, inverse,
                 pending, hint, hits, misses, streak, ticks,
                 up_codes, used_hints, sent_hints, final, scratch):
    duration = frames.shape[0]
    n = nclus.shape[0]
    width = children.shape[1]
    child_codes = np.zeros(width, dtype=np.int64)
    own_pred = np.zeros(n, dtype=np.int64)
    calls = 0
    lengths = np.zeros(proto.shape[1], dtype=np.int64)

    for t in range(duration):
        for a in range(n):
            if not active[a]:
                up_codes[t, a] = 0
                own_pred[a] = 0
                continue
            # intern the input
            if a < n_bottom:
                tok = frames[t, a]
                sym = tokcode[a, tok]
                if sym == 0:
                    sym = next_code[a]
                    next_code[a] += 1
                    tokcode[a, tok] = sym
            else:
                for f in range(width):
                    child_codes[f] = up_codes[t, children[a, f]]
                sym = _intern_tuple(keys, vals, a, child_codes, next_code, inverse)
            # verify the pending prediction
            if pending[a] != 0:
                if pending[a] == sym:
                    hits[a] += 1
                    streak[a] = 0
                else:
                    misses[a] += 1
                    streak[a] += 1
            nb = blen[a]
            buf[a, nb] = sym
            nb += 1
            blen[a] = nb
            # advance one DP row per prototype
            k_count = nclus[a]
            for k in range(k_count):
                m = plen[a, k]
                diag = 0
                left = 0
                for j in range(1, m + 1):
                    up = rows[a, k, j]
                    if proto[a, k, j - 1] == sym:
                        cur = diag + 1
                    else:
                        cur = up if up >= left else left
                    diag = up
                    rows[a, k, j] = cur
                    left = cur
                lengths[k] = rows[a, k, m]
            h = hint[a]
            used_hints[t, a] = h
            code = 0
            predicted = 0
            if k_count > 0:
                best = lengths[0]
                win = 0
                for k in range(1, k_count):
                    if lengths[k] > best:
                        best = lengths[k]
                        win = k
                if 0 < h <= k_count:
                    if (best - lengths[h - 1]) / nb <= hint_margin + _EPS:
                        win = h - 1
                m = plen[a, win]
                end = _alignment_end(buf[a], nb, proto[a, win], m, scratch)
                if end + 1 < m:
                    predicted = proto[a, win, end + 1]
                code = win + 1
            pending[a] = predicted
            own_pred[a] = predicted
            hint[a] = 0
            ticks[a] += 1
            up_codes[t, a] = adv_code if adversarial[a] else code

        for a in range(n):
            sent_hints[t, a] = 0
        if feedback:
            for a in range(n - 1, n_bottom - 1, -1):
                if not active[a] or own_pred[a] == 0:
                    continue
                for f in range(width):
                    c = children[a, f]
                    if c < 0:
                        continue
                    hv = inverse[a, own_pred[a], f]
                    if hv != 0 and active[c]:
                        hint[c] = hv
                        sent_hints[t, c] = hv
                        calls += 1

    for a in range(n):
        final[a] = 0
        nb = blen[a]
        if not active[a] or nb == 0:
            continue
        k_count = nclus[a]
        best_k = -1
        best = -1.0
        for k in range(k_count):
            m = plen[a, k]
            longest = nb if nb >= m else m
            score = rows[a, k, m] / longest
            if score > best:
                best = score
                best_k = k
        if best_k >= 0 and best >= theta[a] - _EPS:
            for j in range(nb):
                proto[a, best_k, j] = buf[a, j]
            plen[a, best_k] = nb
            support[a, best_k] += 1
            last_update[a, best_k] = episode_id
            final[a] = best_k + 1
        else:
            k = k_count
            for j in range(nb):
                proto[a, k, j] = buf[a, j]
            plen[a, k] = nb
            support[a, k] = 1
            last_update[a, k] = episode_id
            nclus[a] = k_count + 1
            final[a] = k + 1
        for k in range(nclus[a]):
            for j in range(rows.shape[2]):
                rows[a, k, j] = 0
        blen[a] = 0
        pending[a] = 0
        hint[a] = 0
    return calls


@dataclass
class EpisodeTrace:
    """Per-tick arrays of one episode, shape ``(duration, n_agents)``."""

    episode: int
    up_codes: np.ndarray
    used_hints: np.ndarray
    sent_hints: np.ndarray


class FastPyramid:
    """Array-backed pyramid with the same observable behaviour as ``Pyramid``.

    ``max_episodes`` and ``max_length`` bound the number of clusters per agent
    and the episode length; ``n_tokens`` bounds bottom-layer sensor tokens,
    which must be integers in ``range(n_tokens)``.
    """

    def __init__(self, topology: PyramidTopology, *, max_episodes: int, max_length: int,
                 theta: float | Sequence[float] = 0.8, hint_margin: float = 0.1,
                 feedback: bool = True, adversarial: Iterable[int] = (),
                 adversarial_code: int = ADVERSARIAL_CODE, standby: Iterable[int] = (),
                 n_tokens: int = 2) -> None:
        self.topology = topology
        n = topology.n_agents
        self.n_bottom = topology.sizes[0]
        self.feedback = feedback
        self.hint_margin = float(hint_margin)
        self.adversarial_code = int(adversarial_code)
        self.max_length = max_length
        thetas = _per_layer(theta, topology.layers)
        self.theta = np.array([thetas[topology.layer_of(a) - 1] for a in range(n)])

        width = topology.block
        self.children = np.full((n, width), -1, dtype=np.int64)
        for a, kids in enumerate(topology.children):
            if kids:
                self.children[a, :len(kids)] = kids
        self.adversarial = np.zeros(n, dtype=np.bool_)
        for a in adversarial:
            if not 0 <= a < n:
                raise ConfigurationError(f"unknown adversarial agent id {a}")
            self.adversarial[a] = True
        self.standby = np.zeros(n, dtype=np.bool_)
        for a in standby:
            self.standby[a] = True

        kmax = max_episodes
        symbols = max_episodes * max_length + 1
        self.nclus = np.zeros(n, dtype=np.int64)
        self.proto = np.zeros((n, kmax, max_length), dtype=np.int64)
        self.plen = np.zeros((n, kmax), dtype=np.int64)
        self.support = np.zeros((n, kmax), dtype=np.int64)
        self.last_update = np.zeros((n, kmax), dtype=np.int64)
        self.rows = np.zeros((n, kmax, max_length + 1), dtype=np.int64)
        self.buf = np.zeros((n, max_length), dtype=np.int64)
        self.blen = np.zeros(n, dtype=np.int64)
        self.tokcode = np.zeros((n, n_tokens), dtype=np.int64)
        self.next_code = np.ones(n, dtype=np.int64)
        n_upper = n - self.n_bottom
        cap = 1
        while cap < 2 * max(1, n_upper) * symbols:
            cap <<= 1
        self.keys = np.zeros((cap, width + 1), dtype=np.int64)
        self.vals = np.zeros(cap, dtype=np.int64)
        self.inverse = np.zeros((n, symbols if n_upper else 1, width), dtype=np.int64)
        self.pending = np.zeros(n, dtype=np.int64)
        self.hint = np.zeros(n, dtype=np.int64)
        self.hits = np.zeros(n, dtype=np.int64)
        self.misses = np.zeros(n, dtype=np.int64)
        self.streak = np.zeros(n, dtype=np.int64)
        self.ticks = np.zeros(n, dtype=np.int64)
        self._scratch = np.zeros((max_length + 1) ** 2, dtype=np.int64)
        self.feedback_calls = 0
        self.episodes = 0

    def active_mask(self) -> np.ndarray:
        topo = self.topology
        active = np.zeros(topo.n_agents, dtype=np.bool_)
        for a in range(topo.n_agents):
            if self.standby[a]:
                continue
            kids = topo.children[a]
            active[a] = not kids or bool(active[list(kids)].any())
        return active

    def set_standby(self, agent: int, standby: bool) -> None:
        self.standby[agent] = standby

    def run_episode(self, episode_id: int, frames: np.ndarray) -> tuple[np.ndarray, EpisodeTrace]:
        """Step one episode; ``frames`` is ``(duration, n_bottom)`` integer tokens."""
        frames = np.ascontiguousarray(frames, dtype=np.int64).reshape(len(frames), -1)
        duration = frames.shape[0]
        if frames.shape[1] != self.n_bottom:
            raise InputError(f"expected {self.n_bottom} sensor tokens per tick, got {frames.shape[1]}")
        if duration > self.max_length:
            raise ConfigurationError(f"episode of {duration} ticks exceeds max_length {self.max_length}")
        if self.episodes >= self.proto.shape[1]:
            raise ConfigurationError("episode capacity exhausted")
        if frames.size and (frames.min() < 0 or frames.max() >= self.tokcode.shape[1]):
            raise InputError("sensor token out of range")
        n = self.topology.n_agents
        up = np.zeros((duration, n), dtype=np.int64)
        used = np.zeros((duration, n), dtype=np.int64)
        sent = np.zeros((duration, n), dtype=np.int64)
        final = np.zeros(n, dtype=np.int64)
        self.feedback_calls += _run_episode(
            frames, episode_id, self.n_bottom, self.children, self.active_mask(),
            self.adversarial, self.adversarial_code, self.theta, self.hint_margin, self.feedback,
            self.nclus, self.proto, self.plen, self.support, self.last_update, self.rows,
            self.buf, self.blen, self.tokcode, self.next_code, self.keys, self.vals, self.inverse,
            self.pending, self.hint, self.hits, self.misses, self.streak, self.ticks,
            up, used, sent, final, self._scratch,
        )
        self.episodes += 1
        return final, EpisodeTrace(episode_id, up, used, sent)

    def prototypes(self, agent: int) -> list[tuple[int, tuple, int, int]]:
        """``(cluster_id, sequence, support, last_update)`` for every cluster of ``agent``."""
        return [
            (k + 1, tuple(int(s) for s in self.proto[agent, k, :self.plen[agent, k]]),
             int(self.support[agent, k]), int(self.last_update[agent, k]))
            for k in range(int(self.nclus[agent]))
        ]
