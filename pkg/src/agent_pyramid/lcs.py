"""Longest-common-subsequence primitives used by the cluster models.

Sequences are any indexable sequences of hashable symbols (tuples of ints
in the simulator, plain strings in small examples).
"""

from __future__ import annotations

from functools import lru_cache
from typing import Hashable, Optional, Sequence

from .errors import UndefinedInputError

Alignment = list[tuple[int, int]]


def symbol_masks(seq: Sequence[Hashable]) -> dict:
    """Map each symbol to the bitmask of positions where it occurs in ``seq``."""
    masks: dict = {}
    for j, s in enumerate(seq):
        masks[s] = masks.get(s, 0) | (1 << j)
    return masks


def advance(v: int, mask: Optional[int], full: int) -> int:
    """Consume one symbol of the other sequence in the bit-parallel LCS row.

    ``v`` encodes the DP row against a fixed sequence: the LCS with the first
    ``k`` symbols equals the number of zero bits among the low ``k`` bits.
    """
    if not mask:
        return v
    u = v & mask
    return ((v + u) | (v - u)) & full


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return 0
    masks = symbol_masks(b)
    full = (1 << m) - 1
    v = full
    for s in a:
        v = advance(v, masks.get(s), full)
    return m - v.bit_count()


def _suffix_table(a: Sequence[Hashable], b: Sequence[Hashable]) -> list[list[int]]:
    # table[i][j] == lcs_length(a[i:], b[j:])
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        ai = a[i]
        for j in range(m - 1, -1, -1):
            if ai == b[j]:
                row[j] = below[j + 1] + 1
            else:
                row[j] = below[j] if below[j] >= row[j + 1] else row[j + 1]
    return table


def lcs_alignment(a: Sequence[Hashable], b: Sequence[Hashable]) -> Alignment:
    """Return one maximum matching between ``a`` and ``b``.

    Among all maximum matchings the lexicographically smallest list of
    ``(i, j)`` pairs is returned: match as early as possible in ``a``, then
    as early as possible in ``b``.
    """
    table = _suffix_table(a, b)
    remaining = table[0][0]
    b = list(b)
    n = len(a)
    pairs: Alignment = []
    i0 = j0 = 0
    while remaining:
        for i in range(i0, n):
            try:
                j = b.index(a[i], j0)
            except ValueError:
                continue
            # suffix LCS is non-increasing in j, so only the first occurrence can work
            if table[i + 1][j + 1] == remaining - 1:
                pairs.append((i, j))
                i0, j0 = i + 1, j + 1
                remaining -= 1
                break
    return pairs


def similarity_full(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        raise UndefinedInputError("similarity of two empty sequences is undefined")
    return lcs_length(a, b) / longest


def similarity_stream(buffer: Sequence[Hashable], prototype: Sequence[Hashable]) -> float:
    """Fraction of the symbols received so far that ``prototype`` explains."""
    if not buffer:
        raise UndefinedInputError("streaming similarity needs a non-empty buffer")
    return lcs_length(buffer, prototype) / len(buffer)


@lru_cache(maxsize=1 << 16)
def alignment_end(buffer: tuple, prototype: tuple) -> int:
    """Prototype index of the last pair of ``lcs_alignment(buffer, prototype)``, or -1."""
    pairs = lcs_alignment(buffer, prototype)
    return pairs[-1][1] if pairs else -1


def merge_recency(prototype: Sequence[Hashable], episode: Sequence[Hashable]) -> tuple:
    """Replace a matched prototype by the latest exemplar."""
    return tuple(episode)


def merge_backbone(prototype: Sequence[Hashable], episode: Sequence[Hashable]) -> tuple:
    """Blend along the LCS alignment.

    Matched symbols are kept; each unmatched gap takes the episode's symbols,
    falling back to the prototype's gap when the episode has none there.
    """
    pairs = lcs_alignment(episode, prototype) + [(len(episode), len(prototype))]
    merged: list = []
    ei = pj = 0
    for i, j in pairs:
        gap = episode[ei:i] or prototype[pj:j]
        merged.extend(gap)
        if i < len(episode):
            merged.append(episode[i])
        ei, pj = i + 1, j + 1
    return tuple(merged)
