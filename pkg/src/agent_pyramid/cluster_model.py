"""Per-agent online clustering of episodes.

An agent keeps a :class:`PrototypeStore` of representative sequences.  While
an episode streams in, :class:`StreamingRecognizer` re-selects the best
matching prototype every tick (optionally biased by a feedback hint) and
predicts the next input symbol; at the end of the episode
:func:`finalize_episode` either merges the whole sequence into the best
prototype or opens a new cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterator, Optional, Sequence

from . import lcs
from .errors import UndefinedInputError
from .sequence import BLANK, Symbol

MergeRule = Callable[[Sequence[Hashable], Sequence[Hashable]], tuple]

# Float slack when comparing a hinted score against the margin.
_EPS = 1e-9


@dataclass
class ClusterPrototype:
    cluster_id: Symbol
    sequence: tuple
    support: int = 1
    last_update: int = 0
    _masks: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def masks(self) -> dict:
        if self._masks is None:
            self._masks = lcs.symbol_masks(self.sequence)
        return self._masks


@dataclass(frozen=True)
class Recognition:
    cluster_id: Symbol
    score: float
    predicted_next: Optional[Hashable] = None
    matched_prefix_end: int = -1


@dataclass(frozen=True)
class PredictionStats:
    hits: int = 0
    misses: int = 0
    streak_misses: int = 0

    @property
    def verified(self) -> int:
        return self.hits + self.misses


class PrototypeStore:
    """Cluster prototypes of one agent, keyed by the code emitted upward."""

    def __init__(self) -> None:
        self._protos: dict[Symbol, ClusterPrototype] = {}
        self.version = 0

    def __len__(self) -> int:
        return len(self._protos)

    def __iter__(self) -> Iterator[ClusterPrototype]:
        return iter(self._protos.values())

    def __contains__(self, cluster_id: object) -> bool:
        return cluster_id in self._protos

    def __getitem__(self, cluster_id: Symbol) -> ClusterPrototype:
        return self._protos[cluster_id]

    @property
    def next_id(self) -> Symbol:
        return len(self._protos) + 1

    def create(self, sequence: Sequence[Hashable], episode_id: int) -> ClusterPrototype:
        if not sequence:
            raise UndefinedInputError("cannot create a cluster from an empty sequence")
        proto = ClusterPrototype(self.next_id, tuple(sequence), 1, episode_id)
        self._protos[proto.cluster_id] = proto
        self.version += 1
        return proto

    def merge(self, cluster_id: Symbol, sequence: Sequence[Hashable], episode_id: int,
              rule: MergeRule = lcs.merge_recency) -> ClusterPrototype:
        proto = self._protos[cluster_id]
        merged = rule(proto.sequence, sequence)
        if merged != proto.sequence:
            proto.sequence = merged
            proto._masks = None
            self.version += 1
        proto.support += 1
        proto.last_update = episode_id
        return proto

    def snapshot(self) -> tuple:
        return tuple((p.cluster_id, p.sequence, p.support, p.last_update) for p in self)


def _select(ids: Sequence[Symbol], lengths: Sequence[int], n: int,
            hint: Optional[Symbol], hint_margin: float) -> int:
    """Index of the winning prototype given integer LCS lengths over a buffer of ``n``."""
    best = max(lengths)
    if hint:
        try:
            k = ids.index(hint)
        except ValueError:
            k = -1
        if k >= 0 and (best - lengths[k]) / n <= hint_margin + _EPS:
            return k
    # ids are ascending, so the first maximum is the smallest cluster id
    return lengths.index(best)


class StreamingRecognizer:
    """Incremental :func:`recognize` over a buffer growing one symbol per tick.

    Holds one bit-parallel LCS row per prototype, so each tick costs one row
    update per prototype.  The store must not change while a recognizer is
    alive; agents build a fresh one at every episode start.
    """

    __slots__ = ("ids", "seqs", "_masks", "_fulls", "_rows", "_lens", "buffer")

    def __init__(self, store: PrototypeStore) -> None:
        protos = list(store)
        self.ids = [p.cluster_id for p in protos]
        self.seqs = [p.sequence for p in protos]
        self._masks = [p.masks for p in protos]
        self._fulls = [(1 << len(s)) - 1 for s in self.seqs]
        self._rows = list(self._fulls)
        self._lens = [len(s) for s in self.seqs]
        self.buffer: list = []

    def push(self, symbol: Hashable) -> None:
        self.buffer.append(symbol)
        rows, fulls = self._rows, self._fulls
        for k, masks in enumerate(self._masks):
            m = masks.get(symbol)
            if m:
                v = rows[k]
                u = v & m
                rows[k] = ((v + u) | (v - u)) & fulls[k]

    def lengths(self) -> list[int]:
        return [n - v.bit_count() for n, v in zip(self._lens, self._rows)]

    def recognize(self, hint: Optional[Symbol] = None, hint_margin: float = 0.1) -> Recognition:
        n = len(self.buffer)
        if n == 0:
            raise UndefinedInputError("recognition needs a non-empty buffer")
        if not self.ids:
            return Recognition(BLANK, 0.0)
        lengths = self.lengths()
        k = _select(self.ids, lengths, n, hint, hint_margin)
        seq = self.seqs[k]
        end = lcs.alignment_end(tuple(self.buffer), seq)
        predicted = seq[end + 1] if end + 1 < len(seq) else None
        return Recognition(self.ids[k], lengths[k] / n, predicted, end)


def recognize(store: PrototypeStore, buffer: Sequence[Hashable],
              hint: Optional[Symbol] = None, hint_margin: float = 0.1) -> Recognition:
    """Pick the prototype that best explains ``buffer`` and predict what comes next.

    Ties go to the hinted cluster, then to the smallest id.  A hinted cluster
    also wins when its score is within ``hint_margin`` of the best one.
    """
    if not buffer:
        raise UndefinedInputError("recognition needs a non-empty buffer")
    rec = StreamingRecognizer(store)
    for s in buffer:
        rec.push(s)
    return rec.recognize(hint, hint_margin)


def verify(stats: PredictionStats, predicted: Optional[Hashable], actual: Hashable) -> PredictionStats:
    if predicted is None:
        return stats
    if predicted == actual:
        return PredictionStats(stats.hits + 1, stats.misses, 0)
    return PredictionStats(stats.hits, stats.misses + 1, stats.streak_misses + 1)


def finalize_episode(store: PrototypeStore, buffer: Sequence[Hashable], episode_id: int,
                     theta: float, rule: MergeRule = lcs.merge_recency,
                     lcs_lengths: Optional[Sequence[int]] = None) -> tuple[Symbol, bool]:
    """Merge the finished episode into its best cluster, or open a new one.

    ``lcs_lengths`` may carry the LCS of ``buffer`` with every prototype (in
    store order) when the caller already tracked them while streaming.
    """
    if not buffer:
        raise UndefinedInputError("cannot finalize an empty episode")
    if not 0 < theta <= 1:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    buffer = tuple(buffer)
    best_id, best = BLANK, -1.0
    for k, proto in enumerate(store):
        if lcs_lengths is None:
            score = lcs.similarity_full(buffer, proto.sequence)
        else:
            score = lcs_lengths[k] / max(len(buffer), len(proto.sequence))
        if score > best:
            best_id, best = proto.cluster_id, score
    if best_id and best >= theta - _EPS:
        store.merge(best_id, buffer, episode_id, rule)
        return best_id, False
    return store.create(buffer, episode_id).cluster_id, True
