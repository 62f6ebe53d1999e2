"""A single clustering agent and its four interfaces.

Upward: ``on_tick`` receives one input per tick and returns the cluster code
sent to the parent.  Downward: the same call returns per-child predictions,
and ``on_feedback`` receives the parent's prediction of this agent's next
code.  ``on_episode_end`` closes the episode and updates the cluster store.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Hashable, Optional

from . import lcs
from .cluster_model import (
    MergeRule,
    PredictionStats,
    PrototypeStore,
    Recognition,
    StreamingRecognizer,
    finalize_episode,
    verify,
)
from .errors import StandbyViolation, TopologyError
from .sequence import BLANK, Alphabet, Symbol


@dataclass(frozen=True)
class AgentOutput:
    code: Symbol
    child_predictions: tuple = ()


class Agent:
    """Prediction-driven clustering agent.

    ``fan_in`` is ``None`` for bottom-layer agents, which take raw sensor
    tokens; otherwise every input must be a tuple of exactly ``fan_in``
    child codes.
    """

    def __init__(self, agent_id: int, layer: int = 1, fan_in: Optional[int] = None, *,
                 theta: float = 0.8, hint_margin: float = 0.1,
                 merge_rule: MergeRule = lcs.merge_recency,
                 single_use_feedback: bool = True, standby: bool = False) -> None:
        self.agent_id = agent_id
        self.layer = layer
        self.fan_in = fan_in
        self.theta = theta
        self.hint_margin = hint_margin
        self.merge_rule = merge_rule
        self.single_use_feedback = single_use_feedback
        self.standby = standby

        self.store = PrototypeStore()
        self.alphabet = Alphabet()
        self.stats = PredictionStats()
        self.pending_prediction: Optional[Symbol] = None
        self.feedback_hint: Optional[Symbol] = None
        self.last_recognition: Optional[Recognition] = None
        self.ticks = 0
        self._recognizer: Optional[StreamingRecognizer] = None

    def __repr__(self) -> str:
        return (f"Agent(id={self.agent_id}, layer={self.layer}, clusters={len(self.store)}, "
                f"standby={self.standby})")

    @property
    def buffer(self) -> list:
        return self._recognizer.buffer if self._recognizer is not None else []

    @property
    def is_bottom(self) -> bool:
        return self.fan_in is None

    def on_tick(self, token: Hashable) -> AgentOutput:
        if self.standby:
            raise StandbyViolation(f"agent {self.agent_id} is in standby")
        if self.fan_in is not None and (not isinstance(token, tuple) or len(token) != self.fan_in):
            raise TopologyError(
                f"agent {self.agent_id} expects a {self.fan_in}-tuple of child codes, got {token!r}"
            )
        symbol = self.alphabet.intern(token)
        self.stats = verify(self.stats, self.pending_prediction, symbol)

        if self._recognizer is None:
            self._recognizer = StreamingRecognizer(self.store)
        self._recognizer.push(symbol)
        rec = self._recognizer.recognize(self.feedback_hint, self.hint_margin)
        self.last_recognition = rec
        self.pending_prediction = rec.predicted_next
        if self.single_use_feedback:
            self.feedback_hint = None
        self.ticks += 1
        return AgentOutput(rec.cluster_id, self._child_predictions(rec.predicted_next))

    def _child_predictions(self, predicted: Optional[Symbol]) -> tuple:
        if self.fan_in is None:
            return ()
        if not predicted:
            return (None,) * self.fan_in
        return tuple(c or None for c in self.alphabet.token_of(predicted))

    def on_feedback(self, hint: Optional[Symbol]) -> None:
        if hint:
            self.feedback_hint = hint

    def on_episode_end(self, episode_id: int) -> Symbol:
        rec = self._recognizer
        self._recognizer = None
        self.pending_prediction = None
        self.feedback_hint = None
        if rec is None or not rec.buffer:
            return BLANK
        code, _ = finalize_episode(self.store, rec.buffer, episode_id, self.theta,
                                   self.merge_rule, rec.lengths())
        return code

    def set_standby(self, standby: bool) -> None:
        if standby and self._recognizer is not None:
            # drop the partial episode; the agent restarts cleanly when re-enabled
            self._recognizer = None
            self.pending_prediction = None
            self.feedback_hint = None
        self.standby = standby

    def state_digest(self) -> str:
        """Hash of everything an agent can learn; used to prove standby agents stay idle."""
        payload = repr((
            self.store.snapshot(), self.alphabet.snapshot(), self.stats,
            tuple(self.buffer), self.pending_prediction, self.feedback_hint, self.ticks,
        ))
        return hashlib.sha256(payload.encode()).hexdigest()
