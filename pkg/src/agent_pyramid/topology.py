"""Pyramid wiring over a grid of regions and the lock-step relay scheduler.

Agent ids are global integers, layer-major and row-major within a layer:
on an 8x8 grid with 2x2 fan-in, ids 0-63 are the bottom layer, 64-79 the
second, 80-83 the third and 84 the top agent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

from . import lcs
from .agent import Agent
from .cluster_model import MergeRule
from .errors import ConfigurationError, InputError
from .sequence import BLANK, MAX_CODE, Symbol, compose

# Upward code substituted for adversarial agents; no alphabet ever reaches it.
ADVERSARIAL_CODE: Symbol = MAX_CODE


@dataclass(frozen=True)
class PyramidTopology:
    grid: tuple[int, int]
    fan_in: tuple[int, int]
    layers: int
    shapes: tuple[tuple[int, int], ...]  # (width, height) per layer, bottom first
    offsets: tuple[int, ...]  # global id of each layer's first agent
    parent: tuple[Optional[int], ...]
    children: tuple[tuple[int, ...], ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(w * h for w, h in self.shapes)

    @property
    def n_agents(self) -> int:
        return sum(self.sizes)

    @property
    def top(self) -> int:
        return self.n_agents - 1

    @property
    def block(self) -> int:
        return self.fan_in[0] * self.fan_in[1]

    def agent_id(self, layer: int, index: int) -> int:
        """Global id of the ``index``-th agent (row-major) of ``layer`` (1 = bottom)."""
        if not 1 <= layer <= self.layers or not 0 <= index < self.sizes[layer - 1]:
            raise KeyError(f"no agent {index} in layer {layer}")
        return self.offsets[layer - 1] + index

    def layer_of(self, agent_id: int) -> int:
        for layer in range(self.layers, 0, -1):
            if agent_id >= self.offsets[layer - 1]:
                return layer
        raise KeyError(agent_id)

    def local_index(self, agent_id: int) -> int:
        return agent_id - self.offsets[self.layer_of(agent_id) - 1]

    def layer_ids(self, layer: int) -> range:
        start = self.offsets[layer - 1]
        return range(start, start + self.sizes[layer - 1])

    def cell_of(self, agent_id: int) -> tuple[int, int]:
        """(x, y) of an agent within its layer's grid."""
        layer = self.layer_of(agent_id)
        width = self.shapes[layer - 1][0]
        idx = agent_id - self.offsets[layer - 1]
        return idx % width, idx // width


def build_pyramid(grid: tuple[int, int], fan_in: tuple[int, int], layers: int) -> PyramidTopology:
    width, height = grid
    bw, bh = fan_in
    if layers < 2:
        raise ConfigurationError(f"a pyramid needs at least 2 layers, got {layers}")
    if min(width, height, bw, bh) < 1 or bw * bh < 2:
        raise ConfigurationError(f"invalid grid {grid} / fan-in {fan_in}")

    shapes = [(width, height)]
    for layer in range(2, layers + 1):
        w, h = shapes[-1]
        if w % bw or h % bh:
            raise ConfigurationError(
                f"layer {layer - 1} of size {w}x{h} is not divisible by fan-in {bw}x{bh}"
            )
        shapes.append((w // bw, h // bh))
    if shapes[-1] != (1, 1):
        w, h = shapes[-1]
        raise ConfigurationError(
            f"top layer {layers} would have {w * h} agents ({w}x{h}), expected exactly 1"
        )

    offsets = []
    total = 0
    for w, h in shapes:
        offsets.append(total)
        total += w * h

    parent: list[Optional[int]] = [None] * total
    children: list[tuple[int, ...]] = [()] * total
    for layer in range(1, layers):
        cw, _ = shapes[layer - 1]
        pw, ph = shapes[layer]
        for py in range(ph):
            for px in range(pw):
                pid = offsets[layer] + py * pw + px
                kids = tuple(
                    offsets[layer - 1] + (py * bh + dy) * cw + (px * bw + dx)
                    for dy in range(bh) for dx in range(bw)
                )
                children[pid] = kids
                for c in kids:
                    parent[c] = pid
    return PyramidTopology(
        grid=(width, height), fan_in=(bw, bh), layers=layers, shapes=tuple(shapes),
        offsets=tuple(offsets), parent=tuple(parent), children=tuple(children),
    )


@dataclass
class TickFrame:
    episode: int
    tick: int
    upward_codes: dict[int, Symbol]
    downward_hints: dict[int, Symbol] = field(default_factory=dict)
    # hint each agent actually consumed this tick (sent one tick earlier)
    used_hints: dict[int, Symbol] = field(default_factory=dict)


class Pyramid:
    """Agents wired into a topology and driven in lock step.

    Each :meth:`step` runs an upward pass (bottom to top, every parent reads
    its children's codes from the same pass) followed by a downward pass
    that delivers each parent's per-child predictions for the next tick.
    """

    def __init__(self, topology: PyramidTopology, *, theta: float | Sequence[float] = 0.8,
                 hint_margin: float = 0.1, feedback: bool = True,
                 adversarial: Iterable[int] = (), adversarial_code: Symbol = ADVERSARIAL_CODE,
                 standby: Iterable[int] = (), merge_rule: MergeRule = lcs.merge_recency,
                 agent_factory: Optional[Callable[..., Agent]] = None) -> None:
        self.topology = topology
        self.feedback = feedback
        self.adversarial = frozenset(adversarial)
        self.adversarial_code = adversarial_code
        thetas = _per_layer(theta, topology.layers)
        factory = agent_factory or Agent
        bad = [a for a in self.adversarial if not 0 <= a < topology.n_agents]
        if bad:
            raise ConfigurationError(f"unknown adversarial agent ids {sorted(bad)}")

        self.agents: list[Agent] = []
        for layer in range(1, topology.layers + 1):
            for aid in topology.layer_ids(layer):
                fan = None if layer == 1 else len(topology.children[aid])
                self.agents.append(factory(aid, layer, fan, theta=thetas[layer - 1],
                                           hint_margin=hint_margin, merge_rule=merge_rule))
        for aid in standby:
            self.agents[aid].set_standby(True)
        self._refresh_active()

        self.episode = 0
        self.tick = 0
        self.feedback_calls = 0

    def is_active(self, aid: int) -> bool:
        """An agent computes only if it is not in standby and some input reaches it."""
        return aid in self._active

    def _refresh_active(self) -> None:
        topo = self.topology
        active: set[int] = set()
        for layer in range(1, topo.layers + 1):
            for aid in topo.layer_ids(layer):
                if self.agents[aid].standby:
                    continue
                if layer == 1 or any(c in active for c in topo.children[aid]):
                    active.add(aid)
        self._active = active

    def step(self, sensor_tokens: Mapping[int, Hashable] | Sequence[Hashable]) -> TickFrame:
        topo, agents = self.topology, self.agents
        if self.tick == 0:
            self._refresh_active()
        active = self._active
        codes: dict[int, Symbol] = {}
        used: dict[int, Symbol] = {}
        predictions: dict[int, tuple] = {}

        for aid in topo.layer_ids(1):
            if aid not in active:
                codes[aid] = BLANK
                continue
            try:
                token = sensor_tokens[aid]
            except (KeyError, IndexError):
                raise InputError(f"missing sensor token for bottom agent {aid}") from None
            codes[aid] = self._tick_agent(aid, token, used, predictions)

        for layer in range(2, topo.layers + 1):
            for aid in topo.layer_ids(layer):
                if aid not in active:
                    codes[aid] = BLANK
                    continue
                token = compose([codes[c] for c in topo.children[aid]])
                codes[aid] = self._tick_agent(aid, token, used, predictions)

        hints: dict[int, Symbol] = {}
        if self.feedback:
            for layer in range(topo.layers, 1, -1):
                for aid in topo.layer_ids(layer):
                    preds = predictions.get(aid)
                    if preds is None:
                        continue
                    for child, hint in zip(topo.children[aid], preds):
                        if hint and child in active:
                            agents[child].on_feedback(hint)
                            self.feedback_calls += 1
                            hints[child] = hint

        frame = TickFrame(self.episode, self.tick, codes, hints, used)
        self.tick += 1
        return frame

    def _tick_agent(self, aid: int, token: Hashable, used: dict, predictions: dict) -> Symbol:
        agent = self.agents[aid]
        if agent.feedback_hint:
            used[aid] = agent.feedback_hint
        out = agent.on_tick(token)
        predictions[aid] = out.child_predictions
        return self.adversarial_code if aid in self.adversarial else out.code

    def end_episode(self, episode_id: int) -> dict[int, Symbol]:
        """Finalize every agent bottom-up; returns each agent's final cluster code."""
        final = {}
        for layer in range(1, self.topology.layers + 1):
            for aid in self.topology.layer_ids(layer):
                agent = self.agents[aid]
                final[aid] = BLANK if agent.standby else agent.on_episode_end(episode_id)
        self.episode = episode_id
        self.tick = 0
        return final

    def run_episode(self, episode_id: int, ticks: Iterable) -> tuple[dict[int, Symbol], list[TickFrame]]:
        self.episode = episode_id
        frames = [self.step(tokens) for tokens in ticks]
        return self.end_episode(episode_id), frames


def _per_layer(theta: float | Sequence[float], layers: int) -> list[float]:
    if isinstance(theta, (int, float)):
        values = [float(theta)] * layers
    else:
        values = [float(t) for t in theta]
        if len(values) != layers:
            raise ConfigurationError(f"got {len(values)} thetas for {layers} layers")
    for t in values:
        if not 0 < t <= 1:
            raise ConfigurationError(f"theta must lie in (0, 1], got {t}")
    return values
