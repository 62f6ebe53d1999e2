"""The 500-episode traffic protocol, correctness metrics and ablations.

Episodes 1..warmup alternate TypeA/TypeB, episodes up to ``inject_at`` draw
uniformly from {A, B}, and later episodes draw uniformly from {A, B, C}.
"Correct clustering" is measured per agent by mapping each final cluster
code to the label it most often co-occurred with over a trailing window.
By default an episode is scored against the mapping built from earlier
episodes only, so a freshly created cluster scores as unknown; with
``score_after_record`` the current episode joins the window first.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import lcs, scenario
from .errors import ConfigurationError
from .sequence import Symbol
from .engine import EpisodeTrace, FastPyramid
from .topology import ADVERSARIAL_CODE, Pyramid, TickFrame, build_pyramid

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"
PHASES = ("startup", "random", "inject")

MERGE_RULES = {"latest": lcs.merge_recency, "backbone": lcs.merge_backbone}

_CHOICE_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True)
class ProtocolConfig:
    total_episodes: int = 500
    warmup: int = 32
    inject_at: int = 200
    behaviors: tuple[str, ...] = scenario.LABELS
    seed: int = 0
    feedback_enabled: bool = True
    adversarial_agents: tuple[int, ...] = ()
    adversarial_code: int = ADVERSARIAL_CODE
    theta: float | tuple[float, ...] = 0.8
    hint_margin: float = 0.1
    noise_p: float = 0.02
    grid: tuple[int, int] = (8, 8)
    fan_in: tuple[int, int] = (2, 2)
    layers: int = 4
    duration: int = 16
    mapping_window: int = 50
    score_after_record: bool = False
    merge_rule: str = "latest"

    def __post_init__(self) -> None:
        # normalise list-ish inputs so equality and hashing are by value
        theta = self.theta
        if isinstance(theta, (int, float)):
            theta = (float(theta),) * self.layers
        object.__setattr__(self, "theta", tuple(float(t) for t in theta))
        object.__setattr__(self, "behaviors", tuple(self.behaviors))
        object.__setattr__(self, "adversarial_agents", tuple(sorted(set(self.adversarial_agents))))
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "fan_in", tuple(self.fan_in))

    def validate(self) -> None:
        if self.total_episodes < 1:
            raise ConfigurationError("total_episodes must be >= 1")
        if not 0 <= self.warmup <= self.inject_at <= self.total_episodes:
            raise ConfigurationError(
                f"need 0 <= warmup ({self.warmup}) <= inject_at ({self.inject_at}) "
                f"<= total_episodes ({self.total_episodes})"
            )
        if len(self.behaviors) != 3:
            raise ConfigurationError("the protocol needs exactly three behaviours (A, B, injected C)")
        unknown = set(self.behaviors) - set(scenario.LABELS)
        if unknown:
            raise ConfigurationError(f"unknown behaviours {sorted(unknown)}")
        if len(self.theta) != self.layers:
            raise ConfigurationError(f"theta has {len(self.theta)} entries for {self.layers} layers")
        if any(not 0 < t <= 1 for t in self.theta):
            raise ConfigurationError(f"theta values must lie in (0, 1], got {self.theta}")
        if self.hint_margin < 0:
            raise ConfigurationError("hint_margin must be >= 0")
        if not 0 <= self.noise_p < 0.5:
            raise ConfigurationError(f"noise_p must lie in [0, 0.5), got {self.noise_p}")
        if self.merge_rule not in MERGE_RULES:
            raise ConfigurationError(f"merge_rule must be one of {sorted(MERGE_RULES)}, got {self.merge_rule!r}")
        if self.mapping_window < 1:
            raise ConfigurationError("mapping_window must be >= 1")
        topo = build_pyramid(self.grid, self.fan_in, self.layers)
        bad = [a for a in self.adversarial_agents if not 0 <= a < topo.n_agents]
        if bad:
            raise ConfigurationError(f"adversarial agent ids out of range: {bad}")
        behaviors = self.behavior_types()
        for b in behaviors:
            scenario.gen_traffic_episode(0, b, self.grid, self.duration, 0.0)

    def behavior_types(self) -> list[scenario.BehaviorType]:
        by_label = {b.label: b for b in scenario.default_behaviors(self.grid)}
        return [by_label[label] for label in self.behaviors]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown configuration keys: {sorted(extra)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    phase: str
    label: str
    layer_rates: tuple[float, ...]
    top_correct: bool


@dataclass
class RunReport:
    config: ProtocolConfig
    records: list[EpisodeRecord] = field(default_factory=list)
    final_mapping: dict[int, dict[Symbol, str]] = field(default_factory=dict)
    feedback_calls: int = 0
    top_codes: list[Symbol] = field(default_factory=list)
    frames: list[TickFrame] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed

    def layer_series(self, layer: int) -> list[float]:
        return [r.layer_rates[layer - 1] for r in self.records]

    def top_series(self) -> list[float]:
        return [1.0 if r.top_correct else 0.0 for r in self.records]

    def top_rate(self, first: int, last: int) -> float:
        """Mean top-agent correctness over episodes ``first..last`` inclusive."""
        chunk = [1.0 if r.top_correct else 0.0 for r in self.records if first <= r.episode <= last]
        return sum(chunk) / len(chunk) if chunk else float("nan")


def phase_of(episode: int, config: ProtocolConfig) -> str:
    if episode <= config.warmup:
        return PHASES[0]
    if episode <= config.inject_at:
        return PHASES[1]
    return PHASES[2]


def label_schedule(config: ProtocolConfig) -> list[str]:
    """Ground-truth behaviour label of every episode, in order."""
    a, b, c = config.behaviors
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_CHOICE_STREAM,)))
    labels = []
    for episode in range(1, config.total_episodes + 1):
        phase = phase_of(episode, config)
        if phase == "startup":
            labels.append(a if episode % 2 else b)
        elif phase == "random":
            labels.append((a, b)[rng.integers(2)])
        else:
            labels.append((a, b, c)[rng.integers(3)])
    return labels


def noise_seed(config: ProtocolConfig, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.seed, spawn_key=(_NOISE_STREAM, episode))


def map_clusters_to_labels(history: Mapping[int, Sequence[tuple[Symbol, str]]],
                           window: int = 50) -> dict[int, dict[Symbol, str]]:
    """Majority label of every code over each agent's trailing ``window`` episodes.

    Ties go to the label seen first within the window.
    """
    mapping = {}
    for agent, pairs in history.items():
        recent = list(pairs)[-window:]
        counts: dict[Symbol, Counter] = {}
        first_seen: dict[Symbol, dict[str, int]] = {}
        for pos, (code, label) in enumerate(recent):
            counts.setdefault(code, Counter())[label] += 1
            first_seen.setdefault(code, {}).setdefault(label, pos)
        mapping[agent] = {
            code: min(c, key=lambda lab: (-c[lab], first_seen[code][lab]))
            for code, c in counts.items()
        }
    return mapping


class LabelMapper:
    """Incremental :func:`map_clusters_to_labels` for one agent.

    ``predict`` reads the mapping built from the episodes already recorded,
    so a code seen for the first time maps to ``UNKNOWN``.
    """

    __slots__ = ("window", "_pairs", "_counts")

    def __init__(self, window: int = 50) -> None:
        self.window = window
        self._pairs: deque[tuple[Symbol, str]] = deque()
        self._counts: dict[Symbol, Counter] = {}

    def predict(self, code: Symbol) -> str:
        c = self._counts.get(code)
        if not c:
            return UNKNOWN
        best = max(c.values())
        tied = [lab for lab, n in c.items() if n == best]
        if len(tied) == 1:
            return tied[0]
        for pc, lab in self._pairs:
            if pc == code and lab in tied:
                return lab
        return tied[0]

    def record(self, code: Symbol, label: str) -> None:
        self._pairs.append((code, label))
        self._counts.setdefault(code, Counter())[label] += 1
        if len(self._pairs) > self.window:
            old_code, old_label = self._pairs.popleft()
            c = self._counts[old_code]
            c[old_label] -= 1
            if not c[old_label]:
                del c[old_label]
            if not c:
                del self._counts[old_code]

    def mapping(self) -> dict[Symbol, str]:
        return {code: self.predict(code) for code in self._counts}


def correct_rate_series(report: RunReport, layer: int, window: int) -> list[float]:
    """Sliding-window mean of a layer's per-episode correct fraction."""
    if window < 1:
        raise ValueError("window must be >= 1")
    series = report.layer_series(layer)
    if window > len(series):
        raise ValueError(f"window {window} exceeds the {len(series)} recorded episodes")
    return moving_average(series, window)


def moving_average(series: Sequence[float], window: int) -> list[float]:
    csum = np.concatenate(([0.0], np.cumsum(series, dtype=float)))
    return ((csum[window:] - csum[:-window]) / window).tolist()


def build_system(config: ProtocolConfig, *, standby: Iterable[int] = ()) -> Pyramid:
    topo = build_pyramid(config.grid, config.fan_in, config.layers)
    return Pyramid(
        topo, theta=config.theta, hint_margin=config.hint_margin,
        feedback=config.feedback_enabled, adversarial=config.adversarial_agents,
        adversarial_code=config.adversarial_code, standby=standby,
        merge_rule=MERGE_RULES[config.merge_rule],
    )


def build_fast_system(config: ProtocolConfig, *, standby: Iterable[int] = ()) -> FastPyramid:
    if config.merge_rule != "latest":
        raise ConfigurationError("the compiled engine only implements the 'latest' merge rule")
    topo = build_pyramid(config.grid, config.fan_in, config.layers)
    return FastPyramid(
        topo, max_episodes=config.total_episodes, max_length=config.duration,
        theta=config.theta, hint_margin=config.hint_margin,
        feedback=config.feedback_enabled, adversarial=config.adversarial_agents,
        adversarial_code=config.adversarial_code, standby=standby,
    )


def run_protocol(config: ProtocolConfig, *, trace_agents: Optional[Iterable[int]] = None,
                 trace_episodes: Optional[Iterable[int]] = None,
                 on_episode: Optional[Callable[[int, str, np.ndarray], None]] = None,
                 standby: Iterable[int] = (), engine: str = "auto") -> RunReport:
    """Run the whole protocol and score every episode.

    ``engine="fast"`` uses the compiled kernel; ``"reference"`` drives the
    plain-Python agents (same results, much slower).  ``"auto"`` picks the
    kernel whenever it supports the configured merge rule.  With ``trace_agents``
    set, tick frames restricted to those agents are kept on the report for
    the episodes in ``trace_episodes`` (all if None).
    """
    config.validate()
    if engine == "auto":
        engine = "fast" if config.merge_rule == "latest" else "reference"
    if engine == "fast":
        system = build_fast_system(config, standby=standby)
    elif engine == "reference":
        system = build_system(config, standby=standby)
    else:
        raise ConfigurationError(f"unknown engine {engine!r}")
    topo = system.topology
    behaviors = {b.label: b for b in config.behavior_types()}
    labels = label_schedule(config)
    mappers = [LabelMapper(config.mapping_window) for _ in range(topo.n_agents)]
    layer_ids = [list(topo.layer_ids(layer)) for layer in range(1, topo.layers + 1)]
    traced = None if trace_agents is None else frozenset(trace_agents)
    traced_eps = None if trace_episodes is None else frozenset(trace_episodes)
    report = RunReport(config)
    top = topo.top

    for episode, label in enumerate(labels, start=1):
        frames, _ = scenario.gen_traffic_episode(
            noise_seed(config, episode), behaviors[label], config.grid,
            config.duration, config.noise_p,
        )
        if on_episode is not None:
            on_episode(episode, label, frames)
        tokens = frames.reshape(config.duration, -1)
        keep = traced is not None and (traced_eps is None or episode in traced_eps)
        if engine == "fast":
            final, trace = system.run_episode(episode, tokens)
            final = final.tolist()
            ticked = system.ticks.tolist()
            if keep:
                report.frames.extend(frames_from_trace(trace, traced))
        else:
            system.episode = episode
            for t in range(config.duration):
                frame = system.step(tokens[t].tolist())
                if keep:
                    report.frames.append(_restrict(frame, traced))
            final = system.end_episode(episode)
            ticked = [a.ticks for a in system.agents]

        rates = []
        correct = [False] * topo.n_agents
        for ids in layer_ids:
            hits = 0
            n_active = 0
            for aid in ids:
                if not ticked[aid]:
                    continue
                n_active += 1
                correct[aid] = _score(mappers[aid], final[aid], label, config.score_after_record)
                hits += correct[aid]
            rates.append(hits / n_active if n_active else 0.0)
        top_ok = bool(ticked[top]) and correct[top]
        report.records.append(EpisodeRecord(episode, phase_of(episode, config), label,
                                            tuple(rates), top_ok))
        report.top_codes.append(final[top])

    report.final_mapping = {aid: m.mapping() for aid, m in enumerate(mappers) if m.mapping()}
    report.feedback_calls = system.feedback_calls
    logger.info("seed %d: top rate 401-500 %.3f", config.seed, report.top_rate(401, 500))
    return report


def _score(mapper: LabelMapper, code: Symbol, label: str, after: bool) -> bool:
    if after:
        mapper.record(code, label)
        return mapper.predict(code) == label
    ok = mapper.predict(code) == label
    mapper.record(code, label)
    return ok


def frames_from_trace(trace: EpisodeTrace, agents: Optional[frozenset] = None) -> list[TickFrame]:
    """Convert kernel arrays into the per-tick frames the reference scheduler emits."""
    out = []
    n = trace.up_codes.shape[1]
    ids = range(n) if agents is None else sorted(agents)
    for t in range(trace.up_codes.shape[0]):
        up, used, sent = trace.up_codes[t], trace.used_hints[t], trace.sent_hints[t]
        out.append(TickFrame(
            trace.episode, t,
            {a: int(up[a]) for a in ids},
            {a: int(sent[a]) for a in ids if sent[a]},
            {a: int(used[a]) for a in ids if used[a]},
        ))
    return out


def _restrict(frame: TickFrame, agents: frozenset) -> TickFrame:
    return TickFrame(
        frame.episode, frame.tick,
        {a: c for a, c in frame.upward_codes.items() if a in agents},
        {a: h for a, h in frame.downward_hints.items() if a in agents},
        {a: h for a, h in frame.used_hints.items() if a in agents},
    )


def sweep(config: ProtocolConfig, seeds: Iterable[int], **overrides) -> list[RunReport]:
    return [run_protocol(replace(config, seed=s, **overrides)) for s in seeds]
