"""Configuration files and result emission.

Config files are TOML with four flat sections whose keys are the
:class:`~agent_pyramid.experiment.ProtocolConfig` field names::

    [protocol]   total_episodes, warmup, inject_at, seed, behaviors,
                 feedback_enabled, adversarial_agents, adversarial_code,
                 mapping_window, score_after_record
    [topology]   grid, fan_in, layers
    [model]      theta, hint_margin, merge_rule
    [scenario]   noise_p, duration

Every file is written to a temporary sibling first and renamed into place,
so an interrupted run never leaves a truncated file at a declared path.

Replay log format (``episodes.log``)::

    # agent-pyramid episode log v1
    episode <id> label=<label> grid=<W>x<H> ticks=<T>
    <T lines, one per tick: H rows of W '0'/'1' characters joined by '/'>
    <blank line>
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import __version__
from .errors import ConfigurationError
from .experiment import ProtocolConfig, RunReport
from .topology import PyramidTopology, TickFrame

PathLike = Union[str, Path]

SECTIONS: dict[str, tuple[str, ...]] = {
    "protocol": ("total_episodes", "warmup", "inject_at", "seed", "behaviors", "feedback_enabled",
                 "adversarial_agents", "adversarial_code", "mapping_window", "score_after_record"),
    "topology": ("grid", "fan_in", "layers"),
    "model": ("theta", "hint_margin", "merge_rule"),
    "scenario": ("noise_p", "duration"),
}

TRACE_HEADER = ("episode", "tick", "agent", "layer", "code", "hint_used", "hint_sent")


# -- configuration -------------------------------------------------------------

def config_to_toml(config: ProtocolConfig) -> str:
    flat = config.to_dict()
    return tomli_w.dumps({sec: {k: flat[k] for k in keys} for sec, keys in SECTIONS.items()})


def config_from_toml(text: str) -> ProtocolConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    flat: dict = {}
    for section, body in doc.items():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            flat[key] = value
    try:
        return ProtocolConfig.from_dict(flat)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path: PathLike) -> ProtocolConfig:
    return config_from_toml(Path(path).read_text())


def save_config(config: ProtocolConfig, path: PathLike) -> Path:
    return atomic_write(path, config_to_toml(config))


# -- atomic output -------------------------------------------------------------

def atomic_write(path: PathLike, text: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


# -- per-episode CSV -------------------------------------------------------------

def csv_text(report: RunReport) -> str:
    layers = report.config.layers
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["episode", "phase", "label", *(f"layer{i}_rate" for i in range(1, layers + 1)),
                     "top_correct"])
    for r in report.records:
        writer.writerow([r.episode, r.phase, r.label, *(f"{x:.6f}" for x in r.layer_rates),
                         int(r.top_correct)])
    return buf.getvalue()


def emit_csv(report: RunReport, path: PathLike) -> Path:
    return atomic_write(path, csv_text(report))


def read_csv(path: PathLike) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- manifest -------------------------------------------------------------------

def summary(report: RunReport) -> dict:
    n = len(report.records)
    return {
        "top_rate_last100": report.top_rate(max(1, n - 99), n),
        "top_rate_201_300": report.top_rate(201, 300),
        "top_rate_401_500": report.top_rate(401, 500),
        "feedback_calls": report.feedback_calls,
        "top_clusters": len(set(report.top_codes) - {0}),
    }


def manifest(report: RunReport, outputs: Mapping[str, PathLike], wall_clock: float) -> dict:
    def clean(v: float) -> Optional[float]:
        return None if v != v else round(v, 6)

    return {
        "artifact": "agent-pyramid",
        "version": __version__,
        "seed": report.seed,
        "config": report.config.to_dict(),
        "outputs": {k: str(v) for k, v in outputs.items()},
        "wall_clock_seconds": round(wall_clock, 3),
        "summary": {k: clean(v) if isinstance(v, float) else v for k, v in summary(report).items()},
    }


def emit_manifest(data: Mapping, path: PathLike) -> Path:
    return atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def config_from_manifest(path: PathLike) -> ProtocolConfig:
    return ProtocolConfig.from_dict(json.loads(Path(path).read_text())["config"])


# -- tick traces -------------------------------------------------------------------

_TERM = re.compile(r"^layer(\d+):(.+)$")


def parse_agent_filter(text: str, topology: PyramidTopology) -> list[int]:
    """Resolve a filter like ``"layer1:1-4,layer2:0"`` to global agent ids.

    Terms are ``layerL:I`` or ``layerL:I-J`` with indices local to the layer,
    or a bare global id ``N`` / range ``N-M``.
    """
    if not text or not text.strip():
        raise ConfigurationError("empty agent filter")
    ids: set[int] = set()
    for raw in text.split(","):
        term = raw.strip()
        m = _TERM.match(term)
        layer, body = (int(m.group(1)), m.group(2)) if m else (None, term)
        try:
            lo, _, hi = body.partition("-")
            first, last = int(lo), int(hi or lo)
        except ValueError:
            raise ConfigurationError(f"bad agent filter term {term!r}") from None
        for idx in range(first, last + 1):
            if layer is None:
                if not 0 <= idx < topology.n_agents:
                    raise ConfigurationError(
                        f"unknown agent {idx}; valid ids are 0-{topology.n_agents - 1}")
                ids.add(idx)
                continue
            if not 1 <= layer <= topology.layers:
                raise ConfigurationError(f"unknown layer {layer}; valid layers are 1-{topology.layers}")
            size = topology.sizes[layer - 1]
            if not 0 <= idx < size:
                raise ConfigurationError(
                    f"unknown agent {idx} in layer {layer}; valid indices are 0-{size - 1}")
            ids.add(topology.agent_id(layer, idx))
    return sorted(ids)


def trace_text(frames: Iterable[TickFrame], agents: Sequence[int], topology: PyramidTopology) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for f in frames:
        for a in agents:
            if a not in f.upward_codes:
                continue
            writer.writerow([f.episode, f.tick, a, topology.layer_of(a), f.upward_codes[a],
                             f.used_hints.get(a, 0), f.downward_hints.get(a, 0)])
    return buf.getvalue()


def emit_tick_trace(frames: Iterable[TickFrame], agents: Sequence[int], path: PathLike,
                    topology: PyramidTopology) -> Path:
    unknown = [a for a in agents if not 0 <= a < topology.n_agents]
    if unknown:
        raise ConfigurationError(
            f"unknown agents {unknown}; valid ids are 0-{topology.n_agents - 1}")
    if not agents:
        raise ConfigurationError("empty agent filter")
    return atomic_write(path, trace_text(frames, agents, topology))


def read_tick_trace(path: PathLike) -> dict[tuple[int, int, int], tuple[int, int, int]]:
    """``(episode, tick, agent) -> (code, hint_used, hint_sent)``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["episode"]), int(row["tick"]), int(row["agent"]))
            out[key] = (int(row["code"]), int(row["hint_used"]), int(row["hint_sent"]))
    return out


def code_switches(trace: Mapping[tuple[int, int, int], tuple[int, int, int]], agent: int,
                  episode: int) -> int:
    """Number of tick-to-tick changes of an agent's upward code within one episode."""
    codes = [v[0] for (e, _, a), v in sorted(trace.items()) if e == episode and a == agent]
    return sum(x != y for x, y in zip(codes, codes[1:]))
