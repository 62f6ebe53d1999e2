"""``agent-pyramid run``: execute the protocol and write its results.

Exit codes: 0 success, 2 bad command line, 3 unreadable config file,
4 invalid configuration, 5 output directory not writable.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import report as rp
from . import scenario
from .errors import ConfigurationError
from .experiment import ProtocolConfig, run_protocol
from .topology import build_pyramid

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG_READ = 3
EXIT_CONFIG_INVALID = 4
EXIT_OUTPUT = 5

logger = logging.getLogger("agent_pyramid")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit(2) itself
        raise _UsageError(message)


def _pair(text: str) -> tuple[int, int]:
    m = text.lower().split("x")
    if len(m) != 2:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    try:
        return int(m[0]), int(m[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _span(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        first, last = int(lo), int(hi if sep else lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if last < first:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return first, last


def _ids(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated agent ids, got {text!r}") from None


def _thetas(text: str) -> float | tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or comma list, got {text!r}") from None
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agent-pyramid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run the episode protocol")
    run.add_argument("--config", type=Path, help="TOML config file; flags override its values")
    run.add_argument("--seed", type=int)
    run.add_argument("--seeds", type=_span, metavar="A..B",
                     help="run every seed in the range, each into out/seed-N/")
    run.add_argument("--jobs", type=int, default=1, help="parallel processes for --seeds")
    run.add_argument("--episodes", dest="total_episodes", type=int)
    run.add_argument("--warmup", type=int)
    run.add_argument("--inject-at", dest="inject_at", type=int)
    run.add_argument("--grid", type=_pair, metavar="WxH")
    run.add_argument("--fan-in", dest="fan_in", type=_pair, metavar="WxH")
    run.add_argument("--layers", type=int)
    run.add_argument("--theta", type=_thetas, help="one value, or one per layer separated by commas")
    run.add_argument("--hint-margin", dest="hint_margin", type=float)
    run.add_argument("--noise", dest="noise_p", type=float)
    run.add_argument("--no-feedback", action="store_true")
    run.add_argument("--adversarial", dest="adversarial_agents", type=_ids, metavar="IDS")
    run.add_argument("--trace", metavar="AGENTS", help='agent filter, e.g. "layer1:1-4,layer2:0"')
    run.add_argument("--trace-episodes", type=_span, metavar="A..B",
                     help="episodes to trace (default: all)")
    run.add_argument("--episodes-log", action="store_true", help="also write episodes.log")
    run.add_argument("--out", type=Path, default=Path("."))
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


_OVERRIDES = ("seed", "total_episodes", "warmup", "inject_at", "grid", "fan_in", "layers",
              "theta", "hint_margin", "noise_p", "adversarial_agents")


def resolve_config(args: argparse.Namespace, base: ProtocolConfig) -> ProtocolConfig:
    changes = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k) is not None}
    if args.no_feedback:
        changes["feedback_enabled"] = False
    if "layers" in changes and "theta" not in changes and len(set(base.theta)) == 1:
        changes["theta"] = base.theta[0]
    config = replace(base, **changes)
    config.validate()
    return config


def execute(config: ProtocolConfig, out: Path, trace: Optional[str] = None,
            trace_episodes: Optional[tuple[int, int]] = None, episodes_log: bool = False) -> dict:
    """One complete run into ``out``; returns the manifest."""
    topo = build_pyramid(config.grid, config.fan_in, config.layers)
    agents = rp.parse_agent_filter(trace, topo) if trace is not None else None
    episodes = None if trace_episodes is None else range(trace_episodes[0], trace_episodes[1] + 1)
    chunks: list[str] = []
    hook = None
    if episodes_log:
        chunks.append(scenario.LOG_HEADER + "\n")
        hook = lambda e, label, frames: chunks.append(scenario.format_episode(e, frames, label))  # noqa: E731

    start = time.perf_counter()
    result = run_protocol(config, trace_agents=agents, trace_episodes=episodes, on_episode=hook)
    elapsed = time.perf_counter() - start

    outputs = {"csv": out / "run.csv", "manifest": out / "run.json"}
    if agents is not None:
        outputs["trace"] = out / "trace.csv"
    if episodes_log:
        outputs["episodes"] = out / "episodes.log"
    rp.emit_csv(result, outputs["csv"])
    if agents is not None:
        rp.emit_tick_trace(result.frames, agents, outputs["trace"], topo)
    if episodes_log:
        rp.atomic_write(outputs["episodes"], "".join(chunks))
    data = rp.manifest(result, outputs, elapsed)
    rp.emit_manifest(data, outputs["manifest"])
    return data


def _execute_seed(job: tuple) -> dict:
    return execute(*job)


def _writable_dir(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".agent-pyramid-probe"
    probe.write_text("")
    probe.unlink()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"agent-pyramid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    base = ProtocolConfig()
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            print(f"agent-pyramid: cannot read config {args.config}: {exc.strerror}", file=sys.stderr)
            return EXIT_CONFIG_READ
    try:
        if args.config is not None:
            base = rp.config_from_toml(text)
        config = resolve_config(args, base)
        if args.trace is not None:
            rp.parse_agent_filter(args.trace, build_pyramid(config.grid, config.fan_in, config.layers))
    except ConfigurationError as exc:
        print(f"agent-pyramid: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_INVALID

    seeds = [config.seed] if args.seeds is None else list(range(args.seeds[0], args.seeds[1] + 1))
    jobs = []
    for seed in seeds:
        out = args.out if args.seeds is None else args.out / f"seed-{seed}"
        jobs.append((replace(config, seed=seed), out, args.trace, args.trace_episodes, args.episodes_log))
    try:
        for job in jobs:
            _writable_dir(job[1])
    except OSError as exc:
        print(f"agent-pyramid: output directory not writable: {exc}", file=sys.stderr)
        return EXIT_OUTPUT

    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_execute_seed, jobs))
        else:
            results = [_execute_seed(job) for job in jobs]
    except OSError as exc:
        print(f"agent-pyramid: write failed: {exc}", file=sys.stderr)
        return EXIT_OUTPUT

    for data in results:
        s = data["summary"]
        rate = s["top_rate_last100"]
        print(f"seed {data['seed']}: top-agent correct rate over the last 100 episodes "
              f"{rate:.3f} ({data['outputs']['csv']})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
