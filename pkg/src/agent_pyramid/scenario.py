"""Synthetic inputs: symbolic pattern streams and a grid-traffic generator.

Traffic episodes are stacks of binary occupancy frames, shape
``(duration, height, width)``; cell ``(x, y)`` of frame ``t`` is
``frames[t, y, x]``.  Bottom agent ``y * width + x`` watches that cell, so
``frames[t].ravel()`` is the per-tick token list in agent-id order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from .errors import ConfigurationError
from .sequence import Episode

Cell = tuple[int, int]
SeedLike = Union[int, np.random.SeedSequence, None]

LABELS = ("TypeA", "TypeB", "TypeC")
DEFAULT_SPEED = 0.5


@dataclass(frozen=True)
class BehaviorType:
    """A vehicle trajectory: start cell, heading, optional single turn, speed.

    ``turn`` is ``(steps, new_heading)``: after ``steps`` cells along the
    initial heading the vehicle turns onto ``new_heading``.
    """

    label: str
    entry: Cell
    heading: Cell
    turn: Optional[tuple[int, Cell]] = None
    speed: float = 1

    def path(self, grid: tuple[int, int]) -> list[Cell]:
        """Cells visited by the vehicle head, in order, until it leaves the grid."""
        width, height = grid
        x, y = self.entry
        if not (0 <= x < width and 0 <= y < height):
            raise ConfigurationError(f"{self.label}: entry {self.entry} outside {width}x{height} grid")
        if not 0 < self.speed <= 1:
            raise ConfigurationError(f"{self.label}: speed must lie in (0, 1] cells/tick")
        dx, dy = self.heading
        cells = [(x, y)]
        turn_steps, turn_heading = self.turn if self.turn else (-1, None)
        step = 0
        while True:
            if step == turn_steps:
                dx, dy = turn_heading
            x, y = x + dx, y + dy
            step += 1
            if not (0 <= x < width and 0 <= y < height):
                break
            cells.append((x, y))
        if self.turn and turn_steps >= len(cells):
            raise ConfigurationError(f"{self.label}: turn point lies outside the grid")
        return cells

    def traversal_time(self, grid: tuple[int, int]) -> int:
        """Ticks until the head has left the grid."""
        return math.ceil(len(self.path(grid)) / self.speed - 1e-9)

    def head_index(self, t: int) -> int:
        return math.floor(t * self.speed + 1e-9)


def default_behaviors(grid: tuple[int, int]) -> tuple[BehaviorType, BehaviorType, BehaviorType]:
    """West-east along the middle row, north-south down the middle column, and
    west-east turning south where the two cross.

    Vehicles move half a cell per tick, so each cell on a path is occupied for
    four consecutive ticks; on 8x8 a crossing takes exactly 16 ticks.
    """
    width, height = grid
    if width < 8 or height < 8:
        raise ConfigurationError(f"default behaviours need a grid of at least 8x8, got {width}x{height}")
    row = height // 2 - 1
    col = width // 2 - 1
    return (
        BehaviorType("TypeA", (0, row), (1, 0), speed=DEFAULT_SPEED),
        BehaviorType("TypeB", (col, 0), (0, 1), speed=DEFAULT_SPEED),
        BehaviorType("TypeC", (0, row), (1, 0), turn=(col, (0, 1)), speed=DEFAULT_SPEED),
    )


def occupancy(behavior: BehaviorType, grid: tuple[int, int], duration: int) -> np.ndarray:
    """Noise-free frames for a 1x2 vehicle (head plus the cell behind it)."""
    width, height = grid
    path = behavior.path(grid)
    frames = np.zeros((duration, height, width), dtype=np.uint8)
    for t in range(duration):
        head = behavior.head_index(t)
        for idx in (head, head - 1):
            if 0 <= idx < len(path):
                x, y = path[idx]
                frames[t, y, x] = 1
    return frames


def gen_traffic_episode(seed: SeedLike, behavior: BehaviorType, grid: tuple[int, int],
                        duration: int, noise_p: float) -> tuple[np.ndarray, str]:
    if not 0 <= noise_p < 0.5:
        raise ConfigurationError(f"noise_p must lie in [0, 0.5), got {noise_p}")
    need = behavior.traversal_time(grid)
    if duration < need:
        raise ConfigurationError(
            f"duration {duration} is shorter than the {need}-tick traversal of {behavior.label}"
        )
    frames = occupancy(behavior, grid, duration)
    if noise_p > 0:
        rng = np.random.default_rng(seed)
        flips = rng.random(frames.shape) < noise_p
        frames ^= flips.astype(np.uint8)
    return frames, behavior.label


def gen_symbolic(pattern: str, repeats: int) -> list[Episode]:
    """``repeats`` copies of ``pattern``; letters map to codes A=1 ... Z=26."""
    if not pattern:
        raise ConfigurationError("pattern must be non-empty")
    symbols = tuple(ord(ch) - ord("A") + 1 for ch in pattern.upper())
    if any(not 1 <= s <= 26 for s in symbols):
        raise ConfigurationError(f"pattern must use letters A-Z, got {pattern!r}")
    return [Episode(k + 1, symbols) for k in range(repeats)]


def letters(symbols: Iterable[int]) -> str:
    return "".join(chr(ord("A") + s - 1) for s in symbols)


# -- replay log ---------------------------------------------------------------
#
#   episode <id> label=<label> grid=<W>x<H> ticks=<T>
#   <T lines, one per tick: H rows of W '0'/'1' characters joined by '/'>
#   <blank line>

LOG_HEADER = "# agent-pyramid episode log v1"


def format_episode(episode_id: int, frames: np.ndarray, label: Optional[str]) -> str:
    ticks, height, width = frames.shape
    lines = [f"episode {episode_id} label={label or '-'} grid={width}x{height} ticks={ticks}"]
    for frame in frames:
        lines.append("/".join("".join("1" if v else "0" for v in row) for row in frame))
    return "\n".join(lines) + "\n\n"


def parse_episode_log(text: str) -> Iterator[tuple[int, Optional[str], np.ndarray]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "episode":
            raise ValueError(f"malformed episode header: {lines[i]!r}")
        fields = dict(part.split("=", 1) for part in head[2:])
        width, height = (int(v) for v in fields["grid"].split("x"))
        ticks = int(fields["ticks"])
        frames = np.zeros((ticks, height, width), dtype=np.uint8)
        for t in range(ticks):
            rows = lines[i + 1 + t].split("/")
            if len(rows) != height or any(len(r) != width for r in rows):
                raise ValueError(f"episode {head[1]} tick {t}: frame does not match grid")
            frames[t] = [[int(c) for c in r] for r in rows]
        label = None if fields["label"] == "-" else fields["label"]
        yield int(head[1]), label, frames
        i += 1 + ticks


def read_episode_log(path: Union[str, Path]) -> list[tuple[int, Optional[str], np.ndarray]]:
    return list(parse_episode_log(Path(path).read_text()))
