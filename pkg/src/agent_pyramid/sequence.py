"""Symbols, growing alphabets, episodes and child-code composition.

Every agent owns an :class:`Alphabet` that turns whatever it receives
(a raw sensor token at the bottom layer, a tuple of child codes above it)
into small dense integer codes.  Code ``0`` is reserved in every alphabet
for "blank": no output yet, or an agent in standby.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterator, Optional, Sequence

from .errors import ConfigurationError, TopologyError

Symbol = int
BLANK: Symbol = 0

# Codes must fit a signed 32-bit field in exported traces.
MAX_CODE = 2**31 - 1


class Alphabet:
    """Bijection between observed tokens and symbol codes.

    Codes are allocated densely in first-seen order starting at 1.
    """

    __slots__ = ("_codes", "_tokens")

    def __init__(self) -> None:
        self._codes: dict[Hashable, Symbol] = {}
        self._tokens: list[Hashable] = [None]  # index 0 is the reserved blank

    @property
    def next_code(self) -> Symbol:
        return len(self._tokens)

    def __len__(self) -> int:
        return len(self._codes)

    def __contains__(self, token: Hashable) -> bool:
        return token in self._codes

    def __iter__(self) -> Iterator[tuple[Hashable, Symbol]]:
        return iter(self._codes.items())

    def intern(self, token: Hashable) -> Symbol:
        code = self._codes.get(token)
        if code is not None:
            return code
        code = len(self._tokens)
        if code > MAX_CODE:
            raise ConfigurationError("alphabet code space exhausted")
        self._codes[token] = code
        self._tokens.append(token)
        return code

    def lookup(self, token: Hashable) -> Optional[Symbol]:
        """Return the code of ``token`` without registering it."""
        return self._codes.get(token)

    def token_of(self, code: Symbol) -> Hashable:
        if code <= BLANK or code >= len(self._tokens):
            raise KeyError(code)
        return self._tokens[code]

    def snapshot(self) -> tuple:
        return tuple(self._tokens[1:])


def intern(alphabet: Alphabet, token: Hashable) -> Symbol:
    return alphabet.intern(token)


def compose(child_codes: Sequence[Symbol], fan_in: Optional[int] = None) -> tuple:
    """Build the parent token for one tick from its children's codes.

    The token is positional: ``compose([1, 2]) != compose([2, 1])``.
    """
    token = tuple(int(c) for c in child_codes)
    if fan_in is not None and len(token) != fan_in:
        raise TopologyError(
            f"expected {fan_in} child codes, got {len(token)}"
        )
    return token


@dataclass(frozen=True)
class Episode:
    """One complete temporal sequence delivered to the system."""

    id: int
    symbols: tuple
    label: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "symbols", tuple(self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)
