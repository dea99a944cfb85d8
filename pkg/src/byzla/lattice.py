"""Join semilattice of finite item sets under union.

Every protocol in the package agrees on values drawn from this lattice.
Items are tagged with the process (or client) that introduced them, which
lets the trace checker attribute each decided item to its source.

Example::

    a = LatticeValue.of(Item(1, ItemKind.VALUE, b"x"))
    b = LatticeValue.of(Item(2, ItemKind.VALUE, b"y"))
    assert leq(a, join(a, b))
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

__all__ = [
    "AdmissibilityPredicate",
    "Item",
    "ItemKind",
    "LatticeValue",
    "accept_all",
    "big_join",
    "comparable",
    "is_chain",
    "join",
    "leq",
]

_ITEM_HEADER = struct.Struct(">QBI")
_COUNT = struct.Struct(">I")


class ItemKind(enum.IntEnum):
    VALUE = 0
    COMMAND = 1
    NOP = 2


@dataclass(frozen=True, order=True)
class Item:
    """A single lattice atom.

    Ordering is ``(origin, kind, payload)``, which is also the canonical
    serialization order.
    """

    origin: int
    kind: ItemKind
    payload: bytes

    def __post_init__(self) -> None:
        if self.origin < 0 or self.origin >= 1 << 64:
            raise ValueError(f"origin out of range: {self.origin}")
        object.__setattr__(self, "kind", ItemKind(self.kind))

    def encode(self) -> bytes:
        return _ITEM_HEADER.pack(self.origin, int(self.kind), len(self.payload)) + self.payload

    def token(self) -> str:
        """Compact text form ``origin:kind:hexpayload`` used in traces."""
        return f"{self.origin}:{int(self.kind)}:{self.payload.hex()}"

    @classmethod
    def from_token(cls, token: str) -> Item:
        origin, kind, payload = token.split(":")
        return cls(int(origin), ItemKind(int(kind)), bytes.fromhex(payload))

    @classmethod
    def value(cls, origin: int, payload: bytes | str) -> Item:
        if isinstance(payload, str):
            payload = payload.encode()
        return cls(origin, ItemKind.VALUE, payload)


AdmissibilityPredicate = Callable[[Item], bool]


def accept_all(item: Item) -> bool:
    return isinstance(item, Item)


class LatticeValue:
    """Immutable finite set of items; the join is set union."""

    __slots__ = ("items", "_hash", "_blob")

    def __init__(self, items: Iterable[Item] = ()) -> None:
        self.items: frozenset[Item] = items if isinstance(items, frozenset) else frozenset(items)
        self._hash: int | None = None
        self._blob: bytes | None = None

    @classmethod
    def of(cls, *items: Item) -> LatticeValue:
        return cls(items)

    def __iter__(self) -> Iterator[Item]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item: object) -> bool:
        return item in self.items

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatticeValue):
            return NotImplemented
        return self is other or self.items == other.items

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.items)
        return self._hash

    def __or__(self, other: LatticeValue) -> LatticeValue:
        if other.items <= self.items:
            return self
        if self.items <= other.items:
            return other
        return LatticeValue(self.items | other.items)

    def __le__(self, other: LatticeValue) -> bool:
        return self.items <= other.items

    def __lt__(self, other: LatticeValue) -> bool:
        return self.items < other.items

    def __ge__(self, other: LatticeValue) -> bool:
        return self.items >= other.items

    def __repr__(self) -> str:
        inner = ", ".join(repr(i) for i in self.sorted())
        return f"LatticeValue({{{inner}}})"

    def sorted(self) -> list[Item]:
        return sorted(self.items)

    def to_bytes(self) -> bytes:
        """Canonical encoding: item count, then items in sorted order."""
        if self._blob is None:
            ordered = self.sorted()
            self._blob = _COUNT.pack(len(ordered)) + b"".join(i.encode() for i in ordered)
        return self._blob

    @classmethod
    def from_bytes(cls, blob: bytes) -> LatticeValue:
        value, end = cls.decode_prefix(blob, 0)
        if end != len(blob):
            raise ValueError("trailing bytes after lattice value")
        return value

    @classmethod
    def decode_prefix(cls, blob: bytes, offset: int) -> tuple[LatticeValue, int]:
        if len(blob) - offset < _COUNT.size:
            raise ValueError("truncated lattice value")
        (count,) = _COUNT.unpack_from(blob, offset)
        offset += _COUNT.size
        items = []
        for _ in range(count):
            if len(blob) - offset < _ITEM_HEADER.size:
                raise ValueError("truncated item header")
            origin, kind, size = _ITEM_HEADER.unpack_from(blob, offset)
            offset += _ITEM_HEADER.size
            if len(blob) - offset < size:
                raise ValueError("truncated item payload")
            items.append(Item(origin, ItemKind(kind), blob[offset : offset + size]))
            offset += size
        value = cls(items)
        if len(value) != count:
            raise ValueError("duplicate items in encoding")
        return value, offset

    def tokens(self) -> list[str]:
        return [i.token() for i in self.sorted()]

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> LatticeValue:
        return cls(Item.from_token(t) for t in tokens)


EMPTY = LatticeValue()


def join(a: LatticeValue, b: LatticeValue) -> LatticeValue:
    return a | b


def leq(a: LatticeValue, b: LatticeValue) -> bool:
    return a.items <= b.items


def comparable(a: LatticeValue, b: LatticeValue) -> bool:
    return a.items <= b.items or b.items <= a.items


def big_join(values: Iterable[LatticeValue]) -> LatticeValue:
    acc: set[Item] = set()
    for v in values:
        acc.update(v.items)
    return LatticeValue(frozenset(acc))


def is_chain(values: Iterable[LatticeValue]) -> bool:
    """True when every pair of values is comparable."""
    ordered = sorted(set(values), key=len)
    return all(a.items <= b.items for a, b in zip(ordered, ordered[1:]))
