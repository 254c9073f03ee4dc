"""Cyclic bitmap that accepts each one-time token index at most once.

An ``n``-cell bitmap tracks the consecutive indexes ``start .. end`` with
``end = start + n - 1``. Index ``k`` in that window lives in cell
``(start_ptr + k - start) % n``. Indexes below ``start`` are rejected, even
if they were never used (a *token miss*).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidSize, NoFreeCell


def seek(cells, i: int, end: int, start_ptr: int) -> int:
    """First free cell at cyclic distance ``>= i - end`` from ``start_ptr``.

    Cells are visited in cyclic order starting ``i - end`` steps past
    ``start_ptr``. Raises NoFreeCell when no such cell exists, which always
    happens for ``i - end >= n`` (the whole window rotates out).
    """
    n = len(cells)
    gap = i - end
    if gap < 1:
        raise ValueError(f"seek needs i > end, got i={i}, end={end}")
    for dist in range(gap, n):
        j = (start_ptr + dist) % n
        if not cells[j]:
            return j
    raise NoFreeCell(f"no free cell at distance >= {gap} in a window of {n}")


@dataclass
class BitmapState:
    n: int
    cells: bytearray
    start: int = 0
    start_ptr: int = 0

    @property
    def end(self) -> int:
        return self.start + self.n - 1

    @property
    def end_ptr(self) -> int:
        return (self.start_ptr + self.n - 1) % self.n

    def window(self) -> tuple[int, int, int, int]:
        """``(start, end, start_ptr, end_ptr)``."""
        return self.start, self.end, self.start_ptr, self.end_ptr

    def cell_of(self, i: int) -> int:
        return (self.start_ptr + i - self.start) % self.n

    def is_fresh(self, i: int) -> bool:
        """Whether ``check_and_mark(i)`` would accept, without changing state."""
        if i < self.start:
            return False
        if i <= self.end:
            return not self.cells[self.cell_of(i)]
        return True

    def used(self) -> set[int]:
        """Indexes in the current window whose cell is set."""
        return {self.start + d for d in range(self.n)
                if self.cells[(self.start_ptr + d) % self.n]}

    def check_and_mark(self, i: int) -> bool:
        if i < 0:
            raise ValueError("one-time indexes are non-negative")
        n = self.n
        if i < self.start:
            return False
        end = self.end
        if i <= end:
            t = self.cell_of(i)
            if self.cells[t]:
                return False
            self.cells[t] = 1
            return True
        if i <= end + n:
            # The window slides by exactly i - end cells. Cells that leave the
            # window are cleared; bits of indexes that stay are kept.
            shift = i - end
            for d in range(shift):
                self.cells[(self.start_ptr + d) % n] = 0
            self.start_ptr = (self.start_ptr + shift) % n
            self.start = i - n + 1
            self.cells[self.end_ptr] = 1
            return True
        self.cells[:] = bytes(n)
        self.start = i
        self.start_ptr = 0
        self.cells[0] = 1
        return True

    def copy(self) -> "BitmapState":
        return BitmapState(self.n, bytearray(self.cells), self.start, self.start_ptr)

    def bits_hex(self) -> str:
        packed = bytearray((self.n + 7) // 8)
        for j, bit in enumerate(self.cells):
            if bit:
                packed[j // 8] |= 0x80 >> (j % 8)
        return packed.hex()

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "bits": self.bits_hex(),
            "start": self.start,
            "end": self.end,
            "startPtr": self.start_ptr,
            "endPtr": self.end_ptr,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BitmapState":
        n = int(doc["n"])
        packed = bytes.fromhex(doc["bits"])
        cells = bytearray((packed[j // 8] >> (7 - j % 8)) & 1 for j in range(n))
        state = cls(n, cells, int(doc["start"]), int(doc["startPtr"]))
        if state.end != doc.get("end", state.end) or state.end_ptr != doc.get("endPtr", state.end_ptr):
            raise ValueError("inconsistent bitmap window fields")
        return state


def new_bitmap(n: int) -> BitmapState:
    if n < 1:
        raise InvalidSize(f"bitmap needs at least one cell, got {n}")
    return BitmapState(n, bytearray(n))


def check_and_mark(state: BitmapState, i: int) -> bool:
    return state.check_and_mark(i)


def _exact(x) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def required_bits(token_lifetime_s, max_tx_per_s) -> int:
    """Cells needed so that no unused, unexpired token is ever missed."""
    if token_lifetime_s <= 0 or max_tx_per_s <= 0:
        raise ValueError("lifetime and rate must be positive")
    return math.ceil(_exact(token_lifetime_s) * _exact(max_tx_per_s))


def bits_to_kb(bits: int) -> float:
    """Storage in KB (1024 bytes)."""
    return bits / 8 / 1024
