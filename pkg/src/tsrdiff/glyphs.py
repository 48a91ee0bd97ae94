"""5x7 bitmap alphabet. The last symbol index is always the blank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_FONT = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "C": ["01110", "10001", "10000", "10000", "10000", "10001", "01110"],
    "D": ["11100", "10010", "10001", "10001", "10001", "10010", "11100"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "G": ["01110", "10001", "10000", "10111", "10001", "10001", "01111"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "I": ["01110", "00100", "00100", "00100", "00100", "00100", "01110"],
    "J": ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "10001", "11001", "10101", "10011", "10001", "10001"],
    "O": ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
    "P": ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
    "Q": ["01110", "10001", "10001", "10001", "10101", "10010", "01101"],
    "R": ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "U": ["10001", "10001", "10001", "10001", "10001", "10001", "01110"],
    "V": ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
    "W": ["10001", "10001", "10001", "10101", "10101", "10101", "01010"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
    "Y": ["10001", "10001", "10001", "01010", "00100", "00100", "00100"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
}

# Ordered so that small alphabets avoid the most confusable pairs (0/8/O/D, 8/B, 5/S, ...).
_ORDER = "012345679AHKLTXEFMPRUWYZ8CGJNVBDIOQS"

BLANK_CHAR = "_"


def _bitmap(rows: list[str]) -> np.ndarray:
    return np.array([[c == "1" for c in r] for r in rows], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class GlyphAlphabet:
    """K symbols: K-1 printable glyphs plus the all-zero blank at index K-1."""

    chars: tuple[str, ...]
    bitmaps: np.ndarray  # (K, 7, 5)

    @property
    def K(self) -> int:
        return len(self.chars)

    @property
    def blank(self) -> int:
        return self.K - 1

    def encode(self, text: str) -> list[int]:
        lookup = {c: i for i, c in enumerate(self.chars)}
        try:
            return [lookup[c] for c in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in alphabet") from None

    def decode(self, indices) -> str:
        return "".join(self.chars[int(i)] for i in indices if int(i) != self.blank)


def make_alphabet(K: int = 16, seed: int = 0) -> GlyphAlphabet:
    """Built-in glyphs first; for larger K, distinct seeded random bitmaps."""
    if K < 2:
        raise ValueError("K must be at least 2")
    n = K - 1
    chars = list(_ORDER[:n])
    maps = [_bitmap(_FONT[c]) for c in chars]
    seen = {m.tobytes() for m in maps}
    rng = np.random.default_rng(seed)
    i = 0
    while len(maps) < n:
        cand = (rng.random((7, 5)) < 0.45).astype(np.float64)
        if cand.sum() < 6 or cand.tobytes() in seen:
            continue
        seen.add(cand.tobytes())
        maps.append(cand)
        chars.append(chr(0x4E00 + i))
        i += 1
    maps.append(np.zeros((7, 5)))
    chars.append(BLANK_CHAR)
    return GlyphAlphabet(tuple(chars), np.stack(maps))
