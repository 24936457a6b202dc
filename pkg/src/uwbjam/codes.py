"""Preamble code table.

Codes are ternary sequences over {+1, 0, -1}. The built-in table is derived
from binary m-sequences: long codes (ids 9..24, length 127) come from a Gold
family, short ones (ids 1..8, length 255) from distinct degree-8 m-sequences.
A sparse zero mask turns each binary sequence into a ternary one. Any table
(built-in or loaded from file) is checked for pairwise normalized
cross-correlation before use.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

XCORR_BOUND = 0.3
# the greedy builder leaves headroom under the bound
_BUILD_BOUND = 0.28

LONG_IDS = tuple(range(9, 25))
SHORT_IDS = tuple(range(1, 9))


class CodeTableError(ValueError):
    pass


@dataclass(frozen=True)
class TernaryCode:
    index: int
    symbols: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.symbols:
            raise CodeTableError(f"code {self.index} is empty")
        if any(s not in (-1, 0, 1) for s in self.symbols):
            raise CodeTableError(f"code {self.index} has non-ternary symbols")
        if not any(self.symbols):
            raise CodeTableError(f"code {self.index} has no nonzero symbol")

    def __len__(self) -> int:
        return len(self.symbols)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.symbols, dtype=np.float64)

    @property
    def density(self) -> float:
        return sum(1 for s in self.symbols if s) / len(self.symbols)


def _primitive_taps(degree: int) -> list[int]:
    mask = (1 << degree) - 1
    out = []
    for taps in range(1 << (degree - 1), 1 << degree):
        state = 1
        for step in range(1, mask + 1):
            fb = bin(state & taps).count("1") & 1
            state = ((state << 1) | fb) & mask
            if state == 1:
                break
        if step == mask and state == 1:
            out.append(taps)
    return out


def _mseq(degree: int, taps: int) -> np.ndarray:
    mask = (1 << degree) - 1
    state = 1
    bits = np.empty(mask, dtype=np.int64)
    for i in range(mask):
        bits[i] = state & 1
        fb = bin(state & taps).count("1") & 1
        state = ((state << 1) | fb) & mask
    return 1 - 2 * bits


def _sparse_mask(ref: np.ndarray, rotation: int) -> np.ndarray:
    """Zero the chips where three shifted copies of ``ref`` are all +1 (~1/8)."""
    n = len(ref)
    r = np.roll(ref, rotation)
    zero = (r > 0) & (np.roll(r, 5) > 0) & (np.roll(r, 17) > 0)
    mask = np.ones(n, dtype=np.int64)
    mask[zero] = 0
    return mask


def periodic_xcorr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalized circular cross-correlation over every shift (equal lengths)."""
    spec = np.conj(np.fft.fft(a)) * np.fft.fft(b)
    r = np.real(np.fft.ifft(spec))
    return r / np.sqrt(np.dot(a, a) * np.dot(b, b))


def aperiodic_xcorr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalized linear cross-correlation over every partial overlap."""
    r = np.correlate(a, b, mode="full")
    return r / np.sqrt(np.dot(a, a) * np.dot(b, b))


def max_xcorr(a: np.ndarray, b: np.ndarray) -> float:
    peak = float(np.abs(aperiodic_xcorr(a, b)).max())
    if len(a) == len(b):
        peak = max(peak, float(np.abs(periodic_xcorr(a, b)).max()))
    return peak


def _greedy(cands: list[np.ndarray], want: int, accepted: list[np.ndarray]) -> list[np.ndarray]:
    chosen: list[np.ndarray] = []
    for c in cands:
        others = accepted + chosen
        if all(max_xcorr(c, o) <= _BUILD_BOUND for o in others):
            chosen.append(c)
            if len(chosen) == want:
                return chosen
    raise CodeTableError(f"could only build {len(chosen)} of {want} codes")


def _build_default() -> dict[int, TernaryCode]:
    ms7 = [_mseq(7, t) for t in _primitive_taps(7)]
    # a preferred pair gives the three-valued Gold family
    pair = next(
        (a, b)
        for a, b in itertools.combinations(ms7, 2)
        if np.abs(periodic_xcorr(a, b)).max() < 0.14
    )
    a, b = pair
    gold = [a, b] + [a * np.roll(b, k) for k in range(127)]
    ref7 = ms7[-1]
    long_cands = [g * _sparse_mask(ref7, 3 * i) for i, g in enumerate(gold)]
    long_codes = _greedy(long_cands, len(LONG_IDS), [])

    ms8 = [_mseq(8, t) for t in _primitive_taps(8)]
    ref8 = ms8[-1]
    short_cands = [m * _sparse_mask(ref8, 7 * i) for i, m in enumerate(ms8[:-1])]
    short_codes = _greedy(short_cands, len(SHORT_IDS), long_codes)

    table = {}
    for idx, c in zip(SHORT_IDS, short_codes):
        table[idx] = TernaryCode(idx, tuple(int(x) for x in c))
    for idx, c in zip(LONG_IDS, long_codes):
        table[idx] = TernaryCode(idx, tuple(int(x) for x in c))
    return table


def self_test(table: dict[int, TernaryCode], bound: float = XCORR_BOUND) -> float:
    """Return the worst pairwise peak; raise if it exceeds ``bound``."""
    if len({c.symbols for c in table.values()}) != len(table):
        raise CodeTableError("duplicate sequences in code table")
    worst = 0.0
    arrays = {i: c.as_array() for i, c in table.items()}
    for i, j in itertools.combinations(sorted(arrays), 2):
        peak = max_xcorr(arrays[i], arrays[j])
        if peak > bound:
            raise CodeTableError(f"codes {i} and {j} correlate at {peak:.3f} > {bound}")
        worst = max(worst, peak)
    return worst


_SYMBOL_CHARS = {"+": 1, "0": 0, "-": -1}


def parse_table(text: str) -> dict[int, TernaryCode]:
    table: dict[int, TernaryCode] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, body = line.split(":", 1)
            idx = int(head)
            syms = tuple(_SYMBOL_CHARS[ch] for ch in body.strip())
        except (ValueError, KeyError) as exc:
            raise CodeTableError(f"line {lineno}: cannot parse {raw!r}") from exc
        if idx in table:
            raise CodeTableError(f"line {lineno}: duplicate index {idx}")
        table[idx] = TernaryCode(idx, syms)
    if not table:
        raise CodeTableError("code table file has no entries")
    return table


def format_table(table: dict[int, TernaryCode]) -> str:
    inv = {v: k for k, v in _SYMBOL_CHARS.items()}
    return "".join(
        f"{i}: {''.join(inv[s] for s in table[i].symbols)}\n" for i in sorted(table)
    )


def load_table(path: str | Path) -> dict[int, TernaryCode]:
    table = parse_table(Path(path).read_text())
    self_test(table)
    return table


@functools.lru_cache(maxsize=1)
def default_table() -> dict[int, TernaryCode]:
    table = _build_default()
    self_test(table)
    return table


_active: dict[int, TernaryCode] | None = None


def use_table(table: dict[int, TernaryCode] | None) -> None:
    """Swap the process-wide table (``None`` restores the built-in one)."""
    global _active
    if table is not None:
        self_test(table)
    _active = table
    preamble_code.cache_clear()


def active_table() -> dict[int, TernaryCode]:
    return _active if _active is not None else default_table()


@functools.lru_cache(maxsize=None)
def preamble_code(index: int) -> TernaryCode:
    table = active_table()
    try:
        return table[index]
    except KeyError:
        raise CodeTableError(f"unknown preamble code index {index}") from None
