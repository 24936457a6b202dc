"""Chip-resolution waveforms for HRP packet fields.

One sample per chip at ``CHIP_RATE``; a code symbol (or data pulse) occupies
the first chip of a ``SPREAD``-chip slot and the rest of the slot is silent.
"""

from __future__ import annotations

import binascii
import functools
import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .codes import CodeTableError, TernaryCode, preamble_code

CHIP_RATE = 499.2e6
CHIP_PS = 1e12 / CHIP_RATE  # ~2003.2 ps
SPREAD = 4
SPEED_OF_LIGHT = 299_792_458.0

STS_MODES = ("off", "sp1", "sp2", "sp3")

# ternary symbol patterns; every pattern opens with a silent symbol so the
# preamble end is unambiguous
SFD_PATTERNS: dict[int, tuple[int, ...]] = {
    0: (0, 1, 0, -1, 1, 0, 0, -1),
    1: (0, -1, 1, 0, 1, 1, -1, -1),
    2: (0, 1, 0, -1, -1, -1, -1, -1, 0, 1, 1, 1, 0, 1, -1, 1),
    3: (0, 1, 1, 1, 1, -1, 1, 1, -1, 1, -1, -1, 0, 0, -1, -1,
        1, 1, -1, 1, 1, -1, 0, -1, 0, 1, 0, -1, -1, -1, -1, 1),
}

PHD_BITS = 19
PHD_INFO_BITS = 13
CRC_BITS = 16
MAX_PAYLOAD_BYTES = 127


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhdProfile:
    """Bundle of header/data options a transceiver exposes together."""

    id: int
    data_rate: str
    phd_mode: str
    phd_rate: str
    pdoa_mode: str
    pulses_per_bit: int
    phd_pulses_per_bit: int
    scramble_seed: int
    crc_init: int


PHD_PROFILES: dict[int, PhdProfile] = {
    0: PhdProfile(0, "6M8", "std", "std", "off", 100, 100, 0x5EED0, 0xFFFF),
    1: PhdProfile(1, "6M8", "ext", "std", "off", 100, 100, 0x5EED1, 0x1D0F),
    2: PhdProfile(2, "850k", "std", "data", "off", 200, 200, 0x5EED2, 0xA5A5),
    3: PhdProfile(3, "6M8", "std", "std", "m3", 100, 100, 0x5EED3, 0x3C3C),
}


# --------------------------------------------------------------------- config

@dataclass(frozen=True)
class PacketConfig:
    channel: int
    preamble_code: int
    preamble_length: int  # symbols, a whole number of code repetitions
    pac: int  # symbols per accumulation chunk
    sfd_type: int
    sts_mode: str
    sts_length: int
    phd_profile: int

    def __post_init__(self) -> None:
        try:
            code = preamble_code(self.preamble_code)
        except CodeTableError as exc:
            raise ConfigError(str(exc)) from None
        if self.preamble_length <= 0 or self.preamble_length % len(code):
            raise ConfigError(
                f"preamble length {self.preamble_length} is not a multiple of "
                f"code length {len(code)}"
            )
        if self.pac <= 0 or self.reps % self.pac:
            raise ConfigError(f"pac {self.pac} does not divide {self.reps} repetitions")
        if self.sfd_type not in SFD_PATTERNS:
            raise ConfigError(f"unknown sfd type {self.sfd_type}")
        if self.sts_mode not in STS_MODES:
            raise ConfigError(f"unknown sts mode {self.sts_mode!r}")
        if self.sts_length <= 0:
            raise ConfigError("sts length must be positive")
        if self.phd_profile not in PHD_PROFILES:
            raise ConfigError(f"unknown phd profile {self.phd_profile}")

    @property
    def code(self) -> TernaryCode:
        return preamble_code(self.preamble_code)

    @property
    def code_len(self) -> int:
        return len(self.code)

    @property
    def reps(self) -> int:
        return self.preamble_length // self.code_len

    @property
    def profile(self) -> PhdProfile:
        return PHD_PROFILES[self.phd_profile]

    @property
    def has_sts(self) -> bool:
        return self.sts_mode != "off"

    @property
    def has_phd(self) -> bool:
        return self.sts_mode != "sp3"

    def receiver_view(self) -> tuple:
        """Fields that change what is on air.

        STS length is moot without an STS, and the header profile is moot
        without a header.
        """
        sts_len = self.sts_length if self.has_sts else None
        prof = self.phd_profile if self.has_phd else None
        return (self.channel, self.pac, self.preamble_code, self.preamble_length,
                self.sfd_type, self.sts_mode, sts_len, prof)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PacketConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: data[k] for k in names if k in data})


@dataclass(frozen=True)
class Domains:
    """Finite option sets a sniffer must search."""

    channels: tuple[int, ...] = (5, 9)
    pacs: tuple[int, ...] = (4, 8, 16, 32)
    code_ids: tuple[int, ...] = tuple(range(9, 25))
    preamble_reps: tuple[int, ...] = (32, 64, 128, 256, 512, 1024, 1536, 2048, 4096)
    sfd_types: tuple[int, ...] = (0, 1, 2, 3)
    sts_modes: tuple[str, ...] = STS_MODES
    sts_lengths: tuple[int, ...] = (64, 128, 256, 512, 1024, 4096, 8192)
    phd_profiles: tuple[int, ...] = (0, 1, 2, 3)

    def stages(self) -> tuple[tuple[tuple, ...], ...]:
        """Per-stage candidate tuples in row-major order."""
        return (
            tuple(itertools.product(self.channels, self.pacs)),
            tuple(itertools.product(self.code_ids, self.preamble_reps)),
            tuple((s,) for s in self.sfd_types),
            tuple(itertools.product(self.sts_modes, self.sts_lengths, self.phd_profiles)),
        )

    def product_size(self) -> int:
        return math.prod(
            len(d) for d in (self.channels, self.pacs, self.code_ids, self.preamble_reps,
                             self.sfd_types, self.sts_modes, self.sts_lengths,
                             self.phd_profiles)
        )

    def contains(self, cfg: PacketConfig) -> bool:
        return (
            cfg.channel in self.channels
            and cfg.pac in self.pacs
            and cfg.preamble_code in self.code_ids
            and cfg.reps in self.preamble_reps
            and cfg.sfd_type in self.sfd_types
            and cfg.sts_mode in self.sts_modes
            and cfg.sts_length in self.sts_lengths
            and cfg.phd_profile in self.phd_profiles
        )

    def validate(self, cfg: PacketConfig) -> PacketConfig:
        if not self.contains(cfg):
            raise ConfigError(f"config outside the configured domains: {cfg}")
        return cfg

    def config(self, channel, pac, code, reps, sfd, sts_mode, sts_len, profile) -> PacketConfig:
        return PacketConfig(channel, code, reps * len(preamble_code(code)), pac, sfd,
                            sts_mode, sts_len, profile)

    def random_config(self, rng: np.random.Generator) -> PacketConfig:
        pick = lambda opts: opts[int(rng.integers(len(opts)))]  # noqa: E731
        return self.config(pick(self.channels), pick(self.pacs), pick(self.code_ids),
                           pick(self.preamble_reps), pick(self.sfd_types),
                           pick(self.sts_modes), pick(self.sts_lengths),
                           pick(self.phd_profiles))

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Domains":
        return cls(**{k: tuple(v) for k, v in data.items()})


DEFAULT_DOMAINS = Domains()


def default_config(**overrides) -> PacketConfig:
    """The ranging configuration used throughout the experiments."""
    base = dict(channel=9, preamble_code=9, preamble_length=64 * 127, pac=8,
                sfd_type=0, sts_mode="sp1", sts_length=8192, phd_profile=0)
    base.update(overrides)
    return PacketConfig(**base)


# ---------------------------------------------------------------- field sizes

def _payload_field_bits(n_payload_bits: int) -> int:
    return n_payload_bits + CRC_BITS if n_payload_bits else 0


def field_layout(cfg: PacketConfig, n_payload_bits: int = 0, *,
                 omit_phd_payload: bool = False) -> list[tuple[str, int]]:
    """Ordered (field, chip count) pairs for a packet."""
    prof = cfg.profile
    sync = ("SYNC", cfg.preamble_length * SPREAD)
    sfd = ("SFD", len(SFD_PATTERNS[cfg.sfd_type]) * cfg.code_len * SPREAD)
    sts = ("STS", cfg.sts_length * SPREAD)
    phd = ("PHD", PHD_BITS * prof.phd_pulses_per_bit * SPREAD)
    pay = ("payload", _payload_field_bits(n_payload_bits) * prof.pulses_per_bit * SPREAD)
    data = [] if omit_phd_payload else [phd, pay]
    order = {
        "off": [sync, sfd] + data,
        "sp1": [sync, sfd, sts] + data,
        "sp2": [sync, sfd] + data + [sts],
        "sp3": [sync, sfd, sts],
    }[cfg.sts_mode]
    return order


def field_spans(cfg: PacketConfig, n_payload_bits: int = 0, *,
                omit_phd_payload: bool = False) -> dict[str, tuple[int, int]]:
    spans, pos = {}, 0
    for name, n in field_layout(cfg, n_payload_bits, omit_phd_payload=omit_phd_payload):
        spans[name] = (pos, pos + n)
        pos += n
    return spans


def packet_chips(cfg: PacketConfig, n_payload_bits: int = 0, *,
                 omit_phd_payload: bool = False) -> int:
    return sum(n for _, n in field_layout(cfg, n_payload_bits,
                                          omit_phd_payload=omit_phd_payload))


def chips_to_us(n: float) -> float:
    return n / CHIP_RATE * 1e6


def chunk_chips(cfg: PacketConfig) -> int:
    """Length of one preamble accumulation chunk."""
    return cfg.pac * cfg.code_len * SPREAD


# --------------------------------------------------------------- field builders

def _spread(symbols: np.ndarray) -> np.ndarray:
    out = np.zeros(len(symbols) * SPREAD)
    out[::SPREAD] = symbols
    return out


@functools.lru_cache(maxsize=64)
def _sync_cached(code_index: int, reps: int) -> np.ndarray:
    chips = _spread(np.tile(preamble_code(code_index).as_array(), reps))
    chips.setflags(write=False)
    return chips


def build_sync(cfg: PacketConfig) -> np.ndarray:
    return _sync_cached(cfg.preamble_code, cfg.reps)


def code_period(cfg: PacketConfig) -> np.ndarray:
    return _spread(cfg.code.as_array())


def build_sfd(cfg: PacketConfig) -> np.ndarray:
    period = cfg.code.as_array()
    return _spread(np.concatenate([s * period for s in SFD_PATTERNS[cfg.sfd_type]]))


_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(x: int) -> int:
    z = (x + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def keyed_bits(seed: int, n: int) -> np.ndarray:
    """``n`` pseudo-random ±1 values from a counter-mode split-mix stream."""
    words = -(-n // 64)
    with np.errstate(over="ignore"):
        ctr = np.uint64(seed & _M64) + np.arange(words, dtype=np.uint64) * np.uint64(_GOLDEN)
    raw = _mix_array(ctr)
    bits = np.unpackbits(raw.view(np.uint8))[:n]
    return 1.0 - 2.0 * bits


def sts_seed(key: int, counter: int, length: int) -> int:
    if not 0 <= key < (1 << 128):
        raise ValueError("STS key must be a 128-bit unsigned integer")
    lo, hi = key & _M64, key >> 64
    return _mix(lo ^ _mix(hi ^ _mix((counter & _M64) ^ _mix(length))))


def sts_symbols(key: int, length: int, counter: int = 0) -> np.ndarray:
    return keyed_bits(sts_seed(key, counter, length), length)


def build_sts(key: int, cfg: PacketConfig, counter: int = 0) -> np.ndarray:
    if not cfg.has_sts:
        raise ConfigError("STS requested for a config with sts_mode 'off'")
    return _spread(sts_symbols(key, cfg.sts_length, counter))


def _bits_to_bytes(bits: Sequence[int]) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _int_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def header_bits(n_payload_bits: int, prof: PhdProfile) -> list[int]:
    info = _int_bits(n_payload_bits // 8, 7) + _int_bits(prof.id, 2) + [0, 0, 0, 0]
    check = binascii.crc_hqx(_bits_to_bytes(info), prof.crc_init) & 0x3F
    return info + _int_bits(check, 6)


def header_ok(bits: Sequence[int], prof: PhdProfile) -> int | None:
    """Payload length in bits if the header check passes, else ``None``."""
    info = list(bits[:PHD_INFO_BITS])
    check = binascii.crc_hqx(_bits_to_bytes(info), prof.crc_init) & 0x3F
    if _int_bits(check, 6) != list(bits[PHD_INFO_BITS:PHD_BITS]):
        return None
    if info[7:9] != _int_bits(prof.id, 2):
        return None
    n_bytes = int("".join(map(str, info[:7])), 2)
    return n_bytes * 8


def crc_bits(payload_bits: Sequence[int], prof: PhdProfile) -> list[int]:
    return _int_bits(binascii.crc_hqx(_bits_to_bytes(payload_bits), prof.crc_init), 16)


@functools.lru_cache(maxsize=8)
def scrambler(profile_id: int, n_pulses: int) -> np.ndarray:
    out = keyed_bits(PHD_PROFILES[profile_id].scramble_seed, n_pulses)
    out.setflags(write=False)
    return out


def _bpsk(bits: Sequence[int], pulses_per_bit: int, prof: PhdProfile, offset: int) -> np.ndarray:
    signs = np.repeat(1.0 - 2.0 * np.asarray(bits, dtype=np.float64), pulses_per_bit)
    scr = scrambler(prof.id, offset + len(signs))[offset:]
    return _spread(signs * scr)


def check_payload_bits(payload_bits: Sequence[int]) -> None:
    n = len(payload_bits)
    if n % 8 or n // 8 > MAX_PAYLOAD_BYTES:
        raise ConfigError(f"payload of {n} bits must be whole bytes, at most {MAX_PAYLOAD_BYTES}")
    if any(b not in (0, 1) for b in payload_bits):
        raise ConfigError("payload bits must be 0/1")


def build_phd(cfg: PacketConfig, n_payload_bits: int) -> np.ndarray:
    prof = cfg.profile
    return _bpsk(header_bits(n_payload_bits, prof), prof.phd_pulses_per_bit, prof, 0)


def build_payload(cfg: PacketConfig, payload_bits: Sequence[int]) -> np.ndarray:
    prof = cfg.profile
    if not len(payload_bits):
        return np.zeros(0)
    bits = list(payload_bits) + crc_bits(payload_bits, prof)
    return _bpsk(bits, prof.pulses_per_bit, prof, PHD_BITS * prof.phd_pulses_per_bit)


def build_phd_payload(cfg: PacketConfig, payload_bits: Sequence[int]) -> np.ndarray:
    check_payload_bits(payload_bits)
    return np.concatenate([build_phd(cfg, len(payload_bits)), build_payload(cfg, payload_bits)])


# ------------------------------------------------------------------- assembly

@dataclass(frozen=True)
class PowerProfile:
    """Per-field amplitude gain (1.0 is nominal)."""

    gains: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, g in self.gains.items():
            if not g > 0:
                raise ValueError(f"gain for {name} must be positive, got {g}")

    def gain(self, name: str) -> float:
        return float(self.gains.get(name, 1.0))

    @classmethod
    def nominal(cls) -> "PowerProfile":
        return cls({})

    @classmethod
    def sync_power(cls, power_ratio: float) -> "PowerProfile":
        """Amplify only the preamble by a power ratio."""
        return cls({"SYNC": math.sqrt(power_ratio)})


@dataclass(frozen=True)
class SourceTag:
    """What a receiver front end could tell about an emission on air."""

    channel: int
    pac: int
    label: str = ""


@dataclass(frozen=True, eq=False)
class BasebandSignal:
    samples: np.ndarray
    start_time: int  # ps
    field_boundaries: tuple[tuple[str, int, int], ...] = ()
    sources: tuple[SourceTag, ...] = ()

    def __post_init__(self) -> None:
        if self.start_time < 0:
            raise ValueError("start time must be non-negative")
        n = len(self.samples)
        fb = self.field_boundaries or (("window", 0, n),)
        pos = 0
        for _, a, b in fb:
            if a != pos or b < a:
                raise ValueError("field boundaries must be contiguous and ordered")
            pos = b
        if pos != n:
            raise ValueError("field boundaries must cover the sample range")
        object.__setattr__(self, "field_boundaries", tuple(fb))

    def __len__(self) -> int:
        return len(self.samples)

    def field(self, name: str) -> np.ndarray:
        for f, a, b in self.field_boundaries:
            if f == name:
                return self.samples[a:b]
        raise KeyError(name)

    def span(self, name: str) -> tuple[int, int]:
        for f, a, b in self.field_boundaries:
            if f == name:
                return a, b
        raise KeyError(name)

    @property
    def duration_ps(self) -> int:
        return round(len(self.samples) * CHIP_PS)


def assemble_packet(cfg: PacketConfig, key: int | None, payload_bits: Sequence[int] = (),
                    profile: PowerProfile | None = None, omit_phd_payload: bool = False,
                    *, sts_counter: int = 0, amplitude: float = 1.0,
                    start_time: int = 0, label: str = "") -> BasebandSignal:
    profile = profile or PowerProfile.nominal()
    check_payload_bits(payload_bits)
    parts = {
        "SYNC": lambda: build_sync(cfg),
        "SFD": lambda: build_sfd(cfg),
        "STS": lambda: build_sts(key if key is not None else 0, cfg, sts_counter),
        "PHD": lambda: build_phd(cfg, len(payload_bits)),
        "payload": lambda: build_payload(cfg, payload_bits),
    }
    chunks, bounds, pos = [], [], 0
    for name, n in field_layout(cfg, len(payload_bits), omit_phd_payload=omit_phd_payload):
        chips = parts[name]()
        assert len(chips) == n, (name, len(chips), n)
        chunks.append(chips * (profile.gain(name) * amplitude))
        bounds.append((name, pos, pos + n))
        pos += n
    return BasebandSignal(np.concatenate(chunks), start_time, tuple(bounds),
                          (SourceTag(cfg.channel, cfg.pac, label),))


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if len(x) else 0.0


__all__ = [
    "CHIP_PS", "CHIP_RATE", "SPREAD", "SPEED_OF_LIGHT", "STS_MODES", "SFD_PATTERNS",
    "PHD_PROFILES", "PhdProfile", "ConfigError", "PacketConfig", "Domains",
    "DEFAULT_DOMAINS", "default_config", "field_layout", "field_spans",
    "packet_chips", "chips_to_us", "chunk_chips", "build_sync", "build_sfd",
    "build_sts", "build_phd", "build_payload", "build_phd_payload", "sts_symbols",
    "keyed_bits", "PowerProfile", "SourceTag", "BasebandSignal", "assemble_packet",
    "mean_power", "code_period", "header_bits", "header_ok", "crc_bits", "scrambler",
]


def replace_config(cfg: PacketConfig, **changes) -> PacketConfig:
    return replace(cfg, **changes)


def iter_configs(domains: Domains) -> Iterable[PacketConfig]:
    """Every config in the domain product (slow for the full default set)."""
    for ch, pac, code, reps, sfd, mode, sl, prof in itertools.product(
        domains.channels, domains.pacs, domains.code_ids, domains.preamble_reps,
        domains.sfd_types, domains.sts_modes, domains.sts_lengths, domains.phd_profiles,
    ):
        yield domains.config(ch, pac, code, reps, sfd, mode, sl, prof)
