import binascii
import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uwbjam.phy import (
    CHIP_PS, CHIP_RATE, DEFAULT_DOMAINS, PHD_BITS, SFD_PATTERNS, SPREAD,
    BasebandSignal, ConfigError, Domains, PacketConfig, PowerProfile, assemble_packet,
    build_phd, build_sts, build_sync, chips_to_us, chunk_chips, crc_bits, default_config,
    field_layout, field_spans, header_bits, header_ok, packet_chips, sts_symbols,
)


@st.composite
def configs(draw, domains=DEFAULT_DOMAINS):
    return domains.config(
        draw(st.sampled_from(domains.channels)), draw(st.sampled_from(domains.pacs)),
        draw(st.sampled_from(domains.code_ids)), draw(st.sampled_from(domains.preamble_reps)),
        draw(st.sampled_from(domains.sfd_types)), draw(st.sampled_from(domains.sts_modes)),
        draw(st.sampled_from(domains.sts_lengths)), draw(st.sampled_from(domains.phd_profiles)),
    )


# -- domains

def test_domain_sizes_by_enumeration():
    d = DEFAULT_DOMAINS
    product = sum(1 for _ in itertools.product(
        d.channels, d.pacs, d.code_ids, d.preamble_reps, d.sfd_types, d.sts_modes,
        d.sts_lengths, d.phd_profiles))
    assert product == d.product_size() == 516_096
    assert [len(s) for s in d.stages()] == [8, 144, 4, 112]


def test_every_domain_combination_is_structurally_valid():
    # pac must divide the repetition count for every pairing
    for pac, reps in itertools.product(DEFAULT_DOMAINS.pacs, DEFAULT_DOMAINS.preamble_reps):
        assert reps % pac == 0


@given(configs())
def test_config_dict_round_trip(cfg):
    assert PacketConfig.from_dict(cfg.to_dict()) == cfg
    assert DEFAULT_DOMAINS.contains(cfg)


def test_domains_round_trip():
    assert Domains.from_dict(DEFAULT_DOMAINS.to_dict()) == DEFAULT_DOMAINS


@pytest.mark.parametrize("change", [
    dict(preamble_length=100),            # not a multiple of 127
    dict(pac=3),                          # does not divide 64 repetitions
    dict(sfd_type=9),
    dict(sts_mode="sp9"),
    dict(sts_length=0),
    dict(phd_profile=7),
    dict(preamble_code=77),
])
def test_invalid_configs_rejected(change):
    with pytest.raises(ConfigError):
        default_config(**change)


def test_unknown_config_keys_rejected():
    with pytest.raises(ConfigError):
        PacketConfig.from_dict({**default_config().to_dict(), "bogus": 1})


def test_domain_validate():
    cfg = default_config(preamble_length=127 * 16, pac=8)
    with pytest.raises(ConfigError):
        DEFAULT_DOMAINS.validate(cfg)
    assert DEFAULT_DOMAINS.validate(default_config()) == default_config()


def test_receiver_view_ignores_sts_length_without_sts():
    a = default_config(sts_mode="off", sts_length=64)
    b = default_config(sts_mode="off", sts_length=8192)
    assert a.receiver_view() == b.receiver_view()
    assert default_config(sts_length=64).receiver_view() != default_config().receiver_view()


# -- layout

def test_default_layout_in_chips():
    # 64 x 127 symbols, 8-symbol SFD, 8192-pulse STS, 19-bit PHD, 48+16 data bits,
    # each symbol or pulse on a 4-chip slot, 100 pulses per bit
    spans = field_spans(default_config(), 48)
    assert spans == {
        "SYNC": (0, 64 * 127 * 4),
        "SFD": (32512, 32512 + 8 * 127 * 4),
        "STS": (36576, 36576 + 8192 * 4),
        "PHD": (69344, 69344 + 19 * 100 * 4),
        "payload": (76944, 76944 + 64 * 100 * 4),
    }
    assert packet_chips(default_config(), 48) == 102_544
    assert chips_to_us(102_544) == pytest.approx(205.4167, abs=1e-3)


def test_chip_timing_constants():
    assert CHIP_PS == pytest.approx(2003.2051, abs=1e-3)
    assert chips_to_us(CHIP_RATE) == pytest.approx(1e6)
    assert chunk_chips(default_config()) == 8 * 127 * 4


@pytest.mark.parametrize("mode,order", [
    ("off", ["SYNC", "SFD", "PHD", "payload"]),
    ("sp1", ["SYNC", "SFD", "STS", "PHD", "payload"]),
    ("sp2", ["SYNC", "SFD", "PHD", "payload", "STS"]),
    ("sp3", ["SYNC", "SFD", "STS"]),
])
def test_field_order_per_sts_mode(mode, order):
    assert [n for n, _ in field_layout(default_config(sts_mode=mode), 48)] == order


def test_empty_payload_has_no_crc():
    assert dict(field_layout(default_config(), 0))["payload"] == 0


@given(configs(), st.integers(0, 12))
def test_assembled_length_matches_layout(cfg, n_bytes):
    if cfg.preamble_length > 127 * 512:
        cfg = DEFAULT_DOMAINS.config(cfg.channel, cfg.pac, cfg.preamble_code, 64, cfg.sfd_type,
                                     cfg.sts_mode, cfg.sts_length, cfg.phd_profile)
    bits = [1, 0, 1, 1, 0, 0, 1, 0] * n_bytes
    sig = assemble_packet(cfg, 123, bits)
    assert len(sig) == packet_chips(cfg, len(bits))
    for name, (a, b) in field_spans(cfg, len(bits)).items():
        assert sig.span(name) == (a, b)
    # pulses sit on the first chip of each 4-chip slot only
    assert not np.any(sig.samples.reshape(-1, SPREAD)[:, 1:])


# -- field content

def test_sync_is_repeated_code():
    cfg = default_config()
    sync = build_sync(cfg)
    period = np.zeros(127 * 4)
    period[::4] = cfg.code.as_array()
    assert np.array_equal(sync, np.tile(period, 64))


def test_sfd_patterns_open_with_silence_and_have_known_lengths():
    assert [len(SFD_PATTERNS[i]) for i in range(4)] == [8, 8, 16, 32]
    assert all(p[0] == 0 for p in SFD_PATTERNS.values())


def test_sts_depends_on_key_counter_and_length():
    base = sts_symbols(1, 256, 0)
    assert set(np.unique(base)) == {-1.0, 1.0}
    assert not np.array_equal(base, sts_symbols(2, 256, 0))
    assert not np.array_equal(base, sts_symbols(1, 256, 1))
    assert not np.array_equal(base[:128], sts_symbols(1, 128, 0))
    assert np.array_equal(base, sts_symbols(1, 256, 0))


@given(st.integers(0, 2**128 - 1), st.integers(0, 1000))
def test_sts_is_balanced(key, counter):
    s = sts_symbols(key, 4096, counter)
    assert abs(s.mean()) < 0.1


def test_sts_rejects_bad_key_and_off_mode():
    with pytest.raises(ValueError):
        sts_symbols(-1, 64)
    with pytest.raises(ConfigError):
        build_sts(1, default_config(sts_mode="off"))


def test_header_check_against_independent_crc():
    prof = default_config().profile
    bits = header_bits(48, prof)
    assert len(bits) == PHD_BITS
    info = bits[:13]
    byte_str = np.packbits(np.array(info, dtype=np.uint8)).tobytes()
    check = binascii.crc_hqx(byte_str, prof.crc_init) & 0x3F
    assert bits[13:] == [int(c) for c in format(check, "06b")]
    assert info[:7] == [int(c) for c in format(6, "07b")]
    assert header_ok(bits, prof) == 48


@given(st.integers(0, 127), st.integers(0, PHD_BITS - 1))
def test_header_flip_is_detected(n_bytes, flip):
    prof = default_config().profile
    bits = header_bits(n_bytes * 8, prof)
    assert header_ok(bits, prof) == n_bytes * 8
    bits[flip] ^= 1
    # a single flipped bit can never pass a 6-bit CRC
    assert header_ok(bits, prof) is None


def test_header_rejects_other_profile():
    bits = header_bits(48, default_config(phd_profile=1).profile)
    assert header_ok(bits, default_config(phd_profile=0).profile) is None


def test_payload_crc_matches_binascii():
    prof = default_config().profile
    payload = [1, 0, 0, 1, 0, 1, 1, 1] * 6
    crc = binascii.crc_hqx(np.packbits(np.array(payload, dtype=np.uint8)).tobytes(), prof.crc_init)
    assert crc_bits(payload, prof) == [int(c) for c in format(crc, "016b")]


def test_phd_uses_profile_pulse_rate():
    assert len(build_phd(default_config(phd_profile=2), 48)) == 19 * 200 * 4
    assert len(build_phd(default_config(phd_profile=0), 48)) == 19 * 100 * 4


def test_power_profile_scales_only_named_field():
    cfg = default_config()
    plain = assemble_packet(cfg, 5, [0] * 8)
    loud = assemble_packet(cfg, 5, [0] * 8, PowerProfile.sync_power(9.0))
    assert np.allclose(loud.field("SYNC"), 3 * plain.field("SYNC"))
    assert np.array_equal(loud.field("STS"), plain.field("STS"))
    with pytest.raises(ValueError):
        PowerProfile({"SYNC": 0.0})


def test_payload_validation():
    with pytest.raises(ConfigError):
        assemble_packet(default_config(), 1, [1, 0, 1])
    with pytest.raises(ConfigError):
        assemble_packet(default_config(), 1, [2] * 8)
    with pytest.raises(ConfigError):
        assemble_packet(default_config(), 1, [0] * 8 * 128)


def test_baseband_boundaries_validated():
    with pytest.raises(ValueError):
        BasebandSignal(np.zeros(10), 0, (("a", 0, 4), ("b", 5, 10)))
    with pytest.raises(ValueError):
        BasebandSignal(np.zeros(10), -1)
    sig = BasebandSignal(np.zeros(10), 0)
    assert sig.span("window") == (0, 10)
    assert sig.duration_ps == round(10 * CHIP_PS)
