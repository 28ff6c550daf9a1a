from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macfi.errors import KTooLarge, OutOfRange, SchemaError, UnmappedAddress
from macfi.faultctl import (
    LANE_VALUE_MAX,
    LANE_VALUE_MIN,
    REG_FI_CTRL,
    REG_FI_GLOBAL_ENABLE,
    REG_FI_INDEX,
    REG_FI_PULSE_LEN,
    REG_FI_PULSE_START,
    REG_FI_VALUE,
    FaultMap,
    FaultMode,
    FiRegisterFile,
    LaneFault,
    SplitMix64,
    derive_seed,
    fault_for_error_value,
    materialize,
    parse_fault_spec,
    read_register,
    sample_random_fault_map,
    single_lane_map,
    write_register,
)


class TestLaneFault:
    def test_value_range_checked(self):
        LaneFault.constant(LANE_VALUE_MAX)
        LaneFault.constant(LANE_VALUE_MIN)
        with pytest.raises(OutOfRange):
            LaneFault.constant(LANE_VALUE_MAX + 1)
        with pytest.raises(OutOfRange):
            LaneFault.pulse(LANE_VALUE_MIN - 1, 0, 1)

    def test_pulse_window_checked(self):
        with pytest.raises(OutOfRange):
            LaneFault.pulse(1, 0, 0)
        with pytest.raises(OutOfRange):
            LaneFault.pulse(1, -1, 5)

    def test_error_value_realization(self):
        assert fault_for_error_value(0).mode is FaultMode.STUCK_ZERO
        assert fault_for_error_value(1) == LaneFault.constant(1)
        assert fault_for_error_value(-1) == LaneFault.constant(-1)


class TestFaultMap:
    def test_default_is_empty(self):
        fmap = FaultMap()
        assert fmap.is_empty()
        assert list(fmap.cells()) == []

    def test_set_get_bounds(self):
        fmap = FaultMap()
        fmap.set(7, 7, LaneFault.stuck_zero())
        assert fmap.get(7, 7).mode is FaultMode.STUCK_ZERO
        with pytest.raises(OutOfRange):
            fmap.get(8, 0)
        with pytest.raises(OutOfRange):
            fmap.set(0, -1, LaneFault.stuck_zero())

    def test_spec_text_round_trip(self):
        fmap = FaultMap()
        fmap.set(1, 7, LaneFault.constant(-1))
        fmap.set(0, 0, LaneFault.stuck_zero())
        fmap.set(3, 2, LaneFault.pulse(5, 10, 20))
        text = fmap.to_spec_text()
        assert parse_fault_spec(text) == fmap

    def test_parse_comments_and_errors(self):
        fmap = parse_fault_spec("# comment\n\n0,0,zero  # trailing\n")
        assert fmap.get(0, 0).mode is FaultMode.STUCK_ZERO
        for bad in ("0,0,bogus", "0,0,const", "0,0,pulse,1", "9,0,zero", "0,0,const,200000"):
            with pytest.raises(SchemaError):
                parse_fault_spec(bad)

    def test_digest_distinguishes_maps(self):
        a, b = FaultMap(), FaultMap()
        a.set(0, 0, LaneFault.stuck_zero())
        assert a.digest() != b.digest()
        assert a.digest() == a.digest()


class TestRegisterFile:
    def test_value_sign_extension(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_VALUE, 0x0003FFFF)
        assert read_register(rf, REG_FI_VALUE) == -1

    def test_value_masked_to_18_bits(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_VALUE, 0xFFFC0000 | 5)
        assert read_register(rf, REG_FI_VALUE) == 5

    def test_unmapped_offset(self):
        rf = FiRegisterFile()
        with pytest.raises(UnmappedAddress):
            write_register(rf, 0xFF, 1)
        with pytest.raises(UnmappedAddress):
            read_register(rf, 0x18)

    def test_ctrl_reserved_bits_read_zero(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_CTRL, 0xFFFFFFFF)
        assert read_register(rf, REG_FI_CTRL) == 0x3F07

    def test_index_masked(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_INDEX, 64 + 3)
        assert read_register(rf, REG_FI_INDEX) == 3

    @given(st.integers(0, 63), st.integers(0, 2**32 - 1))
    @settings(max_examples=100)
    def test_round_trip_all_fields(self, idx, raw):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_INDEX, idx)
        for off, mask in ((REG_FI_CTRL, 0x3F07), (REG_FI_PULSE_START, 0xFFFFFFFF),
                          (REG_FI_PULSE_LEN, 0xFFFFFFFF)):
            write_register(rf, off, raw)
            assert read_register(rf, off) == raw & mask
        write_register(rf, REG_FI_VALUE, raw)
        v = read_register(rf, REG_FI_VALUE)
        assert LANE_VALUE_MIN <= v <= LANE_VALUE_MAX
        assert v & 0x3FFFF == raw & 0x3FFFF


def program_entry(rf, idx, unit, lane, mode, value=0, start=0, length=0, enable=True):
    write_register(rf, REG_FI_INDEX, idx)
    ctrl = (1 if enable else 0) | (mode << 1) | (unit << 8) | (lane << 11)
    write_register(rf, REG_FI_CTRL, ctrl)
    write_register(rf, REG_FI_VALUE, value & 0x3FFFF)
    write_register(rf, REG_FI_PULSE_START, start)
    write_register(rf, REG_FI_PULSE_LEN, length)


class TestMaterialize:
    def test_single_constant_entry(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_GLOBAL_ENABLE, 1)
        program_entry(rf, 0, 1, 7, mode=1, value=-1)
        fmap = materialize(rf)
        cells = list(fmap.cells())
        assert cells == [((1, 7), LaneFault.constant(-1))]

    def test_global_enable_gates_everything(self):
        rf = FiRegisterFile()
        program_entry(rf, 0, 1, 7, mode=1, value=-1)
        write_register(rf, REG_FI_GLOBAL_ENABLE, 0)
        assert materialize(rf).is_empty()

    def test_no_entries_enabled(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_GLOBAL_ENABLE, 1)
        program_entry(rf, 0, 1, 1, mode=1, value=3, enable=False)
        assert materialize(rf).is_empty()

    def test_last_write_wins_same_target(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_GLOBAL_ENABLE, 1)
        program_entry(rf, 0, 0, 0, mode=1, value=7)
        program_entry(rf, 1, 0, 0, mode=0)  # stuck-zero overwrites
        assert materialize(rf).get(0, 0) == LaneFault.stuck_zero()

    def test_order_independent_across_distinct_targets(self):
        rf1, rf2 = FiRegisterFile(), FiRegisterFile()
        for rf, order in ((rf1, [(0, 1, 2), (1, 3, 4)]), (rf2, [(1, 1, 2), (0, 3, 4)])):
            write_register(rf, REG_FI_GLOBAL_ENABLE, 1)
            for idx, unit, lane in order:
                program_entry(rf, idx, unit, lane, mode=1, value=9)
        assert materialize(rf1) == materialize(rf2)

    def test_pulse_entry_and_zero_len_disabled(self):
        rf = FiRegisterFile()
        write_register(rf, REG_FI_GLOBAL_ENABLE, 1)
        program_entry(rf, 0, 2, 3, mode=2, value=5, start=10, length=4)
        program_entry(rf, 1, 4, 4, mode=2, value=5, start=0, length=0)
        program_entry(rf, 2, 5, 5, mode=3, value=5)  # reserved mode code
        fmap = materialize(rf)
        assert fmap.get(2, 3) == LaneFault.pulse(5, 10, 4)
        assert fmap.get(4, 4).mode is FaultMode.NONE
        assert fmap.get(5, 5).mode is FaultMode.NONE


class TestSampling:
    def test_k_zero_empty(self):
        assert sample_random_fault_map(0, LaneFault.stuck_zero(), 1).is_empty()

    def test_k_full_covers_grid(self):
        fmap = sample_random_fault_map(64, LaneFault.stuck_zero(), 1)
        assert sum(1 for _ in fmap.cells()) == 64

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            sample_random_fault_map(65, LaneFault.stuck_zero(), 1)

    def test_seed_deterministic(self):
        t = LaneFault.constant(1)
        assert sample_random_fault_map(5, t, 42) == sample_random_fault_map(5, t, 42)
        assert sample_random_fault_map(5, t, 42) != sample_random_fault_map(5, t, 43)

    @given(st.integers(0, 64), st.integers(0, 2**64 - 1))
    @settings(max_examples=100)
    def test_exactly_k_distinct_lanes(self, k, seed):
        fmap = sample_random_fault_map(k, LaneFault.stuck_zero(), seed)
        cells = [pos for pos, _ in fmap.cells()]
        assert len(cells) == k
        assert len(set(cells)) == k

    def test_single_lane_frequency_uniform(self):
        # 10^4 draws of k=1: each lane within 1/64 +/- 0.01
        counts = {}
        for seed in range(10_000):
            fmap = sample_random_fault_map(1, LaneFault.stuck_zero(), seed)
            ((unit, lane), _), = fmap.cells()
            counts[(unit, lane)] = counts.get((unit, lane), 0) + 1
        assert len(counts) == 64
        for n in counts.values():
            assert abs(n / 10_000 - 1 / 64) <= 0.01


class TestPrng:
    def test_splitmix_known_stream(self):
        # Reference values of the standard splitmix64 sequence from seed 0
        rng = SplitMix64(0)
        assert [rng.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF,
            0x6E789E6AA1B965F4,
            0x06C45D188009454F,
        ]

    def test_bounded_rejects_bad_n_and_stays_in_range(self):
        rng = SplitMix64(9)
        with pytest.raises(OutOfRange):
            rng.bounded(0)
        assert all(0 <= rng.bounded(7) < 7 for _ in range(200))

    def test_derive_seed_sensitivity(self):
        base = derive_seed(1, 2, 3, 4)
        assert derive_seed(1, 2, 3, 4) == base
        assert derive_seed(1, 2, 3, 5) != base
        assert derive_seed(2, 2, 3, 4) != base
        assert derive_seed(1, 2, -1, 4) != derive_seed(1, 2, 1, 4)
        assert 0 <= base < 2**64


def test_single_lane_map_helper():
    fmap = single_lane_map(2, 5, LaneFault.constant(3))
    assert list(fmap.cells()) == [((2, 5), LaneFault.constant(3))]
