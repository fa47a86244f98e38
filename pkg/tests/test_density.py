import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from checkoutkit.density import (
    DensityMap,
    KernelParams,
    count_from_density,
    generate_density,
    read_density_map,
    round_count,
    write_density_map,
)
from oracles import gaussian_density_naive


class TestGenerateDensity:
    def test_zero_centers(self):
        out = generate_density([], (64, 64))
        assert out.values.sum() == 0.0
        assert (out.width, out.height) == (8, 8)

    def test_single_center_sums_to_one(self):
        out = generate_density([(31.0, 17.0)], (64, 64))
        assert count_from_density(out) == pytest.approx(1.0, abs=1e-9)

    def test_seven_centers_sum_and_isolated_argmax(self):
        # Centers at least 4 sigma apart in cell units (sigma 2 -> 64+ px).
        centers = [
            (10.0, 10.0),
            (200.0, 10.0),
            (390.0, 10.0),
            (10.0, 200.0),
            (200.0, 200.0),
            (390.0, 200.0),
            (10.0, 390.0),
        ]
        out = generate_density(centers, (400, 400))
        assert count_from_density(out) == pytest.approx(7.0, abs=1e-6)
        # Each isolated bump peaks (locally) at its own center cell.
        for cx, cy in centers:
            u, v = int(round(cx / 8)), int(round(cy / 8))
            y0, y1 = max(0, v - 3), min(out.height, v + 4)
            x0, x1 = max(0, u - 3), min(out.width, u + 4)
            window = out.values[y0:y1, x0:x1]
            peak = np.unravel_index(np.argmax(window), window.shape)
            assert (peak[0] + y0, peak[1] + x0) == (v, u)

    def test_matches_naive_accumulation(self):
        centers = [(5.0, 9.0), (40.0, 33.0), (61.5, 2.0)]
        out = generate_density(centers, (64, 48), KernelParams(sigma=1.5, truncation_radius=5))
        naive = gaussian_density_naive(centers, (64, 48), sigma=1.5, truncation_radius=5)
        assert np.allclose(out.values, naive, atol=1e-12)

    def test_out_of_bounds_center_errors(self):
        with pytest.raises(ValueError):
            generate_density([(64.0, 10.0)], (64, 64))
        with pytest.raises(ValueError):
            generate_density([(-0.1, 10.0)], (64, 64))

    def test_non_multiple_of_eight_dims(self):
        out = generate_density([(69.0, 1.0)], (70, 9))
        assert (out.width, out.height) == (9, 2)
        assert count_from_density(out) == pytest.approx(1.0, abs=1e-9)

    @given(
        st.integers(0, 2**32 - 1),
        st.integers(1, 50),
    )
    @settings(max_examples=40, deadline=None)
    def test_mass_conservation(self, seed, n):
        rng = np.random.default_rng(seed)
        # Bias a fifth of the centers onto the border band.
        centers = []
        for _ in range(n):
            if rng.random() < 0.2:
                centers.append((float(rng.uniform(0, 2)), float(rng.uniform(0, 128))))
            else:
                centers.append(
                    (float(rng.uniform(0, 128)), float(rng.uniform(0, 128)))
                )
        out = generate_density(centers, (128, 128))
        assert abs(count_from_density(out) - n) < 1e-6

    def test_translation_equivariance_one_cell(self):
        # Interior bumps: truncation windows stay clear of the border.
        centers = [(160.0, 160.0), (200.0, 184.0)]
        base = generate_density(centers, (400, 400))
        shifted = generate_density(
            [(x + 8, y + 8) for x, y in centers], (400, 400)
        )
        assert np.array_equal(base.values[:-1, :-1], shifted.values[1:, 1:])

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        centers = [(float(rng.uniform(0, 100)), float(rng.uniform(0, 100))) for _ in range(9)]
        out = generate_density(centers, (100, 100))
        assert np.all(out.values >= 0)

    def test_adaptive_mode_conserves_mass(self):
        rng = np.random.default_rng(11)
        centers = [(float(rng.uniform(0, 256)), float(rng.uniform(0, 256))) for _ in range(12)]
        params = KernelParams(adaptive=True)
        out = generate_density(centers, (256, 256), params)
        assert count_from_density(out) == pytest.approx(12.0, abs=1e-6)

    def test_round_trip_through_count(self):
        for n in (1, 4, 23):
            centers = [(float(3 + 9 * i) % 120, float(5 + 7 * i) % 120) for i in range(n)]
            out = generate_density(centers, (120, 120))
            assert round_count(count_from_density(out)) == n


class TestCountOps:
    def test_zero_map(self):
        assert count_from_density(DensityMap(np.zeros((4, 4)))) == 0.0

    def test_linearity(self):
        values = np.random.default_rng(3).random((6, 6))
        base = count_from_density(DensityMap(values))
        assert count_from_density(DensityMap(values * 2)) == pytest.approx(2 * base)

    def test_round_half_up(self):
        assert round_count(4.49) == 4
        assert round_count(4.5) == 5
        assert round_count(0.0) == 0

    def test_round_rejects_negative(self):
        with pytest.raises(ValueError):
            round_count(-0.1)


class TestKernelParams:
    def test_truncation_invariant(self):
        with pytest.raises(ValueError):
            KernelParams(sigma=3.0, truncation_radius=8.0)

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            KernelParams(sigma=0.0)


class TestDmapFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        values = rng.random((12, 17)).astype(np.float32).astype(np.float64)
        original = DensityMap(values)
        path = tmp_path / "map.dmap"
        write_density_map(original, path)
        assert read_density_map(path) == original

    def test_byte_round_trip(self, tmp_path):
        values = np.random.default_rng(1).random((5, 5)).astype(np.float32)
        path = tmp_path / "map.dmap"
        write_density_map(DensityMap(values.astype(np.float64)), path)
        raw = path.read_bytes()
        write_density_map(read_density_map(path), path)
        assert path.read_bytes() == raw

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dmap"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            read_density_map(path)

    def test_truncated_payload_errors(self, tmp_path):
        path = tmp_path / "short.dmap"
        import struct

        path.write_bytes(b"DMAP" + struct.pack("<III", 1, 4, 4) + b"\x00" * 8)
        with pytest.raises(ValueError, match="payload"):
            read_density_map(path)

    def test_bad_version(self, tmp_path):
        import struct

        path = tmp_path / "v9.dmap"
        path.write_bytes(b"DMAP" + struct.pack("<III", 9, 1, 1) + b"\x00" * 4)
        with pytest.raises(ValueError, match="version"):
            read_density_map(path)
