from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from oracles import law_of_cosines_km
from quakemesh.core import AccelSample, GeoLocation, SignalWindow, haversine_distance, vector_magnitude

coords = st.tuples(
    st.floats(min_value=-90.0, max_value=90.0, allow_nan=False),
    st.floats(min_value=-180.0, max_value=180.0, allow_nan=False),
).map(lambda t: GeoLocation(*t))


class TestGeoLocation:
    def test_valid_construction(self):
        loc = GeoLocation(41.9028, 12.4964)
        assert loc.latitude_deg == 41.9028

    @pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (-90.5, 0.0), (0.0, 180.1), (0.0, -181.0)])
    def test_out_of_range_rejected(self, lat, lon):
        with pytest.raises(ValueError):
            GeoLocation(lat, lon)

    @pytest.mark.parametrize("lat,lon", [(float("nan"), 0.0), (0.0, float("inf")), (float("-inf"), 0.0)])
    def test_non_finite_rejected(self, lat, lon):
        with pytest.raises(ValueError):
            GeoLocation(lat, lon)


class TestAccelSample:
    def test_rejects_non_finite_component(self):
        with pytest.raises(ValueError):
            AccelSample(0, 0.0, float("nan"), 1.0)

    def test_magnitude_zero_vector(self):
        assert vector_magnitude(AccelSample(0, 0.0, 0.0, 0.0)) == 0.0

    def test_magnitude_unit_axis(self):
        assert vector_magnitude(AccelSample(0, 0.0, 0.0, 1.0)) == 1.0

    def test_magnitude_three_four_five(self):
        assert vector_magnitude(AccelSample(0, 3e-3, 4e-3, 0.0)) == pytest.approx(5e-3, abs=1e-15)

    @given(st.permutations([0.3, -1.2, 0.04]))
    def test_magnitude_axis_permutation_invariant(self, axes):
        base = vector_magnitude(AccelSample(0, 0.3, -1.2, 0.04))
        assert vector_magnitude(AccelSample(0, *axes)) == pytest.approx(base, rel=1e-12)


class TestSignalWindow:
    def _samples(self, n=3, start=0, step=10):
        return tuple(AccelSample(start + i * step, 0.0, 0.0, 1.0) for i in range(n))

    def test_valid(self):
        w = SignalWindow(self._samples(), "p1", 0, 100)
        assert w.duration_ms == 100

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            SignalWindow((), "p1", 0, 100)

    def test_rejects_unsorted(self):
        samples = (AccelSample(10, 0, 0, 1), AccelSample(0, 0, 0, 1))
        with pytest.raises(ValueError):
            SignalWindow(samples, "p1", 0, 100)

    def test_rejects_sample_outside_bounds(self):
        with pytest.raises(ValueError):
            SignalWindow(self._samples(), "p1", 0, 20)


class TestHaversine:
    def test_identity_is_zero(self):
        rome = GeoLocation(41.9, 12.5)
        assert haversine_distance(rome, rome) == 0.0

    def test_antipodal_half_circumference(self):
        d = haversine_distance(GeoLocation(0, 0), GeoLocation(0, 180))
        assert d == pytest.approx(math.pi * 6371.0, abs=1e-6)

    def test_rome_milan_matches_independent_oracle(self):
        # Frozen before the build from the spherical-law-of-cosines oracle.
        rome = GeoLocation(41.9028, 12.4964)
        milan = GeoLocation(45.4642, 9.1900)
        assert haversine_distance(rome, milan) == pytest.approx(476.884684356158, abs=0.1)

    @given(coords, coords)
    def test_symmetry(self, a, b):
        assert haversine_distance(a, b) == pytest.approx(haversine_distance(b, a), rel=0, abs=0)

    @given(coords, coords)
    def test_agrees_with_law_of_cosines(self, a, b):
        # The cosine formula is ill-conditioned near zero; compare where it is stable.
        d = haversine_distance(a, b)
        if d > 1.0:
            assert d == pytest.approx(law_of_cosines_km(a, b), abs=1e-3)

    @given(coords, coords, coords)
    def test_triangle_inequality(self, a, b, c):
        ab = haversine_distance(a, b)
        bc = haversine_distance(b, c)
        ac = haversine_distance(a, c)
        assert ac <= ab + bc + 1e-6 * max(1.0, ac)
