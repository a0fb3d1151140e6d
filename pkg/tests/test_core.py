import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specal.core import (
    DomainError,
    NativeParameters,
    ParameterPoint,
    Scale,
    ScaleError,
    Spectrum,
    SpectrumSet,
    WavelengthGrid,
    from_native,
    native_to_unit_array,
    to_native,
    unit_to_native_array,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
unit_points = arrays(np.float64, 3, elements=unit)


@pytest.mark.parametrize(
    "t, expected",
    [
        ((0, 0, 0), (0.5, -7.0, 0.0)),
        ((1, 1, 1), (1.5, -4.0, 1.0)),
        ((0.5, 0.5, 0.5), (1.0, -5.5, 0.5)),
    ],
)
def test_to_native_known_points(t, expected):
    n = to_native(t)
    assert (n.temperature_eV, n.log10_density_gcc, n.sodium_fraction) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "native, expected",
    [((1.0, -5.5, 0.5), (0.5, 0.5, 0.5)), ((0.5, -7.0, 0.0), (0.0, 0.0, 0.0))],
)
def test_from_native_known_points(native, expected):
    assert from_native(NativeParameters(*native)).coords == pytest.approx(expected, abs=1e-15)


@given(unit_points)
def test_native_round_trip(t):
    back = from_native(to_native(t)).coords
    assert np.max(np.abs(back - t)) < 1e-12


@given(st.floats(0.5, 1.5), st.floats(-7.0, -4.0), st.floats(0.0, 1.0))
def test_unit_round_trip_from_native(T, r, c):
    n = NativeParameters(T, r, c)
    again = to_native(from_native(n).coords).as_array()
    assert np.max(np.abs(again - n.as_array())) < 1e-12


@pytest.mark.parametrize("bad", [(1.1, 0.5, 0.5), (-1e-9, 0.5, 0.5), (np.nan, 0.5, 0.5)])
def test_points_off_the_cube_are_rejected(bad):
    with pytest.raises(DomainError):
        to_native(bad)
    with pytest.raises(DomainError):
        ParameterPoint(np.array(bad))


def test_native_out_of_range_rejected():
    with pytest.raises(DomainError):
        NativeParameters(2.0, -5.0, 0.5)
    with pytest.raises(DomainError):
        native_to_unit_array([[1.0, -3.0, 0.5]])


def test_vectorised_maps_match_scalar_maps(rng):
    pts = rng.random((20, 3))
    native = unit_to_native_array(pts)
    for t, n in zip(pts, native):
        assert np.array_equal(to_native(t).as_array(), n)
    assert np.allclose(native_to_unit_array(native), pts, atol=1e-15)


def test_copper_fraction_complements_sodium():
    assert NativeParameters(1.0, -5.0, 0.3).copper_fraction == pytest.approx(0.7)


def test_grid_validation():
    assert len(WavelengthGrid.uniform(250, 900, 2048)) == 2048
    assert WavelengthGrid.uniform(250, 900, 2048).span == (250.0, 900.0)
    with pytest.raises(DomainError):
        WavelengthGrid(np.array([1.0, 1.0, 2.0]))
    with pytest.raises(DomainError):
        WavelengthGrid(np.array([1.0]))


def test_spectrum_rejects_length_mismatch_and_nonpositive_raw():
    grid = WavelengthGrid.uniform(1, 2, 4)
    with pytest.raises(DomainError):
        Spectrum(grid, np.ones(3))
    with pytest.raises(DomainError):
        Spectrum(grid, np.array([1.0, 0.0, 1.0, 1.0]), Scale.RAW)
    # negative values are fine once on the log scale
    Spectrum(grid, np.array([-1.0, 0.0, 1.0, 1.0]), Scale.LOG)


def test_unknown_scale_tag():
    grid = WavelengthGrid.uniform(1, 2, 2)
    with pytest.raises(ScaleError):
        Spectrum(grid, np.ones(2), "decibel")


def test_spectrum_arrays_are_frozen():
    s = Spectrum(WavelengthGrid.uniform(1, 2, 3), np.ones(3))
    with pytest.raises(ValueError):
        s.intensity[0] = 5.0


def test_spectrum_set_shapes():
    grid = WavelengthGrid.uniform(1, 2, 5)
    with pytest.raises(DomainError):
        SpectrumSet(grid, np.ones((5, 3)), np.full((2, 3), 0.5))
    ss = SpectrumSet(grid, np.ones((5, 3)), np.full((3, 3), 0.5))
    assert ss.n_runs == 3
    assert ss.column(1).intensity.shape == (5,)
