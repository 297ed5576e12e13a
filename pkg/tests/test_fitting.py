import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pipefreq.fitting import (
    estimate,
    fit_vertex,
    flag_names,
    index_to_freq,
    quantize_index,
    vertex_offset,
    vertex_offset_literal,
)
from pipefreq.signal_gen import FixedPointFormat
from pipefreq.spectral import PeakFlag, SpectralPeak


def parabola_peak(x0, xv, a, c):
    # y = c - a (x - xv)^2 sampled at x0 - 1, x0, x0 + 1
    ys = [c - a * (x - xv) ** 2 for x in (x0 - 1, x0, x0 + 1)]
    return SpectralPeak(x0, *ys)


@given(st.integers(2, 250), st.floats(-0.5, 0.5), st.floats(1e-3, 1e3), st.floats(0, 1e4))
@settings(max_examples=500)
def test_vertex_of_exact_parabola(x0, off, a, c):
    x_c, flags = fit_vertex(parabola_peak(x0, x0 + off, a, c))
    assert x_c == pytest.approx(x0 + off, abs=1e-9)
    assert PeakFlag.DENOMINATOR_DEGENERATE not in flags


def test_symmetric_triple_returns_x0_exactly():
    for x0, y in [(5, (1.0, 3.0, 1.0)), (200, (7.25, 9.5, 7.25))]:
        x_c, flags = fit_vertex(SpectralPeak(x0, *y))
        assert x_c == x0 and flags == PeakFlag.NONE


def test_offset_formula_closed_form():
    # samples of 1 - (x - 0.25)^2 at x = -1, 0, 1
    assert vertex_offset(1 - 1.25 ** 2, 1 - 0.0625, 1 - 0.75 ** 2) == pytest.approx(0.25)
    assert vertex_offset(np.array([1.0, 0.0]), np.array([2.0, 1.0]), np.array([1.0, 0.0])).tolist() == [0.0, 0.0]


def test_collinear_is_degenerate():
    x_c, flags = fit_vertex(SpectralPeak(10, 1.0, 2.0, 3.0))
    assert x_c == 10 and PeakFlag.DENOMINATOR_DEGENERATE in flags
    assert math.isnan(vertex_offset(1.0, 1.0, 1.0))


def test_off_peak_vertex_is_clamped():
    # not a local maximum: the vertex lies beyond half a bin
    x_c, flags = fit_vertex(SpectralPeak(10, 1.0, 1.5, 5.0))   # convex, vertex at -2/3
    assert x_c == 9.5 and PeakFlag.EDGE_CLAMPED in flags
    x_c, flags = fit_vertex(SpectralPeak(10, 0.0, 3.0, 3.5))   # concave, vertex at +0.7
    assert x_c == 10.5 and PeakFlag.EDGE_CLAMPED in flags


def test_literal_formula_differs():
    p = parabola_peak(100, 100.2, 1.0, 50.0)
    lit = vertex_offset_literal(*p.triple)
    assert lit != pytest.approx(0.2)
    y_m1, y0, y_p1 = p.triple
    assert lit == pytest.approx(-(y_p1 - y_m1 - 2 * y0) / (y_p1 + y_m1 - 2 * y0))
    assert fit_vertex(p, literal=True)[0] == pytest.approx(100 + lit)
    assert math.isnan(vertex_offset_literal(1.0, 2.0, 3.0))


def test_quantize_index():
    assert quantize_index(102.4) == (1638, False)          # 102.375 nearest
    assert quantize_index(1 / 32) == (1, False)            # half rounds up
    assert quantize_index(-1 / 32) == (0, False)
    assert quantize_index(3000.0) == (32767, True)
    u8 = FixedPointFormat(False, 8, 2)
    assert quantize_index(-1.0, u8) == (0, True)


@given(st.floats(0, 2047))
def test_quantize_error_half_lsb(x):
    raw, sat = quantize_index(x)
    assert not sat and abs(raw / 16 - x) <= 1 / 32


def test_estimate_frequency_from_quantized_index():
    p = parabola_peak(102, 102.4, 2.0, 100.0)
    e = estimate(p, 10e9, 512)
    assert e.x_c_raw == 1638
    assert e.x_c == 102.375
    assert e.freq_hz == 1999511718.75
    assert e.x_c_exact == pytest.approx(102.4)
    assert index_to_freq(102.375, 10e9, 512) == e.freq_hz
    rec = e.to_record()
    assert rec["freq_hz"] == e.freq_hz and rec["flags"] == ""


def test_flag_names():
    assert flag_names(PeakFlag.NONE) == ""
    assert flag_names(PeakFlag.EDGE_CLAMPED | PeakFlag.FLAT_SPECTRUM) == "flat_spectrum|edge_clamped"


def test_estimate_propagates_flags():
    p = SpectralPeak(1, 1.0, 1.0, 1.0, 4, PeakFlag.FLAT_SPECTRUM)
    e = estimate(p, 10e9)
    assert e.frame_index == 4
    assert PeakFlag.FLAT_SPECTRUM in e.flags and PeakFlag.DENOMINATOR_DEGENERATE in e.flags
