"""Sub-bin peak refinement with a three-point parabola."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_gen import S16_4, FixedPointFormat
from .spectral import PeakFlag, SpectralPeak


@dataclass
class FrequencyEstimate:
    x_c_raw: int          # S16,4 integer, bin units * 16
    x_c: float            # dequantized bin index
    freq_hz: float
    frame_index: int = 0
    flags: PeakFlag = PeakFlag.NONE
    x_c_exact: float = float("nan")  # vertex before quantization

    def to_record(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "x_c_raw": self.x_c_raw,
            "freq_hz": self.freq_hz,
            "flags": flag_names(self.flags),
        }


def flag_names(flags: PeakFlag) -> str:
    return "|".join(f.name.lower() for f in PeakFlag if f and f in flags and f.name)


def vertex_offset(y_m1, y0, y_p1):
    """Offset of the parabola vertex from the centre sample.

    With the parabola shifted so the centre sits at 0,
    ``a = (y_p1 + y_m1 - 2 y0) / 2`` and ``b = (y_p1 - y_m1) / 2``; the
    vertex is at ``-b / (2a)``. Sums and differences plus the halvings
    (shifts) are all adders; one divide finishes it. Returns ``nan`` where
    the three points are collinear.
    """
    y_m1, y0, y_p1 = (np.asarray(v, dtype=float) for v in (y_m1, y0, y_p1))
    two_a = (y_p1 + y_m1) - 2 * y0   # adders 1, 2 (2*y0 is a shift)
    two_b = y_p1 - y_m1              # adder 3
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(two_a != 0, -two_b / (2 * two_a), np.nan)
    return off if off.ndim else float(off)


def vertex_offset_literal(y_m1, y0, y_p1):
    """Offset as printed in the original derivation, kept for comparison.

    That version carries an extra ``-2 y0`` in ``b`` and is not the vertex
    of the fitted parabola; it biases estimates by up to several bins.
    """
    y_m1, y0, y_p1 = (np.asarray(v, dtype=float) for v in (y_m1, y0, y_p1))
    den = y_p1 + y_m1 - 2 * y0
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, -(y_p1 - y_m1 - 2 * y0) / den, np.nan)
    return off if off.ndim else float(off)


def fit_vertex(peak: SpectralPeak, literal: bool = False):
    """Fractional bin index of the peak and the flags raised on the way.

    Returns ``(x_c, flags)``. Collinear triples return ``x0`` with
    ``DENOMINATOR_DEGENERATE``; a vertex further than half a bin from
    ``x0`` (impossible for a true local maximum, barring rounding) is
    clamped to +/- 0.5 and flagged ``EDGE_CLAMPED``.
    """
    flags = peak.flags
    fn = vertex_offset_literal if literal else vertex_offset
    off = fn(peak.y_m1, peak.y0_mag, peak.y_p1)
    if np.isnan(off):
        return float(peak.x0), flags | PeakFlag.DENOMINATOR_DEGENERATE
    if not literal and abs(off) > 0.5:
        off = 0.5 if off > 0 else -0.5
        flags |= PeakFlag.EDGE_CLAMPED
    return peak.x0 + off, flags


def quantize_index(x_c: float, fmt: FixedPointFormat = S16_4):
    """Round ``x_c`` to the nearest multiple of the format LSB (half up).

    Returns ``(raw_int, saturated)``.
    """
    scale = 1 << fmt.fraction_bits
    raw = int(np.floor(x_c * scale + 0.5))
    clipped = min(max(raw, fmt.min_int), fmt.max_int)
    return clipped, clipped != raw


def index_to_freq(x_c, sample_rate: float, n: int):
    """Physical frequency of fractional bin ``x_c``."""
    return x_c * sample_rate / n


def estimate(peak: SpectralPeak, sample_rate: float, n: int = 512,
             literal: bool = False, fmt: FixedPointFormat = S16_4) -> FrequencyEstimate:
    """Vertex fit, S16,4 quantization, then bin-to-Hz conversion.

    The frequency comes from the quantized index, matching the hardware
    where the S16,4 word feeds the final multiplier.
    """
    x_c, flags = fit_vertex(peak, literal)
    raw, saturated = quantize_index(x_c, fmt)
    if saturated:
        flags |= PeakFlag.EDGE_CLAMPED
    xq = raw / (1 << fmt.fraction_bits)
    return FrequencyEstimate(
        x_c_raw=raw,
        x_c=xq,
        freq_hz=index_to_freq(xq, sample_rate, n),
        frame_index=peak.frame_index,
        flags=flags,
        x_c_exact=x_c,
    )
