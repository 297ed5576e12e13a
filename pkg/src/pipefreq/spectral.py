"""Single-lane frequency detection: fixed-point FFT, magnitude, peak pick.

The FFT is a bit-true model of a radix-2 decimation-in-frequency pipeline
working on integer words. Every butterfly output is formed at full
precision (``a * 2**(tw-1) +/- b * w``) and then rounded once while
dropping the twiddle fraction bits plus the stage's scaling shift, the
way a DSP-slice butterfly with a post-adder rounding stage behaves.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .framing import FFT_LEN, SampleFrame, pad_frame


class FixedPointOverflow(ArithmeticError):
    pass


class PeakFlag(enum.Flag):
    NONE = 0
    FLAT_SPECTRUM = enum.auto()
    EDGE_CLAMPED = enum.auto()
    DENOMINATOR_DEGENERATE = enum.auto()


@dataclass(frozen=True)
class FftConfig:
    """Fixed-point FFT settings.

    ``input_shift`` left-aligns the 12-bit ADC codes in the ``data_bits``
    word. ``scaling_schedule`` holds the right shift applied after each
    stage (default: one bit per stage, i.e. 1/N overall). ``compare_frac_bits``
    sets the fixed-point format magnitudes are converted to for the peak
    comparison.
    """

    n: int = FFT_LEN
    data_bits: int = 16
    twiddle_bits: int = 16
    scaling_schedule: tuple = None
    rounding: str = "round"
    input_shift: int = 4
    compare_frac_bits: int = 4

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two, got {self.n}")
        if self.scaling_schedule is None:
            object.__setattr__(self, "scaling_schedule", (1,) * self.stages)
        else:
            object.__setattr__(self, "scaling_schedule", tuple(int(s) for s in self.scaling_schedule))
        if len(self.scaling_schedule) != self.stages:
            raise ValueError(f"scaling_schedule needs {self.stages} entries")
        if any(s < 0 for s in self.scaling_schedule):
            raise ValueError("scaling shifts must be non-negative")
        if self.rounding not in ("round", "truncate"):
            raise ValueError("rounding must be 'round' or 'truncate'")
        if not 2 <= self.twiddle_bits <= 24 or not 2 <= self.data_bits <= 32:
            raise ValueError("unsupported word lengths")
        if self.input_shift < 0:
            raise ValueError("input_shift must be non-negative")

    @property
    def stages(self) -> int:
        return self.n.bit_length() - 1

    @property
    def total_shift(self) -> int:
        return sum(self.scaling_schedule)

    @property
    def output_scale(self) -> float:
        """Multiply fixed-point bins by this to get the unscaled DFT of the codes."""
        return 2.0 ** (self.total_shift - self.input_shift)


@dataclass
class SpectralPeak:
    x0: int
    y_m1: float
    y0_mag: float
    y_p1: float
    frame_index: int = 0
    flags: PeakFlag = PeakFlag.NONE

    @property
    def triple(self):
        return self.y_m1, self.y0_mag, self.y_p1


@lru_cache(maxsize=16)
def twiddles(n: int, bits: int):
    """Quantized ``exp(-2j pi k / n)`` for ``k < n/2``, saturated to ``bits``."""
    k = np.arange(n // 2)
    w = np.exp(-2j * np.pi * k / n)
    one = 1 << (bits - 1)
    wr = np.clip(np.round(w.real * one), -one, one - 1).astype(np.int64)
    wi = np.clip(np.round(w.imag * one), -one, one - 1).astype(np.int64)
    wr.setflags(write=False)
    wi.setflags(write=False)
    return wr, wi


@lru_cache(maxsize=16)
def bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


def _round_shift(v, s, rounding):
    if s == 0:
        return v
    if rounding == "round":
        return (v + (1 << (s - 1))) >> s
    return v >> s


def fft_fixed(frame, cfg: FftConfig = FftConfig()):
    """Fixed-point FFT of integer sample frames.

    ``frame`` holds ADC codes, shape ``(..., n)``; they are shifted left by
    ``cfg.input_shift`` into the ``data_bits`` datapath. Returns
    ``(re, im)`` integer arrays in natural bin order. The true DFT of the
    codes is ``(re + 1j*im) * cfg.output_scale``.

    Raises :class:`FixedPointOverflow` if any stage output leaves the
    ``data_bits`` range.
    """
    x = np.asarray(frame)
    if x.shape[-1] != cfg.n:
        raise ValueError(f"frame length {x.shape[-1]} != {cfg.n}")
    if not np.issubdtype(x.dtype, np.integer):
        if not np.all(np.equal(np.mod(x, 1), 0)):
            raise ValueError("fft_fixed expects integer samples")
    lo, hi = -(1 << (cfg.data_bits - 1)), (1 << (cfg.data_bits - 1)) - 1
    re = x.astype(np.int64) << cfg.input_shift
    if re.size and (re.min() < lo or re.max() > hi):
        raise FixedPointOverflow("input does not fit the datapath word")
    im = np.zeros_like(re)
    batch = re.shape[:-1]
    n = cfg.n
    wr_all, wi_all = twiddles(n, cfg.twiddle_bits)
    frac = cfg.twiddle_bits - 1

    for s, shift in enumerate(cfg.scaling_schedule):
        blocks = 1 << s
        half = n >> (s + 1)
        re = re.reshape(batch + (blocks, 2, half))
        im = im.reshape(batch + (blocks, 2, half))
        ar, br = re[..., 0, :], re[..., 1, :]
        ai, bi = im[..., 0, :], im[..., 1, :]
        wr = wr_all[::blocks][:half]
        wi = wi_all[::blocks][:half]
        dr, di = ar - br, ai - bi
        top_r = (ar + br) << frac
        top_i = (ai + bi) << frac
        bot_r = dr * wr - di * wi
        bot_i = dr * wi + di * wr
        total = frac + shift
        out_r = np.stack([top_r, bot_r], axis=-2)
        out_i = np.stack([top_i, bot_i], axis=-2)
        re = _round_shift(out_r, total, cfg.rounding).reshape(batch + (n,))
        im = _round_shift(out_i, total, cfg.rounding).reshape(batch + (n,))
        if re.size and (re.min() < lo or re.max() > hi or im.min() < lo or im.max() > hi):
            raise FixedPointOverflow(f"overflow after stage {s}")

    rev = bit_reverse_indices(n)
    return re[..., rev], im[..., rev]


def dft_oracle(frame) -> np.ndarray:
    """Direct-summation DFT in double precision, ``O(n^2)``."""
    x = np.asarray(frame, dtype=float)
    n = x.shape[-1]
    k = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ w.T


def magnitude(re, im) -> np.ndarray:
    """Complex magnitude in single precision float (square, sum, root)."""
    r = np.asarray(re, dtype=np.float32)
    i = np.asarray(im, dtype=np.float32)
    return np.sqrt(r * r + i * i)


def to_fixed(mag, frac_bits: int) -> np.ndarray:
    """Float magnitudes to unsigned fixed point with ``frac_bits`` fraction bits."""
    return np.floor(np.asarray(mag, dtype=np.float64) * (1 << frac_bits) + 0.5).astype(np.int64)


def peak_detect(magnitudes, keys=None, frame_index: int = 0) -> SpectralPeak:
    """Pick the spectral peak in bins ``1 .. n/2-2``.

    ``magnitudes`` covers bins ``0 .. n/2-1``. The scan compares ``keys``
    (default: the magnitudes) and updates only on strictly greater values,
    so the first of equal maxima wins; the neighbours reported are the
    magnitudes on either side of the winning bin.

    Flags: ``FLAT_SPECTRUM`` when every key in the range is equal (x0 = 1);
    ``EDGE_CLAMPED`` when the winner is not a local maximum of the
    magnitudes, i.e. the true maximum sits outside the search range.
    """
    mags = np.asarray(magnitudes)
    if mags.ndim != 1 or mags.size < 4:
        raise ValueError("need a 1-D magnitude array of at least 4 bins")
    k = mags if keys is None else np.asarray(keys)
    search = k[1:mags.size - 1]
    x0 = 1 + int(np.argmax(search))
    flags = PeakFlag.NONE
    if np.all(search == search[0]):
        flags |= PeakFlag.FLAT_SPECTRUM
        x0 = 1
    y_m1, y0, y_p1 = (float(v) for v in mags[x0 - 1:x0 + 2])
    if y0 < y_m1 or y0 < y_p1:
        flags |= PeakFlag.EDGE_CLAMPED
    return SpectralPeak(x0, y_m1, y0, y_p1, frame_index, flags)


def scan_peak(magnitudes, keys=None):
    """Sequential register-pair peak scan, one bin per step.

    Reference model for :func:`peak_detect`: holds the running maximum,
    its index and the value seen just before it, and latches the value
    seen right after an update.
    """
    mags = list(np.asarray(magnitudes).tolist())
    k = mags if keys is None else list(np.asarray(keys).tolist())
    best_key, x0 = None, None
    y_m1 = y0 = y_p1 = None
    pending = False
    for i in range(1, len(mags) - 1):
        if pending:
            y_p1 = mags[i]
            pending = False
        if best_key is None or k[i] > best_key:
            best_key, x0 = k[i], i
            y_m1, y0 = mags[i - 1], mags[i]
            pending = True
    if pending:
        y_p1 = mags[len(mags) - 1]
    return x0, y_m1, y0, y_p1


def spectrum(frame, cfg: FftConfig = FftConfig()) -> np.ndarray:
    """First ``n/2`` float32 magnitude bins of a padded integer frame."""
    re, im = fft_fixed(frame, cfg)
    h = cfg.n // 2
    return magnitude(re[..., :h], im[..., :h])


def analyze_frame(frame, cfg: FftConfig = FftConfig()) -> SpectralPeak:
    """Pad, transform, take magnitudes and pick the peak of one frame."""
    if isinstance(frame, SampleFrame):
        if not frame.padded or len(frame.samples) != cfg.n:
            frame = pad_frame(frame, cfg.n)
        samples, index = frame.samples, frame.frame_index
    else:
        samples, index = np.asarray(frame), 0
        if samples.size < cfg.n:
            samples = np.concatenate([samples, np.zeros(cfg.n - samples.size, samples.dtype)])
    mags = spectrum(samples, cfg)
    return peak_detect(mags, to_fixed(mags, cfg.compare_frac_bits), index)


def analyze_frames(frames, cfg: FftConfig = FftConfig()) -> list:
    """Vectorised :func:`analyze_frame` over a list of :class:`SampleFrame`."""
    if not frames:
        return []
    block = np.zeros((len(frames), cfg.n), dtype=np.int64)
    for row, fr in zip(block, frames):
        if fr.active_len > cfg.n:
            pad_frame(fr, cfg.n)  # raises FrameTooLong
        row[: fr.active_len] = fr.samples[: fr.active_len]
    mags = spectrum(block, cfg)
    keys = to_fixed(mags, cfg.compare_frac_bits)
    return [peak_detect(m, k, fr.frame_index) for m, k, fr in zip(mags, keys, frames)]


def write_spectrum_csv(path, mags):
    with open(path, "w") as fh:
        fh.write("bin,magnitude\n")
        for i, v in enumerate(np.asarray(mags).tolist()):
            fh.write(f"{i},{v!r}\n")


def write_peaks_csv(path, peaks):
    with open(path, "w") as fh:
        fh.write("frame_index,x0,y_m1,y0,y_p1\n")
        for p in peaks:
            fh.write(f"{p.frame_index},{p.x0},{p.y_m1!r},{p.y0_mag!r},{p.y_p1!r}\n")
