"""Split a continuous acquisition into per-pulse frames and zero-pad them."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np


log = logging.getLogger(__name__)

FFT_LEN = 512
NOMINAL_FRAME_LEN = 440
ENERGY_WINDOW = 8
PERIOD_WINDOW = 64  # long enough to flatten the |carrier| ripple down to 100 MHz


class PeriodNotFound(ValueError):
    pass


class FrameTooLong(ValueError):
    pass


@dataclass
class SampleFrame:
    samples: np.ndarray
    active_len: int
    frame_index: int
    padded: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.active_len > len(self.samples):
            raise ValueError("active_len exceeds the number of samples")

    @property
    def active(self) -> np.ndarray:
        return self.samples[: self.active_len]


@dataclass
class FrameSplit:
    """Result of :func:`split_frames`; ``frames`` covers every input sample."""

    frames: list = field(default_factory=list)
    status: str = "ok"
    complete: list = field(default_factory=list)  # both ends of the frame in a gap

    def __iter__(self):
        return iter(self.frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


def _moving_abs(signal, width=ENERGY_WINDOW) -> np.ndarray:
    # centred moving average of |x|, same length as the input
    a = np.abs(np.asarray(signal, dtype=float))
    if a.size == 0:
        return a
    kernel = np.ones(width) / width
    return np.convolve(a, kernel, mode="same")


def normalized_autocorrelation(x, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation of ``x`` for lags ``0..max_lag``.

    Each lag is normalized by the energies of the two overlapping segments,
    so a perfectly periodic signal scores 1 at multiples of its period.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    max_lag = min(max_lag, n - 1)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    lags = np.arange(max_lag + 1)
    e_head = csum[n - lags]            # x[0 : n-k]
    e_tail = csum[n] - csum[lags]      # x[k : n]
    denom = np.sqrt(e_head * e_tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, acf / denom, 0.0)
    return r


def estimate_period(signal, min_lag: int | None = None, max_lag: int | None = None,
                    threshold: float = 0.5, envelope: bool = True,
                    window: int = PERIOD_WINDOW) -> int:
    """Estimate the pulse repetition period in samples.

    The autocorrelation is taken over the mean-removed moving average of
    ``|x|`` over ``window`` samples when ``envelope`` is set. On the raw
    waveform a non-integer period makes the carrier phase pull the peak
    several samples away at high carrier frequencies; a short average
    leaves the same problem through the ripple of ``|x|`` at twice a low
    carrier frequency.

    The search starts after the zero-lag lobe (first lag where the
    correlation turns negative, or ``min_lag``). Multiples of the period
    correlate almost as well as the period itself, so the answer is the
    highest point of the first lobe reaching within 10% of the best score.
    """
    x = np.asarray(signal, dtype=float)
    if x.size < 4:
        raise PeriodNotFound("signal too short")
    a = _moving_abs(x, window) if envelope else x.copy()
    a = a - a.mean()
    if max_lag is None:
        max_lag = x.size // 2
    r = normalized_autocorrelation(a, max_lag)
    if min_lag is None:
        neg = np.flatnonzero(r < 0)
        if neg.size == 0:
            raise PeriodNotFound("autocorrelation never leaves the zero-lag lobe")
        min_lag = int(neg[0])
    min_lag = max(min_lag, 1)
    if min_lag >= r.size - 1:
        raise PeriodNotFound("search range is empty")
    search = r[min_lag + 1:]
    best = float(search.max())
    if best < threshold:
        raise PeriodNotFound(f"no autocorrelation peak above {threshold} (best {best:.3f})")
    level = 0.9 * best
    start = min_lag + 1 + int(np.flatnonzero(search >= level)[0])
    end = start
    while end + 1 < r.size and r[end + 1] >= level:
        end += 1
    # the lobe can be broad and rippled; take its highest point
    return start + int(np.argmax(r[start:end + 1]))


def split_frames(signal, period: int, gap_search_window: int | None = None,
                 energy_window: int = ENERGY_WINDOW) -> FrameSplit:
    """Cut ``signal`` into frames of roughly ``period`` samples.

    The first cut is the earliest gap-level sample of the first period
    (within 10% of its energy range above the minimum). Each
    later cut is the lowest-energy sample within ``gap_search_window`` of
    one period after the previous cut; on a flat stretch of equal minima
    (a clean gap) the cut goes to the middle of the stretch. Energy is the moving average of ``|x|`` over
    ``energy_window`` samples. Samples before the first cut form a leading
    frame, so concatenating the frames gives back the input exactly.
    ``complete[i]`` tells whether both ends of frame ``i`` lie in a gap, i.e.
    it holds a whole pulse rather than the piece cut off at a record edge.
    """
    x = np.asarray(signal)
    n = x.size
    period = int(period)
    if period <= 0:
        raise ValueError("period must be positive")
    if period > n:
        log.warning("period %d longer than signal (%d samples)", period, n)
        return FrameSplit([], status="period longer than signal")
    if gap_search_window is None:
        gap_search_window = max(1, int(round(0.05 * period)))

    energy = _moving_abs(x, energy_window)
    head = energy[:period]
    # earliest gap-level sample, so a leading gap does not become its own frame
    floor = head.min() + 0.1 * (head.max() - head.min())
    first = int(np.flatnonzero(head <= floor)[0])
    cuts = [0] if first == 0 else [0, first]
    prev = first
    while True:
        nominal = prev + period
        if nominal >= n:
            break
        lo = max(prev + 1, nominal - gap_search_window)
        hi = min(n - 1, nominal + gap_search_window)
        seg = energy[lo:hi + 1]
        m = seg.min()
        cand = np.flatnonzero(seg == m) + lo
        c0 = int(cand[np.argmin(np.abs(cand - nominal))])
        # centre the cut in the flat stretch around it, so an integer
        # period estimate does not drift the cuts across many pulses
        left, right = c0, c0
        while left - 1 > prev and energy[left - 1] == m:
            left -= 1
        while right + 1 < n and energy[right + 1] == m:
            right += 1
        cut = min(max((left + right) // 2, lo), hi)
        cuts.append(cut)
        prev = cut
    cuts.append(n)

    frames, complete = [], []
    start_in_gap = energy[0] <= floor
    end_in_gap = energy[-1] <= floor
    for i, (a, b) in enumerate(zip(cuts[:-1], cuts[1:])):
        frames.append(SampleFrame(x[a:b].copy(), b - a, i))
        complete.append((a > 0 or start_in_gap) and (b < n or end_in_gap))
    return FrameSplit(frames, complete=complete)


def pad_frame(frame: SampleFrame, target_len: int = FFT_LEN) -> SampleFrame:
    """Append zeros up to ``target_len``; zeros add no DC bias."""
    if frame.active_len > target_len:
        raise FrameTooLong(f"frame of {frame.active_len} samples exceeds {target_len}")
    out = np.zeros(target_len, dtype=frame.samples.dtype)
    out[: frame.active_len] = frame.samples[: frame.active_len]
    return SampleFrame(out, frame.active_len, frame.frame_index, padded=True)


def write_frames_csv(path, frames):
    """Dump frames as ``frame_index,sample_index,value`` rows."""
    with open(path, "w") as fh:
        fh.write("frame_index,sample_index,value\n")
        for fr in frames:
            for j, v in enumerate(fr.samples[: fr.active_len].tolist()):
                fh.write(f"{fr.frame_index},{j},{v}\n")
