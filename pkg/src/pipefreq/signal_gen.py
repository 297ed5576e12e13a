"""Pulsed modulated stimulus model and ADC quantization.

Each repetition period carries one pulse: an envelope multiplying a cosine
carrier whose phase is locked to the pulse (every pulse of the optical
generator is the same interferogram). The pulse sits in the middle of its
period so consecutive pulses are separated by a zero gap.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


ENVELOPES = ("triangular", "gaussian")
GAUSSIAN_SUPPORT_SIGMAS = 3.0  # gaussian pulses are truncated at +/- 3 sigma


@dataclass(frozen=True)
class FixedPointFormat:
    """Two's complement (or unsigned) fixed-point word.

    ``S12,0`` is ``FixedPointFormat(True, 12, 0)`` and ``S16,4`` is
    ``FixedPointFormat(True, 16, 4)``. Values are stored as integers scaled
    by ``2**fraction_bits``.
    """

    signed: bool
    wordlength: int
    fraction_bits: int

    def __post_init__(self):
        if not 1 <= self.wordlength <= 32:
            raise ValueError(f"wordlength must be in [1, 32], got {self.wordlength}")
        if not 0 <= self.fraction_bits < self.wordlength:
            raise ValueError(
                f"fraction_bits must be in [0, {self.wordlength}), got {self.fraction_bits}"
            )

    @property
    def min_int(self) -> int:
        return -(1 << (self.wordlength - 1)) if self.signed else 0

    @property
    def max_int(self) -> int:
        if self.signed:
            return (1 << (self.wordlength - 1)) - 1
        return (1 << self.wordlength) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.fraction_bits

    @property
    def min_value(self) -> float:
        return self.min_int * self.lsb

    @property
    def max_value(self) -> float:
        return self.max_int * self.lsb

    def __str__(self):
        return f"{'S' if self.signed else 'U'}{self.wordlength},{self.fraction_bits}"


S12_0 = FixedPointFormat(True, 12, 0)
S16_4 = FixedPointFormat(True, 16, 4)


@dataclass(frozen=True)
class StimulusConfig:
    """Parameters of the pulsed stimulus.

    ``envelope_param`` is the base width of the triangular envelope, or the
    standard deviation of the gaussian one (truncated at +/- 3 sigma). The
    waveform is scaled so its noiseless peak magnitude equals
    ``amplitude_fullscale_fraction`` of the ADC half range (1.0 is the
    positive full-scale input).

    With ``include_baseband`` the active region is
    ``envelope * (1 + V cos(2 pi f t))``; without it the envelope-shaped
    baseband term is removed, as the band-limited conditioning channel does
    for carriers in the 100 MHz - 4 GHz band.
    """

    carrier_freq: float = 2e9
    repetition_rate: float = 22e6
    sample_rate: float = 10e9
    envelope_kind: str = "triangular"
    envelope_param: float = 30e-9
    visibility: float = 1.0
    include_baseband: bool = False
    amplitude_fullscale_fraction: float = 0.6
    snr_db: float | None = None
    n_pulses: int = 50
    carrier_phase: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.sample_rate <= 0 or self.repetition_rate <= 0:
            raise ValueError("sample_rate and repetition_rate must be positive")
        if not 0 <= self.carrier_freq < self.sample_rate / 2:
            raise ValueError(
                f"carrier_freq {self.carrier_freq:g} Hz violates Nyquist for "
                f"sample_rate {self.sample_rate:g} Hz"
            )
        if self.repetition_rate >= self.sample_rate:
            raise ValueError("repetition_rate must be below sample_rate")
        if self.envelope_kind not in ENVELOPES:
            raise ValueError(f"envelope_kind must be one of {ENVELOPES}")
        if self.envelope_param <= 0:
            raise ValueError("envelope_param must be positive")
        # V = 0 only makes sense when the baseband term is kept
        lo_ok = self.visibility > 0 or (self.visibility == 0 and self.include_baseband)
        if not (lo_ok and self.visibility <= 1):
            raise ValueError("visibility must be in (0, 1]")
        # above 1 the ADC saturates; allowed so overdrive can be measured
        if not self.amplitude_fullscale_fraction > 0:
            raise ValueError("amplitude_fullscale_fraction must be positive")
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ValueError("snr_db must be a number or None")
        if self.n_pulses < 0:
            raise ValueError("n_pulses must be non-negative")
        if self.active_duration > self.period:
            raise ValueError(
                f"pulse of {self.active_duration:g} s does not fit the "
                f"{self.period:g} s repetition period"
            )

    @property
    def period(self) -> float:
        return 1.0 / self.repetition_rate

    @property
    def period_samples(self) -> float:
        return self.sample_rate / self.repetition_rate

    @property
    def active_duration(self) -> float:
        if self.envelope_kind == "triangular":
            return self.envelope_param
        return 2 * GAUSSIAN_SUPPORT_SIGMAS * self.envelope_param

    @property
    def n_samples(self) -> int:
        return int(round(self.n_pulses * self.period_samples))

    def replace(self, **changes) -> "StimulusConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StimulusConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown stimulus config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("snr_db"), str) and d["snr_db"].lower() == "none":
            d["snr_db"] = None
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "StimulusConfig":
        return cls.from_dict(load_config_file(path))


def load_config_file(path) -> dict:
    """Read a JSON config, or a plain ``key = value`` text file.

    Values in the text form are parsed as JSON literals when possible and
    kept as strings otherwise.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            lowered = value.lower()
            out[key] = {"true": True, "false": False, "none": None}.get(lowered, value)
    return out


def gaussian_curve(t, sigma: float):
    """Normal density with standard deviation ``sigma`` evaluated at ``t``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = np.asarray(t, dtype=float)
    return np.exp(-t * t / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma)


def gaussian_spectrum(w, sigma: float):
    """Fourier transform of :func:`gaussian_curve` at angular frequency ``w``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    w = np.asarray(w, dtype=float)
    return np.exp(-((sigma * w) ** 2) / 2)


def _envelope(tau, cfg: StimulusConfig):
    # tau is time relative to the pulse centre
    if cfg.envelope_kind == "triangular":
        half = cfg.envelope_param / 2
        return np.clip(1.0 - np.abs(tau) / half, 0.0, None)
    sigma = cfg.envelope_param
    half = GAUSSIAN_SUPPORT_SIGMAS * sigma
    env = np.exp(-tau * tau / (2 * sigma * sigma))
    return np.where(np.abs(tau) <= half, env, 0.0)


def pulse_centers(cfg: StimulusConfig) -> np.ndarray:
    """Centre time of every pulse, in seconds from the first sample."""
    return (np.arange(cfg.n_pulses) + 0.5) * cfg.period


def active_mask(cfg: StimulusConfig) -> np.ndarray:
    """Boolean mask of samples inside a pulse's active region."""
    n = np.arange(cfg.n_samples)
    t = n / cfg.sample_rate
    k = np.floor(t / cfg.period)
    tau = t - (k + 0.5) * cfg.period
    return np.abs(tau) < cfg.active_duration / 2


def generate_clean(cfg: StimulusConfig) -> np.ndarray:
    """Noiseless stimulus, ``n_pulses`` repetition periods long."""
    n = np.arange(cfg.n_samples)
    t = n / cfg.sample_rate
    k = np.floor(t / cfg.period)
    tau = t - (k + 0.5) * cfg.period
    env = _envelope(tau, cfg)
    carrier = cfg.visibility * np.cos(2 * np.pi * cfg.carrier_freq * tau + cfg.carrier_phase)
    base = 1.0 if cfg.include_baseband else 0.0
    peak = base + cfg.visibility
    if peak == 0:
        return np.zeros(cfg.n_samples)
    return env * (base + carrier) * (cfg.amplitude_fullscale_fraction / peak)


def generate_stimulus(cfg: StimulusConfig) -> np.ndarray:
    """Stimulus with white noise added when ``cfg.snr_db`` is set."""
    x = generate_clean(cfg)
    if cfg.snr_db is None or math.isinf(cfg.snr_db) or x.size == 0:
        return x
    return add_awgn(x, cfg.snr_db, cfg.seed, mask=active_mask(cfg))


def add_awgn(signal, snr_db, seed, mask=None) -> np.ndarray:
    """Add white gaussian noise at ``snr_db`` relative to the signal power.

    Signal power is measured over ``mask`` (default: the nonzero samples),
    so inter-pulse gaps do not dilute it. ``snr_db`` of ``None`` or
    ``inf`` returns an unchanged copy.
    """
    x = np.asarray(signal, dtype=float)
    if x.size == 0:
        raise ValueError("signal is empty")
    if snr_db is None or (isinstance(snr_db, float) and math.isinf(snr_db) and snr_db > 0):
        return x.copy()
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    if mask is None:
        mask = x != 0
    if not np.any(mask) or not np.any(x[mask]):
        raise ValueError("signal power is zero; SNR is undefined")
    p_signal = np.mean(x[mask] ** 2)
    p_noise = p_signal / 10 ** (snr_db / 10)
    rng = np.random.default_rng(seed)
    return x + rng.normal(0.0, math.sqrt(p_noise), x.size)


def quantize(signal, fmt: FixedPointFormat = S12_0, fullscale: float = 2.0) -> np.ndarray:
    """ADC model: round to nearest code and saturate at the format bounds.

    ``fullscale`` is the peak-to-peak input range; +/- fullscale/2 maps to
    +/- 2**(wordlength-1) codes (for S12,0, +fullscale/2 lands on the
    saturated top code 2047).
    """
    if fullscale <= 0:
        raise ValueError("fullscale must be positive")
    x = np.asarray(signal, dtype=float)
    scale = 2.0 ** (fmt.wordlength - 1) / (fullscale / 2)
    codes = np.floor(x * scale + 0.5)
    return np.clip(codes, fmt.min_int, fmt.max_int).astype(np.int64)


def dequantize(codes, fmt: FixedPointFormat = S12_0, fullscale: float = 2.0) -> np.ndarray:
    scale = 2.0 ** (fmt.wordlength - 1) / (fullscale / 2)
    return np.asarray(codes, dtype=float) / scale


def count_clips(signal, fullscale: float = 2.0) -> int:
    """Number of samples beyond the ADC input range +/- fullscale/2."""
    x = np.asarray(signal, dtype=float)
    return int(np.count_nonzero(np.abs(x) > fullscale / 2))


def write_csv(path, samples):
    """Write ``index,value`` rows."""
    samples = np.asarray(samples)
    with open(path, "w") as fh:
        fh.write("index,value\n")
        fmt = "{},{}\n" if np.issubdtype(samples.dtype, np.integer) else "{},{!r}\n"
        for i, v in enumerate(samples.tolist()):
            fh.write(fmt.format(i, v))


def write_raw_int16(path, codes):
    """Write codes as raw little-endian signed 16-bit integers."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < -32768 or codes.max() > 32767):
        raise ValueError("codes do not fit in int16")
    codes.astype("<i2").tofile(path)


def read_raw_int16(path) -> np.ndarray:
    return np.fromfile(path, dtype="<i2").astype(np.int64)
