"""End-to-end composition and measurement campaigns.

``run_pipeline`` chains stimulus, ADC, framing, lane distribution, the
fixed-point spectral core and the vertex fit. The campaign functions sweep
the carrier across the band and collect per-point deviation and range.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributor import P2SConfig, distribute, reassemble
from .fitting import estimate
from .framing import SampleFrame, estimate_period, split_frames
from .signal_gen import StimulusConfig, count_clips, generate_stimulus, quantize
from .spectral import FftConfig, analyze_frame, analyze_frames


log = logging.getLogger(__name__)

SNR_LEVELS = (60.0, 40.0, 20.0)
AMPLITUDE_LEVELS_VPP = (0.5, 0.75, 1.0)
ATTENUATION_DB = 6.0
ADC_RANGE_VPP = 0.8
SNR_RANGE_LIMIT = 5e6
AMPLITUDE_RANGE_LIMIT = 5e6
LOWEST_AMPLITUDE_RANGE_LIMIT = 4e6

RECORD_FIELDS = ("true_freq", "mean_est", "max_deviation", "range", "n_frames", "clipped_samples")


class PipelineError(RuntimeError):
    """A stage failed on a particular frame."""

    def __init__(self, frame_index, cause):
        super().__init__(f"frame {frame_index}: {type(cause).__name__}: {cause}")
        self.frame_index = frame_index
        self.cause = cause


@dataclass
class PipelineOutput:
    """Estimates in frame order plus the bookkeeping behind them.

    ``n_frames`` counts every frame the splitter produced; frames shorter
    than a full pulse (the partial ones at the record edges) are
    ``dropped``, so ``len(estimates) == n_frames - dropped``.
    """

    estimates: list = field(default_factory=list)
    n_frames: int = 0
    dropped: int = 0
    period: int = 0
    clipped_samples: int = 0
    lane_counts: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.estimates)

    def __len__(self):
        return len(self.estimates)

    def __getitem__(self, i):
        return self.estimates[i]

    @property
    def freqs(self) -> np.ndarray:
        return np.array([e.freq_hz for e in self.estimates])


def _analyze_lane(lane, fft_cfg):
    try:
        return analyze_frames(lane, fft_cfg)
    except Exception:
        # redo one at a time to name the offending frame
        for fr in lane:
            try:
                analyze_frame(fr, fft_cfg)
            except Exception as e:
                raise PipelineError(fr.frame_index, e) from e
        raise


def run_pipeline(stim: StimulusConfig, fft_cfg: FftConfig = FftConfig(),
                 p2s: P2SConfig = P2SConfig(), literal: bool = False,
                 min_frame_len: int | None = None) -> PipelineOutput:
    """Measure the carrier of every pulse in the stimulus.

    Frames that do not start and end in a gap hold a partial pulse from a
    record edge and are dropped, as are frames shorter than
    ``min_frame_len`` (default half the estimated period). The rest are
    renumbered, dealt to the
    lanes by the two-stage distributor, analysed lane by lane and merged
    back into frame order.
    """
    x = generate_stimulus(stim)
    out = PipelineOutput(clipped_samples=count_clips(x))
    if x.size == 0:
        return out
    codes = quantize(x)
    nominal = int(round(stim.period_samples))
    if codes.size < 3 * nominal:
        # too few pulses to correlate; fall back to the known repetition rate
        log.info("record of %d samples too short for period search", codes.size)
        out.period = nominal
    else:
        # a frame has to fit the transform, so longer lags are not candidates
        out.period = estimate_period(codes, max_lag=fft_cfg.n)
    split = split_frames(codes, out.period)
    out.n_frames = len(split)
    if min_frame_len is None:
        min_frame_len = out.period // 2
    kept = [fr for fr, whole in zip(split, split.complete)
            if whole and fr.active_len >= min_frame_len]
    out.dropped = out.n_frames - len(kept)
    frames = [SampleFrame(fr.samples, fr.active_len, i) for i, fr in enumerate(kept)]

    lanes = distribute(frames, p2s)
    out.lane_counts = [len(lane) for lane in lanes]
    results = []
    for lane in lanes:
        for peak in _analyze_lane(lane, fft_cfg):
            try:
                results.append(estimate(peak, stim.sample_rate, fft_cfg.n, literal))
            except Exception as e:
                raise PipelineError(peak.frame_index, e) from e
    out.estimates = reassemble([results])
    return out


@dataclass
class PointRecord:
    true_freq: float
    mean_est: float
    max_deviation: float
    range: float
    n_frames: int
    clipped_samples: int = 0


def summarize_point(true_freq: float, freqs, clipped_samples: int = 0) -> PointRecord:
    """Deviation and range of one point's estimates (range is max - min)."""
    f = np.asarray(freqs, dtype=float)
    if f.size == 0:
        return PointRecord(true_freq, math.nan, math.nan, math.nan, 0, clipped_samples)
    return PointRecord(
        true_freq=float(true_freq),
        mean_est=float(f.mean()),
        max_deviation=float(np.max(np.abs(f - true_freq))),
        range=float(f.max() - f.min()),
        n_frames=int(f.size),
        clipped_samples=int(clipped_samples),
    )


def config_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentResult:
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def max_deviation(self) -> float:
        return float(np.nanmax(self.column("max_deviation"))) if self.records else math.nan

    @property
    def max_range(self) -> float:
        return float(np.nanmax(self.column("range"))) if self.records else math.nan

    @property
    def mean_range(self) -> float:
        return float(np.nanmean(self.column("range"))) if self.records else math.nan

    @property
    def clipped_samples(self) -> int:
        return int(sum(r.clipped_samples for r in self.records))

    def fraction_range_within(self, limit: float) -> float:
        if not self.records:
            return math.nan
        return float(np.mean(self.column("range") <= limit))

    def summary(self) -> dict:
        return {
            "points": len(self.records),
            "max_deviation": self.max_deviation,
            "max_range": self.max_range,
            "mean_range": self.mean_range,
            "clipped_samples": self.clipped_samples,
        }

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "summary": self.summary(),
            "records": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls([PointRecord(**r) for r in d.get("records", [])], dict(d.get("metadata", {})))


def point_seed(seed: int, index: int) -> int:
    """Seed for sweep point ``index``; independent of execution order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def sweep_frequencies(f_start: float, f_stop: float, f_step: float,
                      sample_rate: float = 10e9, n: int = 512) -> np.ndarray:
    """Sweep grid, validated to stay two bins clear of DC and Nyquist."""
    bin_hz = sample_rate / n
    if f_step <= 0:
        raise ValueError("f_step must be positive")
    if f_stop < f_start:
        raise ValueError("f_stop must not be below f_start")
    if f_start < 2 * bin_hz:
        raise ValueError(f"f_start must be at least two bins ({2 * bin_hz:g} Hz)")
    if f_stop > sample_rate / 2 - 2 * bin_hz:
        raise ValueError(f"f_stop must be at most {sample_rate / 2 - 2 * bin_hz:g} Hz")
    count = int(math.floor((f_stop - f_start) / f_step + 1e-9)) + 1
    return f_start + f_step * np.arange(count)


def _measure_point(args):
    index, freq, base, fft_cfg, frames_per_point = args
    stim = base.replace(carrier_freq=float(freq), seed=point_seed(base.seed, index))
    out = run_pipeline(stim, fft_cfg)
    freqs = out.freqs[:frames_per_point]
    return summarize_point(freq, freqs, out.clipped_samples)


def sweep(f_start: float, f_stop: float, f_step: float, frames_per_point: int = 50,
          snr=None, amplitude: float | None = None, base: StimulusConfig | None = None,
          fft_cfg: FftConfig = FftConfig(), seed: int = 0, workers: int = 1,
          label: str = "sweep") -> ExperimentResult:
    """Step the carrier over ``[f_start, f_stop]`` and measure each point.

    ``snr`` (dB, or None for noiseless) and ``amplitude`` (fraction of ADC
    half range) override ``base``. Each point draws its noise from
    ``(seed, point index)``, so results do not depend on ``workers``.
    """
    if frames_per_point < 1:
        raise ValueError("frames_per_point must be >= 1")
    base = base or StimulusConfig()
    changes = {"n_pulses": frames_per_point, "snr_db": snr, "seed": seed}
    if amplitude is not None:
        changes["amplitude_fullscale_fraction"] = amplitude
    base = base.replace(**changes)
    freqs = sweep_frequencies(f_start, f_stop, f_step, base.sample_rate, fft_cfg.n)
    jobs = [(i, f, base, fft_cfg, frames_per_point) for i, f in enumerate(freqs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_measure_point, jobs, chunksize=8))
    else:
        records = [_measure_point(j) for j in jobs]

    params = {
        "label": label,
        "f_start": f_start, "f_stop": f_stop, "f_step": f_step,
        "frames_per_point": frames_per_point,
        "stimulus": base.to_dict(),
        "fft": asdict(fft_cfg),
    }
    metadata = dict(params, config_hash=config_hash(params), seed=seed,
                    timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    return ExperimentResult(records, metadata)


@dataclass
class CampaignReport:
    kind: str
    results: dict = field(default_factory=dict)   # level label -> ExperimentResult
    checks: dict = field(default_factory=dict)    # check name -> bool

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "checks": self.checks,
            "results": {k: v.to_dict() for k, v in self.results.items()},
        }


def snr_campaign(levels=SNR_LEVELS, f_start=100e6, f_stop=4e9, f_step=10e6,
                 frames_per_point=50, seed=0, base=None, fft_cfg=FftConfig(),
                 workers=1) -> CampaignReport:
    """Sweep at each SNR; check the range limit and its trend as SNR drops."""
    rep = CampaignReport("snr")
    for lvl in levels:
        rep.results[str(lvl)] = sweep(f_start, f_stop, f_step, frames_per_point, snr=lvl,
                                      base=base, fft_cfg=fft_cfg, seed=seed,
                                      workers=workers, label=f"snr {lvl} dB")
    for lvl, res in rep.results.items():
        rep.checks[f"range_within_5MHz@{lvl}dB"] = bool(res.max_range <= SNR_RANGE_LIMIT)
    numeric = [lvl for lvl in levels if lvl is not None]
    if len(numeric) >= 2:
        hi, lo = str(max(numeric)), str(min(numeric))
        rep.checks["range_grows_as_snr_drops"] = bool(
            rep.results[lo].max_range >= rep.results[hi].max_range)
    return rep


def amplitude_to_fraction(vpp: float, attenuation_db: float = ATTENUATION_DB,
                          adc_range_vpp: float = ADC_RANGE_VPP) -> float:
    """Source amplitude (Vpp) after the attenuator, as a fraction of ADC half range."""
    return vpp * 10 ** (-attenuation_db / 20) / adc_range_vpp


def amplitude_campaign(levels=AMPLITUDE_LEVELS_VPP, attenuation_db=ATTENUATION_DB,
                       adc_range_vpp=ADC_RANGE_VPP, f_start=100e6, f_stop=4e9,
                       f_step=10e6, frames_per_point=50, snr=None, seed=0, base=None,
                       fft_cfg=FftConfig(), workers=1) -> CampaignReport:
    """Sweep at each source amplitude.

    Levels that drive the ADC past full scale are measured anyway and show
    up in the ``no_clipping`` check. The trend check compares the mean
    range over the sweep, which is less grainy than the single worst point.
    """
    rep = CampaignReport("amplitude")
    for vpp in levels:
        frac = amplitude_to_fraction(vpp, attenuation_db, adc_range_vpp)
        rep.results[str(vpp)] = sweep(f_start, f_stop, f_step, frames_per_point, snr=snr,
                                      amplitude=frac, base=base, fft_cfg=fft_cfg, seed=seed,
                                      workers=workers, label=f"amplitude {vpp} Vpp")
    ordered = [rep.results[str(v)] for v in sorted(levels)]
    rep.checks["no_clipping"] = all(r.clipped_samples == 0 for r in ordered)
    rep.checks["range_within_5MHz"] = all(r.max_range <= AMPLITUDE_RANGE_LIMIT for r in ordered)
    rep.checks["lowest_level_within_4MHz"] = bool(ordered[0].max_range <= LOWEST_AMPLITUDE_RANGE_LIMIT)
    means = [r.mean_range for r in ordered]
    rep.checks["range_non_increasing_with_amplitude"] = all(
        b <= a for a, b in zip(means, means[1:]))
    return rep


def _write(path: Path, writer):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer(fh)
    except OSError as e:
        raise OSError(f"cannot write report {path}: {e}") from e
    return path


def emit_report(result, path, fmt: str = "csv") -> Path:
    """Write an :class:`ExperimentResult` (or a campaign) as CSV or JSON.

    CSV has one row per sweep point with the plot-ready columns and the
    config hash; a campaign adds a leading ``level`` column. An empty
    result gives a header-only file.
    """
    path = Path(path)
    if fmt == "json":
        return _write(path, lambda fh: json.dump(result.to_dict(), fh, indent=2, default=str))
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")

    if isinstance(result, CampaignReport):
        header = ("level",) + RECORD_FIELDS + ("config_hash",)
        rows = [(lvl,) + tuple(asdict(r).values()) + (res.metadata.get("config_hash", ""),)
                for lvl, res in result.results.items() for r in res.records]
    else:
        header = RECORD_FIELDS + ("config_hash",)
        h = result.metadata.get("config_hash", "")
        rows = [tuple(asdict(r).values()) + (h,) for r in result.records]

    def writer(fh):
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return _write(path, writer)


def read_report_csv(path) -> ExperimentResult:
    """Load a single-sweep CSV written by :func:`emit_report`."""
    records, h = [], ""
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            h = row.pop("config_hash", h)
            records.append(PointRecord(
                **{k: (int(float(v)) if k in ("n_frames", "clipped_samples") else float(v))
                   for k, v in row.items()}))
    return ExperimentResult(records, {"config_hash": h})
