"""Discrete-event model of the result transfer datapath.

Frequency words stream into a FIFO at a constant rate. Whenever a block has
accumulated, it is moved to DDR; once a frame of blocks sits in DDR and the
PCIE RAM is free, the frame is copied to the PCIE RAM, during which the DDR
cannot accept writes and the FIFO absorbs the incoming data. The host (IPC)
alternates configuration windows with reads of the PCIE RAM; each read has a
random duration. After a long read, the host skips configuration windows
and drains DDR frame after frame until the backlog is back to one frame.

Sizes use binary units (1 kByte = 1024 bytes, 1 MByte = 2**20 bytes) for
both memory and rates, under which a block of 160 kByte, a frame of 16
blocks and a 2.5 MByte PCIE RAM agree with each other.
"""
from __future__ import annotations

import csv
import dataclasses
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np


KB = 1024
MB = 1024 * KB
GB = 1024 * MB
BYTE_TOL = 1e-3  # threshold slack; fluid ingest lands just short of block edges as the clock grows


@dataclass(frozen=True)
class ReadLatencyModel:
    """Host read duration for one frame.

    A uniform body centred on ``typical`` carries ``1 - p_over_knee`` of the
    mass; beyond ``knee`` an exponential tail is calibrated so that
    ``P(> knee) = p_over_knee`` and ``P(> far) = p_over_far``.
    """

    typical: float = 5e-3
    body_halfwidth: float = 3e-3
    knee: float = 12e-3
    far: float = 100e-3
    p_over_knee: float = 0.003
    p_over_far: float = 3e-5

    def __post_init__(self):
        if not 0 <= self.p_over_far <= self.p_over_knee < 1:
            raise ValueError("need 0 <= p_over_far <= p_over_knee < 1")
        if self.typical - self.body_halfwidth < 0 or self.typical + self.body_halfwidth > self.knee:
            raise ValueError("latency body must lie within [0, knee]")
        if self.far <= self.knee:
            raise ValueError("far must exceed knee")

    @property
    def tail_rate(self) -> float:
        """Decay rate (1/s) of the exponential tail; ``inf`` if the tail is empty."""
        if self.p_over_knee == 0:
            return math.inf
        if self.p_over_far == 0:
            return 0.0
        return math.log(self.p_over_knee / self.p_over_far) / (self.far - self.knee)

    @property
    def mean(self) -> float:
        rate = self.tail_rate
        if self.p_over_knee == 0:
            tail_mean = 0.0
        elif rate == 0:
            tail_mean = self.knee + (self.far - self.knee) / 2
        else:
            tail_mean = self.knee + 1 / rate
        return (1 - self.p_over_knee) * self.typical + self.p_over_knee * tail_mean

    def survival(self, t: float) -> float:
        """``P(latency > t)``."""
        lo, hi = self.typical - self.body_halfwidth, self.typical + self.body_halfwidth
        if t >= self.knee:
            if self.p_over_knee == 0:
                return 0.0
            rate = self.tail_rate
            if rate == 0:
                return self.p_over_knee * max(0.0, (self.far - t) / (self.far - self.knee))
            return self.p_over_knee * math.exp(-rate * (t - self.knee))
        body = 1 - self.p_over_knee
        if t <= lo:
            return 1.0
        if t >= hi:
            return self.p_over_knee
        return self.p_over_knee + body * (hi - t) / (hi - lo)


def sample_read_latency(model: ReadLatencyModel, rng: np.random.Generator, size=None):
    """Draw read durations in seconds from ``model``."""
    u = rng.random(size)
    body = rng.uniform(model.typical - model.body_halfwidth,
                       model.typical + model.body_halfwidth, size)
    rate = model.tail_rate
    if model.p_over_knee == 0:
        return body
    if rate == 0:
        tail = rng.uniform(model.knee, model.far, size)
    else:
        tail = model.knee + rng.exponential(1 / rate, size)
    out = np.where(u < model.p_over_knee, tail, body)
    return float(out) if size is None else out


@dataclass(frozen=True)
class DatapathConfig:
    ingest_rate: float = 88 * MB          # bytes/s
    fifo_capacity: float = 512 * KB
    block_bytes: float = 160 * KB
    frame_blocks: int = 16
    ddr_capacity: float = 2 * GB
    ddr_bandwidth: float = 500 * MB       # effective transfer rate
    ddr_peak_bandwidth: float = 34 * GB
    pcie_ram: float = 2.5 * MB
    config_time: float = 16e-3
    catch_up_threshold: int = 2           # frames of backlog that trigger catch-up
    read_latency: ReadLatencyModel = field(default_factory=ReadLatencyModel)
    stalls: tuple = ()                    # ((start_time, read_duration), ...)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def frame_bytes(self) -> float:
        return self.frame_blocks * self.block_bytes

    @property
    def block_time(self) -> float:
        return self.block_bytes / self.ddr_bandwidth

    @property
    def frame_time(self) -> float:
        return self.frame_bytes / self.ddr_bandwidth

    def validate(self):
        for name in ("fifo_capacity", "block_bytes", "ddr_capacity", "ddr_bandwidth", "pcie_ram"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.ingest_rate < 0 or self.config_time < 0:
            raise ValueError("ingest_rate and config_time must be non-negative")
        if self.frame_blocks < 1:
            raise ValueError("frame_blocks must be >= 1")
        if self.ddr_bandwidth > self.ddr_peak_bandwidth:
            raise ValueError("ddr_bandwidth exceeds the interface peak")
        if self.frame_bytes > self.pcie_ram:
            raise ValueError(
                f"frame of {self.frame_bytes:g} bytes does not fit the {self.pcie_ram:g} byte PCIE RAM"
            )
        if self.fifo_capacity < self.ingest_rate * self.frame_time:
            raise ValueError("FIFO cannot absorb the input while a frame is read from DDR")
        if self.ddr_capacity < self.frame_bytes:
            raise ValueError("DDR smaller than one frame")
        if self.catch_up_threshold < 1:
            raise ValueError("catch_up_threshold must be >= 1")

    def replace(self, **changes) -> "DatapathConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stalls"] = [list(s) for s in self.stalls]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatapathConfig":
        d = dict(d)
        if "read_latency" in d and isinstance(d["read_latency"], dict):
            d["read_latency"] = ReadLatencyModel(**d["read_latency"])
        if "stalls" in d:
            d["stalls"] = tuple(tuple(s) for s in d["stalls"])
        return cls(**d)


# closed-form sizing checks

def cycle_time(cfg: DatapathConfig) -> float:
    """Time to fill the PCIE RAM at the ingest rate: the budget for one
    configure-and-read round."""
    return cfg.pcie_ram / cfg.ingest_rate


def read_budget(cfg: DatapathConfig) -> float:
    return cycle_time(cfg) - cfg.config_time


def fifo_accrual(cfg: DatapathConfig) -> float:
    """Bytes arriving while one frame is copied out of DDR."""
    return cfg.ingest_rate * cfg.frame_time


def fifo_fill_bound(cfg: DatapathConfig) -> float:
    """Peak FIFO fill in steady state.

    A frame read starts right after a block write, so the FIFO holds what
    arrived during that write, then the frame copy's accrual, then one more
    block time while the next block is written (a block leaves the FIFO
    when its write completes).
    """
    return cfg.ingest_rate * (2 * cfg.block_time + cfg.frame_time)


def max_survivable_stall(cfg: DatapathConfig) -> float:
    """Longest host stall absorbable by DDR plus FIFO, from empty."""
    if cfg.ingest_rate == 0:
        return math.inf
    return (cfg.ddr_capacity + cfg.fifo_capacity) / cfg.ingest_rate


class TransferState:
    """Mutable datapath state; byte counts are floats."""

    __slots__ = (
        "clock", "fifo_fill", "ddr_write_addr", "ddr_read_addr", "ddr_backlog",
        "pcie_fill", "pcie_busy", "pcie_latency", "lost_bytes", "produced_bytes",
        "delivered_bytes", "delivered_frames", "max_fifo_fill", "max_ddr_backlog",
        "catch_up", "catch_up_reads",
    )

    def __init__(self):
        self.clock = 0.0
        self.fifo_fill = 0.0
        self.ddr_write_addr = 0.0
        self.ddr_read_addr = 0.0
        self.ddr_backlog = 0.0
        self.pcie_fill = 0.0
        self.pcie_busy = False
        self.pcie_latency = 0.0
        self.lost_bytes = 0.0
        self.produced_bytes = 0.0
        self.delivered_bytes = 0.0
        self.delivered_frames = 0
        self.max_fifo_fill = 0.0
        self.max_ddr_backlog = 0.0
        self.catch_up = False
        self.catch_up_reads = 0

    def copy(self) -> "TransferState":
        new = TransferState.__new__(TransferState)
        for name in self.__slots__:
            setattr(new, name, getattr(self, name))
        return new

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__slots__}

    def in_flight(self) -> float:
        return self.fifo_fill + self.ddr_backlog + self.pcie_fill

    def conservation_error(self) -> float:
        return self.produced_bytes - (self.delivered_bytes + self.in_flight() + self.lost_bytes)


def advance(state: TransferState, cfg: DatapathConfig, t: float) -> TransferState:
    """Ingest into the FIFO up to time ``t``; overflow is counted as lost."""
    dt = t - state.clock
    if dt < 0:
        raise ValueError("time cannot go backwards")
    arriving = cfg.ingest_rate * dt
    state.produced_bytes += arriving
    fill = state.fifo_fill + arriving
    if fill > cfg.fifo_capacity:
        state.lost_bytes += fill - cfg.fifo_capacity
        fill = cfg.fifo_capacity
    state.fifo_fill = fill
    if fill > state.max_fifo_fill:
        state.max_fifo_fill = fill
    state.clock = t
    return state


def ddr_has_room(state: TransferState, cfg: DatapathConfig) -> bool:
    return state.ddr_backlog + cfg.block_bytes <= cfg.ddr_capacity


def can_write_block(state: TransferState, cfg: DatapathConfig) -> bool:
    return state.fifo_fill >= cfg.block_bytes - BYTE_TOL and ddr_has_room(state, cfg)


def can_read_frame(state: TransferState, cfg: DatapathConfig, headroom: bool = True) -> bool:
    if state.ddr_backlog < cfg.frame_bytes - BYTE_TOL or state.pcie_busy:
        return False
    if headroom:
        # start only right after a block has landed, when the FIFO is nearly empty
        return state.fifo_fill <= cfg.ingest_rate * cfg.block_time + BYTE_TOL
    return True


def _finish_write(state, cfg):
    state.fifo_fill -= cfg.block_bytes
    state.ddr_write_addr = (state.ddr_write_addr + cfg.block_bytes) % cfg.ddr_capacity
    state.ddr_backlog += cfg.block_bytes
    if state.ddr_backlog > state.max_ddr_backlog:
        state.max_ddr_backlog = state.ddr_backlog


def _finish_read(state, cfg, latency):
    state.ddr_read_addr = (state.ddr_read_addr + cfg.frame_bytes) % cfg.ddr_capacity
    state.ddr_backlog -= cfg.frame_bytes
    state.pcie_fill += cfg.frame_bytes
    state.pcie_busy = True
    state.pcie_latency = latency


def step_write_block(state: TransferState, cfg: DatapathConfig) -> TransferState:
    """Move one block from the FIFO into DDR, in place.

    No-op when less than a block is buffered or DDR is full (the FIFO then
    keeps filling and overflows into ``lost_bytes`` as time advances).
    """
    if not can_write_block(state, cfg):
        return state
    advance(state, cfg, state.clock + cfg.block_time)
    _finish_write(state, cfg)
    return state


def step_read_frame(state: TransferState, cfg: DatapathConfig, rng) -> TransferState:
    """Copy one frame from DDR into the PCIE RAM, in place.

    The FIFO absorbs the input for the whole copy. The host read duration
    for this frame is drawn now and kept in ``pcie_latency``. No-op while
    less than a frame is in DDR or the PCIE RAM is occupied.
    """
    if not can_read_frame(state, cfg, headroom=False):
        return state
    latency = sample_read_latency(cfg.read_latency, rng)
    advance(state, cfg, state.clock + cfg.frame_time)
    _finish_read(state, cfg, latency)
    return state


def plan_catch_up(state: TransferState, cfg: DatapathConfig) -> int:
    """Back-to-back frame reads needed to bring the backlog to one frame."""
    if state.ddr_backlog <= cfg.catch_up_threshold * cfg.frame_bytes:
        return 0
    return max(0, math.ceil((state.ddr_backlog - cfg.frame_bytes) / cfg.frame_bytes - 1e-12))


def step_catch_up(state: TransferState, cfg: DatapathConfig) -> TransferState:
    """Enter catch-up mode above the threshold and leave it once the
    backlog is down to one frame, in place."""
    reads = plan_catch_up(state, cfg)
    if reads:
        state.catch_up = True
        state.catch_up_reads = reads
    elif state.ddr_backlog <= cfg.frame_bytes:
        state.catch_up = False
        state.catch_up_reads = 0
    return state


@dataclass
class SimulationReport:
    duration: float
    seed: int
    produced_bytes: float
    delivered_bytes: float
    delivered_frames: int
    lost_bytes: float
    max_fifo_fill: float
    max_ddr_backlog: float
    final_fifo_fill: float
    final_ddr_backlog: float
    final_pcie_fill: float
    max_conservation_error: float
    conservation_ok: bool
    n_events: int
    config_windows: int
    host_reads: int
    catch_up_reads: int
    max_read_latency: float
    reads_over_knee: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class TransferSimulator:
    """Event-driven simulation; deterministic for a given config and seed."""

    def __init__(self, cfg: DatapathConfig, trace: bool = False, check_invariants: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.state = TransferState()
        self.trace = [] if trace else None
        self.check_invariants = check_invariants
        self._heap = []
        self._seq = 0
        self._ddr_mode = "idle"
        self._fifo_token = 0
        self._ipc_mode = "config"
        self._stalls = sorted(cfg.stalls)
        self.max_conservation_error = 0.0
        self.n_events = 0
        self.config_windows = 0
        self.host_reads = 0
        self.catch_up_reads = 0
        self.max_read_latency = 0.0
        self.reads_over_knee = 0

    def _push(self, t, kind, token=0):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, token))

    def _record(self, event):
        s = self.state
        self.trace.append((s.clock, event, s.fifo_fill, s.ddr_backlog, s.pcie_fill,
                           s.ddr_write_addr, s.ddr_read_addr, s.lost_bytes, s.delivered_bytes))

    def _schedule_ddr(self):
        if self._ddr_mode != "idle":
            return
        s, cfg = self.state, self.cfg
        if can_read_frame(s, cfg):
            self._start_read()
        elif can_write_block(s, cfg):
            self._ddr_mode = "write"
            self._push(s.clock + cfg.block_time, "ddr_done")
        elif can_read_frame(s, cfg, headroom=False) and not ddr_has_room(s, cfg):
            # DDR full: only a read can make progress
            self._start_read()
        elif s.fifo_fill < cfg.block_bytes - BYTE_TOL and cfg.ingest_rate > 0:
            self._fifo_token += 1
            wait = (cfg.block_bytes - s.fifo_fill) / cfg.ingest_rate
            self._push(s.clock + wait, "fifo_ready", self._fifo_token)

    def _start_read(self):
        self._ddr_mode = "read"
        self._push(self.state.clock + self.cfg.frame_time, "ddr_done")

    def _start_host_read(self):
        s = self.state
        latency = s.pcie_latency
        if self._stalls and self._stalls[0][0] <= s.clock:
            latency = float(self._stalls.pop(0)[1])
        self._ipc_mode = "reading"
        self.host_reads += 1
        if s.catch_up:
            self.catch_up_reads += 1
        self.max_read_latency = max(self.max_read_latency, latency)
        if latency > self.cfg.read_latency.knee:
            self.reads_over_knee += 1
        self._push(s.clock + latency, "ipc_done")

    def _start_config(self):
        self._ipc_mode = "config"
        self.config_windows += 1
        self._push(self.state.clock + self.cfg.config_time, "ipc_done")

    def _on_ddr_done(self):
        s, cfg = self.state, self.cfg
        if self._ddr_mode == "write":
            _finish_write(s, cfg)
        else:
            _finish_read(s, cfg, sample_read_latency(cfg.read_latency, self.rng))
            if self._ipc_mode == "waiting":
                self._start_host_read()
        self._ddr_mode = "idle"

    def _on_ipc_done(self):
        s, cfg = self.state, self.cfg
        if self._ipc_mode == "config":
            if s.pcie_busy:
                self._start_host_read()
            else:
                self._ipc_mode = "waiting"
            return
        # host read finished: PCIE RAM drained to host memory
        s.delivered_bytes += s.pcie_fill
        s.pcie_fill = 0.0
        s.pcie_busy = False
        s.delivered_frames += 1
        step_catch_up(s, cfg)
        if s.catch_up:
            self._ipc_mode = "waiting"
        else:
            self._start_config()

    def run(self, duration: float) -> SimulationReport:
        s, cfg = self.state, self.cfg
        self._start_config()
        self._schedule_ddr()
        self._push(duration, "end")
        trace = self.trace
        check = self.check_invariants
        heap = self._heap
        while heap:
            t, _, kind, token = heapq.heappop(heap)
            if kind == "fifo_ready" and token != self._fifo_token:
                continue
            advance(s, cfg, t)
            self.n_events += 1
            if kind == "end":
                if trace is not None:
                    self._record("end")
                break
            if kind == "ddr_done":
                mode = self._ddr_mode
                self._on_ddr_done()
                event = "block_written" if mode == "write" else "frame_read"
            elif kind == "ipc_done":
                event = "config_done" if self._ipc_mode == "config" else "host_read_done"
                self._on_ipc_done()
            else:
                event = "fifo_ready"
            self._schedule_ddr()
            if check:
                err = abs(s.conservation_error())
                if err > self.max_conservation_error:
                    self.max_conservation_error = err
                if s.ddr_backlog < -1e-6 or s.ddr_backlog > cfg.ddr_capacity + 1e-6:
                    raise AssertionError(f"DDR backlog out of range at t={t}")
            if trace is not None:
                self._record(event)
        return self.report(duration)

    def report(self, duration: float) -> SimulationReport:
        s = self.state
        tol = 1e-9 * max(1.0, s.produced_bytes)
        return SimulationReport(
            duration=duration,
            seed=self.cfg.seed,
            produced_bytes=s.produced_bytes,
            delivered_bytes=s.delivered_bytes,
            delivered_frames=s.delivered_frames,
            lost_bytes=s.lost_bytes,
            max_fifo_fill=s.max_fifo_fill,
            max_ddr_backlog=s.max_ddr_backlog,
            final_fifo_fill=s.fifo_fill,
            final_ddr_backlog=s.ddr_backlog,
            final_pcie_fill=s.pcie_fill,
            max_conservation_error=self.max_conservation_error,
            conservation_ok=self.max_conservation_error <= tol and abs(s.conservation_error()) <= tol,
            n_events=self.n_events,
            config_windows=self.config_windows,
            host_reads=self.host_reads,
            catch_up_reads=self.catch_up_reads,
            max_read_latency=self.max_read_latency,
            reads_over_knee=self.reads_over_knee,
        )

    def write_trace_csv(self, path):
        if self.trace is None:
            raise ValueError("simulator was created without trace=True")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "event", "fifo_fill", "ddr_backlog", "pcie_fill",
                        "ddr_write_addr", "ddr_read_addr", "lost_bytes", "delivered_bytes"])
            w.writerows(self.trace)


def run_simulation(cfg: DatapathConfig, duration: float, trace: bool = False,
                   check_invariants: bool = True) -> SimulationReport:
    return TransferSimulator(cfg, trace=trace, check_invariants=check_invariants).run(duration)


def survivable_stall_search(cfg: DatapathConfig, lo: float = 0.0, hi: float | None = None,
                            tol: float = 0.05, start: float = 0.5) -> float:
    """Longest injected host stall with no loss, by bisection over simulations.

    The stall replaces the first host read starting after ``start`` seconds.
    """
    if hi is None:
        hi = 1.2 * max_survivable_stall(cfg)

    def survives(stall):
        c = cfg.replace(stalls=((start, stall),))
        return run_simulation(c, start + stall + 0.2, check_invariants=False).lost_bytes == 0

    if not survives(lo):
        return 0.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if survives(mid):
            lo = mid
        else:
            hi = mid
    return lo
