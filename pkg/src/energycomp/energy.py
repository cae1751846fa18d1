"""Power sampling, trapezoidal energy integration, and PUE accounting.

A sampler produces (cpu_w, gpu_w, ram_w) readings; a PowerMonitor thread
appends them to an EnergyLedger while the trainer appends epoch marks.
After the session closes, integrate() turns the ledger into kilowatt-hours:
component energies, their sum (IT energy), and the PUE-scaled facility
energy (default PUE 1.58).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConstantSampler",
    "EnergyLedger",
    "EnergyReport",
    "PowerMonitor",
    "PowerSample",
    "ProcessProxySampler",
    "TraceSampler",
    "integrate",
    "mark_epoch",
]

log = logging.getLogger(__name__)

JOULES_PER_KWH = 3.6e6
DEFAULT_PUE = 1.58


@dataclass(frozen=True)
class PowerSample:
    t: float       # seconds since session start
    cpu_w: float
    gpu_w: float
    ram_w: float

    def __post_init__(self):
        if self.t < 0 or min(self.cpu_w, self.gpu_w, self.ram_w) < 0:
            raise ValueError(f"negative time or wattage in {self}")

    @property
    def total_w(self) -> float:
        return self.cpu_w + self.gpu_w + self.ram_w


class EnergyLedger:
    """Timestamped power samples plus epoch marks for one session.

    One sampler thread may append samples while the training thread appends
    epoch marks; both go through a lock, and snapshot() is read-consistent.
    """

    def __init__(self, pue: float = DEFAULT_PUE):
        if pue < 1:
            raise ValueError(f"pue must be >= 1, got {pue}")
        self.pue = pue
        self.samples: list[PowerSample] = []
        self.epoch_marks: list[tuple[int, float]] = []
        self._lock = threading.Lock()
        self._origin = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._origin

    def append(self, sample: PowerSample):
        with self._lock:
            if self.samples and sample.t <= self.samples[-1].t:
                raise ValueError(
                    f"sample times must strictly increase: {sample.t} after "
                    f"{self.samples[-1].t}"
                )
            self.samples.append(sample)

    def add_mark(self, epoch: int, t: float):
        with self._lock:
            self.epoch_marks.append((epoch, t))

    def snapshot(self) -> tuple[list[PowerSample], list[tuple[int, float]]]:
        with self._lock:
            return list(self.samples), list(self.epoch_marks)


def mark_epoch(ledger: EnergyLedger, epoch: int, t: float | None = None):
    """Record the end of an epoch at time t (default: the ledger clock now)."""
    ledger.add_mark(epoch, ledger.now() if t is None else t)


@dataclass(frozen=True)
class EnergyReport:
    kwh_cpu: float
    kwh_gpu: float
    kwh_ram: float
    kwh_it: float                  # sum of the components
    kwh_dc: float                  # pue * kwh_it
    pue: float
    per_epoch_kwh: list[float] = field(default_factory=list)

    @classmethod
    def zero(cls, pue: float = DEFAULT_PUE) -> "EnergyReport":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, pue, [])


def _trapezoid(t: np.ndarray, p: np.ndarray) -> float:
    return float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(t)))


def _segment_joules(t: np.ndarray, p: np.ndarray, a: float, b: float) -> float:
    # Trapezoid over [a, b] with power linearly interpolated at the endpoints.
    if b <= a:
        return 0.0
    inner = (t > a) & (t < b)
    ts = np.concatenate(([a], t[inner], [b]))
    ps = np.concatenate(([np.interp(a, t, p)], p[inner], [np.interp(b, t, p)]))
    return _trapezoid(ts, ps)


def integrate(ledger: EnergyLedger) -> EnergyReport:
    """Trapezoidal integration of each power component into kWh.

    Per-epoch slices run between consecutive epoch marks; the first starts at
    the first sample and the last extends to the final sample, so the slices
    always tile the session and sum to kwh_it.
    """
    samples, marks = ledger.snapshot()
    if len(samples) < 2:
        raise ValueError(f"integration needs at least 2 samples, have {len(samples)}")
    t = np.array([s.t for s in samples], dtype=np.float64)
    cpu = np.array([s.cpu_w for s in samples], dtype=np.float64)
    gpu = np.array([s.gpu_w for s in samples], dtype=np.float64)
    ram = np.array([s.ram_w for s in samples], dtype=np.float64)

    kwh_cpu = _trapezoid(t, cpu) / JOULES_PER_KWH
    kwh_gpu = _trapezoid(t, gpu) / JOULES_PER_KWH
    kwh_ram = _trapezoid(t, ram) / JOULES_PER_KWH
    kwh_it = kwh_cpu + kwh_gpu + kwh_ram

    total = cpu + gpu + ram
    cuts = sorted(min(max(mt, t[0]), t[-1]) for _, mt in marks)
    bounds = [t[0]] + cuts[:-1] + [t[-1]] if cuts else [t[0], t[-1]]
    per_epoch = [
        _segment_joules(t, total, a, b) / JOULES_PER_KWH
        for a, b in zip(bounds[:-1], bounds[1:])
    ]

    return EnergyReport(
        kwh_cpu=kwh_cpu,
        kwh_gpu=kwh_gpu,
        kwh_ram=kwh_ram,
        kwh_it=kwh_it,
        kwh_dc=ledger.pue * kwh_it,
        pue=ledger.pue,
        per_epoch_kwh=per_epoch,
    )


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


class TraceExhausted(Exception):
    """Raised by a sampler once its scripted readings run out."""


class ConstantSampler:
    def __init__(self, cpu_w: float, gpu_w: float = 0.0, ram_w: float = 0.0):
        self.reading = (float(cpu_w), float(gpu_w), float(ram_w))

    def read_power(self) -> tuple[float, float, float]:
        return self.reading


class TraceSampler:
    """Replays the power columns of a trace file, one line per read.

    File format: newline-delimited ``t_seconds cpu_w gpu_w ram_w`` ASCII
    floats with strictly increasing t. Reading past the end raises
    TraceExhausted, which ends the sampling session with a warning.
    """

    def __init__(self, path):
        self.rows: list[tuple[float, float, float]] = []
        prev_t = -np.inf
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ValueError(
                        f"{path}:{line_no}: expected 't cpu gpu ram', got {line!r}"
                    )
                ts, cpu, gpu, ram = (float(p) for p in parts)
                if ts <= prev_t:
                    raise ValueError(f"{path}:{line_no}: trace times must strictly increase")
                prev_t = ts
                self.rows.append((cpu, gpu, ram))
        self._next = 0

    def read_power(self) -> tuple[float, float, float]:
        if self._next >= len(self.rows):
            raise TraceExhausted(f"trace exhausted after {len(self.rows)} readings")
        row = self.rows[self._next]
        self._next += 1
        return row


class ProcessProxySampler:
    """Estimates CPU draw as TDP times this process's share of total CPU
    capacity; GPU and RAM draws are fixed configured values."""

    def __init__(self, tdp_w: float, gpu_w: float = 0.0, ram_w: float = 0.0):
        import psutil

        self.tdp_w = float(tdp_w)
        self.gpu_w = float(gpu_w)
        self.ram_w = float(ram_w)
        self._proc = psutil.Process()
        self._ncpu = psutil.cpu_count() or 1
        self._proc.cpu_percent()  # prime; first call always reports 0

    def read_power(self) -> tuple[float, float, float]:
        share = min(self._proc.cpu_percent() / (100.0 * self._ncpu), 1.0)
        return (self.tdp_w * share, self.gpu_w, self.ram_w)


class PowerMonitor:
    """Background thread sampling power into a fresh ledger at a fixed cadence.

    start() takes an immediate first sample; stop() takes a final one, so a
    session always holds at least two samples and integrates cleanly.
    """

    def __init__(self, sampler, pue: float = DEFAULT_PUE, cadence_s: float = 1.0):
        if cadence_s <= 0:
            raise ValueError("cadence_s must be > 0")
        self.sampler = sampler
        self.cadence_s = cadence_s
        self.ledger = EnergyLedger(pue=pue)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._exhausted = False

    def _sample_once(self) -> bool:
        try:
            cpu, gpu, ram = self.sampler.read_power()
        except TraceExhausted as exc:
            if not self._exhausted:
                log.warning("power sampling ended early: %s", exc)
                self._exhausted = True
            return False
        t = self.ledger.now()
        if self.ledger.samples:
            t = max(t, self.ledger.samples[-1].t + 1e-9)
        self.ledger.append(PowerSample(t, cpu, gpu, ram))
        return True

    def _run(self):
        while not self._stop.wait(self.cadence_s):
            if not self._sample_once():
                return

    def start(self):
        if self._thread is not None:
            raise RuntimeError("monitor already started")
        self._stop.clear()
        self._sample_once()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self):
        if self._thread is None:
            return
        self._stop.set()
        self._thread.join()
        self._thread = None
        self._sample_once()
