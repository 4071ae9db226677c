"""Time-dependent inter-oscillator coupling k(t) and drive-frequency sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class Constant:
    k0: float = 0.0

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.k0)[()]


@dataclass(frozen=True)
class Sinusoid:
    """``k0 + amplitude * sin(drive_freq * t + phase)``."""

    k0: float = 0.0
    amplitude: float = 0.0
    drive_freq: float = 1.0
    phase: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return (self.k0 + self.amplitude * np.sin(self.drive_freq * t + self.phase))[()]


@dataclass(frozen=True)
class Piecewise:
    """Piecewise-constant coupling; segment ``i`` holds on ``[t_i, t_{i+1})``."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((float(t), float(k)) for t, k in self.segments)
        if not segs:
            raise ConfigurationError("needs at least one segment", "segments")
        if segs[0][0] != 0.0:
            raise ConfigurationError("first segment must start at t=0", "segments")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigurationError("segment starts must be strictly increasing", "segments")
        object.__setattr__(self, "segments", segs)

    def __call__(self, t):
        starts = [s for s, _ in self.segments]
        values = [k for _, k in self.segments]
        t = np.asarray(t, dtype=float)
        # right bisection makes each segment left-closed
        idx = np.searchsorted(starts, t, side="right") - 1
        return np.asarray(values)[np.clip(idx, 0, None)][()]


ControlSchedule = Union[Constant, Sinusoid, Piecewise]


def evaluate(schedule: ControlSchedule, t):
    """k(t) for ``t >= 0``."""
    if np.any(np.asarray(t) < 0):
        raise ConfigurationError("schedules are defined for t >= 0", "t")
    return schedule(t)


def schedule_from_dict(data: dict) -> ControlSchedule:
    kind = data.get("kind", "constant")
    params = {key: value for key, value in data.items() if key != "kind"}
    try:
        if kind == "constant":
            return Constant(**params)
        if kind == "sinusoid":
            return Sinusoid(**params)
        if kind == "piecewise":
            return Piecewise(tuple(tuple(seg) for seg in params["segments"]))
    except TypeError as exc:
        raise ConfigurationError(str(exc), "control") from None
    except KeyError:
        raise ConfigurationError("piecewise schedule needs 'segments'", "control") from None
    raise ConfigurationError(f"unknown schedule kind {kind!r}", "control.kind")


def schedule_to_dict(schedule: ControlSchedule) -> dict:
    if isinstance(schedule, Constant):
        return {"kind": "constant", "k0": schedule.k0}
    if isinstance(schedule, Sinusoid):
        return {
            "kind": "sinusoid",
            "k0": schedule.k0,
            "amplitude": schedule.amplitude,
            "drive_freq": schedule.drive_freq,
            "phase": schedule.phase,
        }
    return {"kind": "piecewise", "segments": [list(seg) for seg in schedule.segments]}


@dataclass(frozen=True)
class SweepSummary:
    drive_freq: float
    late_energy: float
    late_EN: float
    peak_EN: float


def late_window(times: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    """Mask of snapshots in the final ``fraction`` of the time window."""
    t0, t1 = times[0], times[-1]
    return times >= t1 - fraction * (t1 - t0) - 1e-12


def summarize(drive_freq: float, times, energy, EN) -> SweepSummary:
    mask = late_window(np.asarray(times))
    return SweepSummary(
        float(drive_freq),
        float(np.mean(np.asarray(energy)[mask])),
        float(np.mean(np.asarray(EN)[mask])),
        float(np.max(EN)),
    )


def sweep_drive_frequency(base_config, freq_list: Sequence[float], workers: int = 1) -> dict:
    """Run one simulation per drive frequency and summarise each.

    ``base_config`` is an :class:`~qbmsim.config.ExperimentConfig` whose
    control schedule is a :class:`Sinusoid`; only ``drive_freq`` changes
    between runs. The empirical resonance is ``resonance(result)``.
    """
    from .runner import observables_for_config, parallel_map

    if not isinstance(base_config.control, Sinusoid):
        raise ConfigurationError("frequency sweeps need a sinusoid schedule", "control.kind")
    freqs = [float(f) for f in freq_list]
    configs = [
        replace(base_config, control=replace(base_config.control, drive_freq=f)) for f in freqs
    ]
    series = parallel_map(observables_for_config, configs, workers)
    return {
        f: summarize(f, ts["t"], ts["energy"], ts["E_N"]) for f, ts in zip(freqs, series)
    }


def resonance(summaries: dict) -> float:
    """Drive frequency with the largest late-time energy."""
    return max(summaries.values(), key=lambda s: s.late_energy).drive_freq


def write_sweep_csv(summaries: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq", "late_energy", "late_EN", "peak_EN"])
        for f in sorted(summaries):
            s = summaries[f]
            writer.writerow([repr(s.drive_freq), repr(s.late_energy), repr(s.late_EN), repr(s.peak_EN)])
