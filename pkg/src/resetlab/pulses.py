"""Coupler-frequency pulse shapes, schedules, and adiabaticity scoring.

A pulse shape is a function ``offset(t)`` giving the frequency offset of a
coupler from its idle point, in GHz, for local time t in [0, duration]; the
offset is 0 outside.  Shapes also provide the exact running integral
``integral(t) = int_0^t offset``, which the propagator uses to evolve in the
interaction picture of the (time-dependent) diagonal without quadrature
error.

The adiabatic shape is the constant-adiabaticity trajectory for a two-level
crossing with coupling g: writing u(t) = beta*g*t + delta, the detuning is

    Delta(t) = -8 g u / sqrt(1 - 16 u^2),

which satisfies |dDelta/dt| = |beta| (Delta^2 + 4 g^2)^(3/2) / g with the
boundary values Delta(0) = f0 and Delta(tau) = f_tau fixing beta and delta.
Sign convention: Delta(t) = f_qubit - f_coupler(t), in GHz.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ConfigError, PulseError
from .model import SystemModel

__all__ = [
    "AdiabaticPulseParams",
    "adiabatic_detuning",
    "adiabatic_coefficients",
    "SquarePulse",
    "RampPulse",
    "AdiabaticPulse",
    "PulseSpec",
    "Schedule",
    "sample_pulse",
    "adiabaticity_metric",
    "load_schedule",
    "schedule_to_dict",
    "export_pulse_csv",
]

_SQRT_EPS = 1e-12


@dataclass(frozen=True)
class AdiabaticPulseParams:
    """Parameters of the constant-adiabaticity detuning trajectory.

    tau: duration in ns; f0 / f_tau: detuning at the start / end of the pulse
    in GHz; g: the coupling strength (GHz) that shapes the slow region around
    the crossing.
    """

    tau: float
    f0: float
    f_tau: float
    g: float

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.g <= 0:
            raise ConfigError(f"g must be positive, got {self.g}")
        if self.f0 == 0 and self.f_tau == 0:
            raise ConfigError("degenerate trajectory: f0 and f_tau cannot both be 0")


def adiabatic_coefficients(params: AdiabaticPulseParams) -> tuple[float, float]:
    """(beta, delta) fixing the trajectory through Delta(0)=f0, Delta(tau)=f_tau.

    delta = -f0 / (4 sqrt(f0^2 + 4 g^2)); beta makes u(tau) land on the value
    that maps to f_tau, i.e. beta*g*tau = -f_tau/(4 sqrt(f_tau^2+4g^2)) - delta.
    """
    g = params.g
    delta = -params.f0 / (4.0 * math.hypot(params.f0, 2.0 * g))
    u_tau = -params.f_tau / (4.0 * math.hypot(params.f_tau, 2.0 * g))
    beta = (u_tau - delta) / (g * params.tau)
    return beta, delta


def adiabatic_detuning(params: AdiabaticPulseParams, t):
    """Detuning Delta(t) in GHz along the constant-adiabaticity trajectory.

    Accepts scalar or array t in [0, tau].  Raises PulseError if t is outside
    the pulse or if the square-root argument 1 - 16 u^2 falls below 1e-12
    (the trajectory would diverge inside the window).
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > params.tau * (1 + 1e-12)):
        raise PulseError(f"t outside [0, {params.tau}] ns")
    beta, delta = adiabatic_coefficients(params)
    u = beta * params.g * t_arr + delta
    arg = 1.0 - 16.0 * u * u
    if np.any(arg <= _SQRT_EPS):
        raise PulseError(
            "invalid adiabatic pulse: trajectory diverges inside the window "
            f"(sqrt argument reached {float(np.min(arg)):.3e})"
        )
    out = -8.0 * params.g * u / np.sqrt(arg)
    return out if out.ndim else float(out)


def _adiabatic_integral(params: AdiabaticPulseParams, t):
    """Exact int_0^t Delta(t') dt' in GHz*ns."""
    beta, delta = adiabatic_coefficients(params)
    t_arr = np.asarray(t, dtype=float)
    if beta == 0.0:  # constant trajectory Delta == f0
        out = params.f0 * t_arr
        return out if out.ndim else float(out)
    u = beta * params.g * t_arr + delta
    arg = np.maximum(1.0 - 16.0 * u * u, _SQRT_EPS)
    arg0 = 1.0 - 16.0 * delta * delta
    out = (np.sqrt(arg) - math.sqrt(arg0)) / (2.0 * beta)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class SquarePulse:
    """Flat pulse of given amplitude (GHz) with optional cosine edges.

    With edge > 0 the offset rises as amplitude*(1-cos(pi t/edge))/2 over the
    first ``edge`` ns and falls symmetrically; edge = 0 gives hard edges.
    """

    amplitude: float
    duration: float
    edge: float = 0.0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if self.edge < 0 or 2 * self.edge > self.duration + 1e-12:
            raise ConfigError(f"edges ({self.edge} ns) do not fit in {self.duration} ns")

    def offset(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        if self.edge == 0.0:
            out = np.where(inside, self.amplitude, 0.0)
            return out if out.ndim else float(out)
        e, d, a = self.edge, self.duration, self.amplitude
        out = np.zeros_like(t)
        rise = inside & (t < e)
        fall = inside & (t > d - e)
        flat = inside & ~rise & ~fall
        out[rise] = a * 0.5 * (1 - np.cos(np.pi * t[rise] / e))
        out[flat] = a
        out[fall] = a * 0.5 * (1 - np.cos(np.pi * (d - t[fall]) / e))
        return out if out.ndim else float(out)

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.duration)
        a, e, d = self.amplitude, self.edge, self.duration
        if e == 0.0:
            out = a * tc
            return out if out.ndim else float(out)
        out = np.zeros_like(tc)
        rise = tc < e
        fall = tc > d - e
        flat = ~rise & ~fall
        tr = tc[rise]
        out[rise] = a * 0.5 * (tr - (e / np.pi) * np.sin(np.pi * tr / e))
        out[flat] = a * 0.5 * e + a * (tc[flat] - e)
        tf = tc[fall]
        out[fall] = (
            a * 0.5 * e
            + a * (d - 2 * e)
            + a * 0.5 * ((tf - d + e) + (e / np.pi) * np.sin(np.pi * (d - tf) / e))
        )
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class RampPulse:
    """Linear sweep of the offset from ``start`` to ``end`` GHz over ``duration`` ns."""

    start: float
    end: float
    duration: float

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")

    def offset(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        val = self.start + (self.end - self.start) * t / self.duration
        out = np.where(inside, val, 0.0)
        return out if out.ndim else float(out)

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.duration)
        out = self.start * tc + 0.5 * (self.end - self.start) * tc**2 / self.duration
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class AdiabaticPulse:
    """Constant-adiabaticity detuning trajectory placed on a coupler channel.

    When ``qubit_freq_ghz`` and ``idle_freq_ghz`` are set, the channel offset
    is (qubit_freq - Delta(t)) - idle_freq, i.e. the coupler is steered to the
    absolute frequency qubit_freq - Delta(t).  Without anchors the raw
    detuning Delta(t) is returned, which is the natural unit for shape-level
    analysis.
    """

    params: AdiabaticPulseParams
    qubit_freq_ghz: float | None = None
    idle_freq_ghz: float | None = None

    def __post_init__(self) -> None:
        # reject trajectories that diverge inside the window at build time
        adiabatic_detuning(self.params, np.linspace(0.0, self.params.tau, 257))

    @property
    def duration(self) -> float:
        return self.params.tau

    @property
    def _anchored(self) -> bool:
        if (self.qubit_freq_ghz is None) != (self.idle_freq_ghz is None):
            raise ConfigError("qubit_freq_ghz and idle_freq_ghz must be set together")
        return self.qubit_freq_ghz is not None

    def offset(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.params.tau)
        out = np.zeros_like(t)
        tc = np.where(inside, t, 0.0)
        delta_t = np.asarray(adiabatic_detuning(self.params, tc))
        if self._anchored:
            out = np.where(inside, self.qubit_freq_ghz - delta_t - self.idle_freq_ghz, 0.0)
        else:
            out = np.where(inside, delta_t, 0.0)
        return out if out.ndim else float(out)

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.params.tau)
        base = np.asarray(_adiabatic_integral(self.params, tc))
        if self._anchored:
            out = (self.qubit_freq_ghz - self.idle_freq_ghz) * tc - base
        else:
            out = base
        return out if out.ndim else float(out)


Shape = Union[SquarePulse, RampPulse, AdiabaticPulse]


def _shape_duration(shape: Shape) -> float:
    return shape.duration


# ---------------------------------------------------------------------------
# placed pulses and schedules


@dataclass(frozen=True)
class PulseSpec:
    """A shape placed on a coupler channel at an absolute start time."""

    channel: str
    shape: Shape
    start: float = 0.0

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ConfigError(f"start time must be >= 0, got {self.start}")

    @property
    def duration(self) -> float:
        return _shape_duration(self.shape)

    @property
    def end(self) -> float:
        return self.start + self.duration


class Schedule:
    """An ordered collection of placed pulses across coupler channels.

    Segments on one channel must not overlap in time.  Sampling a schedule
    sums channel-wise; outside all segments a channel reads 0 (coupler at its
    idle frequency).
    """

    def __init__(self, pulses: Iterable[PulseSpec] = ()):
        self.pulses: tuple[PulseSpec, ...] = tuple(pulses)
        self._by_channel: dict[str, list[PulseSpec]] = {}
        for p in self.pulses:
            self._by_channel.setdefault(p.channel, []).append(p)
        for channel, items in self._by_channel.items():
            items.sort(key=lambda p: p.start)
            for a, b in zip(items, items[1:]):
                if b.start < a.end - 1e-9:
                    raise ConfigError(
                        f"overlapping pulses on channel {channel!r}: "
                        f"[{a.start}, {a.end}) and [{b.start}, {b.end})"
                    )

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_channel))

    @property
    def duration(self) -> float:
        return max((p.end for p in self.pulses), default=0.0)

    def channel_offset(self, channel: str, t):
        """Summed offset of one channel at time(s) t, in GHz."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for p in self._by_channel.get(channel, ()):  # non-overlapping, so sum is safe
            out = out + np.asarray(p.shape.offset(t - p.start))
        return out if out.ndim else float(out)

    def channel_integral(self, channel: str, t):
        """Exact running integral int_0^t offset dt' for one channel, GHz*ns."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for p in self._by_channel.get(channel, ()):
            out = out + np.asarray(p.shape.integral(t - p.start))
        return out if out.ndim else float(out)

    def offsets(self, t) -> dict[str, float | np.ndarray]:
        return {ch: self.channel_offset(ch, t) for ch in self.channels}

    def shifted(self, dt: float) -> "Schedule":
        return Schedule(
            PulseSpec(p.channel, p.shape, p.start + dt) for p in self.pulses
        )

    def __add__(self, other: "Schedule") -> "Schedule":
        return Schedule(self.pulses + tuple(other.pulses))

    def __len__(self) -> int:
        return len(self.pulses)


ScheduleLike = Union[PulseSpec, Schedule, None]


def as_schedule(spec: ScheduleLike) -> Schedule:
    if spec is None:
        return Schedule()
    if isinstance(spec, PulseSpec):
        return Schedule([spec])
    return spec


def sample_pulse(spec: ScheduleLike, t) -> dict[str, float | np.ndarray]:
    """Frequency offset of every channel at time(s) t; 0 outside all segments."""
    return as_schedule(spec).offsets(t)


# ---------------------------------------------------------------------------
# adiabaticity metric


def adiabaticity_metric(
    system: SystemModel,
    spec: ScheduleLike,
    pair: tuple[int, int],
    samples: int,
    sector: int = 1,
    return_samples: bool = False,
):
    """Worst-case instantaneous adiabaticity ratio along a pulse.

    Samples the schedule at ``samples`` interior times, diagonalizes the
    sector block of H(t), tracks the two eigenstates of ``pair`` by
    maximum-overlap continuity, and returns

        max_t |<psi_n| dH/dt |psi_m>| / |E_n - E_m|^2

    with dH/dt from central finite differences of the assembled Hamiltonian.
    Values much smaller than 1 indicate adiabatic evolution.  Raises
    ConvergenceError when the tracked gap collapses below 1e-12 rad/ns.
    """
    from .errors import ConvergenceError

    if samples < 2:
        raise ConfigError(f"samples must be >= 2, got {samples}")
    schedule = as_schedule(spec)
    duration = schedule.duration
    if duration <= 0:
        return (0.0, np.zeros(samples)) if return_samples else 0.0
    idx = system.sector_indices(sector)
    if len(idx) < 2:
        raise ConfigError(f"sector {sector} has fewer than two states")
    i, j = pair
    if i == j or not (0 <= i < len(idx)) or not (0 <= j < len(idx)):
        raise ConfigError(f"invalid eigenstate pair {pair} for sector of size {len(idx)}")

    times = (np.arange(samples) + 0.5) * duration / samples
    dt_fd = duration * 1e-7

    def block(t: float) -> np.ndarray:
        freqs = {name: system.mode(name).frequency for name in system.tunable_modes}
        for ch in schedule.channels:
            freqs[ch] = system.mode(ch).frequency + float(schedule.channel_offset(ch, t))
        h = system.hamiltonian(freqs)
        return h[np.ix_(idx, idx)]

    prev_vecs = None
    values = np.empty(samples)
    for k, t in enumerate(times):
        h = block(t)
        evals, vecs = np.linalg.eigh(h)
        if prev_vecs is not None:
            overlap = np.abs(prev_vecs.conj().T @ vecs)
            assignment = _match_by_overlap(overlap)
            vecs = vecs[:, assignment]
            evals = evals[assignment]
        prev_vecs = vecs
        dh = (block(t + dt_fd) - block(t - dt_fd)) / (2 * dt_fd)
        vi, vj = vecs[:, i], vecs[:, j]
        gap = abs(evals[i] - evals[j])
        if gap < 1e-12:
            raise ConvergenceError(
                f"eigenvalue gap below 1e-12 rad/ns at t = {t:.6f} ns; metric undefined"
            )
        values[k] = abs(vi.conj() @ dh @ vj) / gap**2
    result = float(np.max(values))
    return (result, values) if return_samples else result


def _match_by_overlap(overlap: np.ndarray) -> np.ndarray:
    """Greedy column assignment maximizing |<prev_i|new_j>| per trace."""
    n = overlap.shape[0]
    assignment = np.full(n, -1, dtype=int)
    taken = np.zeros(n, dtype=bool)
    # visit rows in order of their best overlap so clean matches claim first
    order = np.argsort(-overlap.max(axis=1))
    for row in order:
        cols = np.argsort(-overlap[row])
        for c in cols:
            if not taken[c]:
                assignment[row] = c
                taken[c] = True
                break
    return assignment


# ---------------------------------------------------------------------------
# serialization


def _shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, SquarePulse):
        return {
            "shape": "square",
            "params": {
                "amplitude_ghz": shape.amplitude,
                "duration_ns": shape.duration,
                "edge_ns": shape.edge,
            },
        }
    if isinstance(shape, RampPulse):
        return {
            "shape": "ramp",
            "params": {
                "start_ghz": shape.start,
                "end_ghz": shape.end,
                "duration_ns": shape.duration,
            },
        }
    if isinstance(shape, AdiabaticPulse):
        d = {
            "shape": "adiabatic",
            "params": {
                "tau_ns": shape.params.tau,
                "f0_ghz": shape.params.f0,
                "f_tau_ghz": shape.params.f_tau,
                "g_ghz": shape.params.g,
            },
        }
        if shape.qubit_freq_ghz is not None:
            d["params"]["qubit_freq_ghz"] = shape.qubit_freq_ghz
            d["params"]["idle_freq_ghz"] = shape.idle_freq_ghz
        return d
    raise ConfigError(f"unknown shape {shape!r}")


def _shape_from_dict(entry: Mapping) -> Shape:
    kind = entry.get("shape")
    p = entry.get("params", {})
    try:
        if kind == "square":
            return SquarePulse(
                amplitude=float(p["amplitude_ghz"]),
                duration=float(p["duration_ns"]),
                edge=float(p.get("edge_ns", 0.0)),
            )
        if kind == "ramp":
            return RampPulse(
                start=float(p["start_ghz"]),
                end=float(p["end_ghz"]),
                duration=float(p["duration_ns"]),
            )
        if kind == "adiabatic":
            return AdiabaticPulse(
                params=AdiabaticPulseParams(
                    tau=float(p["tau_ns"]),
                    f0=float(p["f0_ghz"]),
                    f_tau=float(p["f_tau_ghz"]),
                    g=float(p["g_ghz"]),
                ),
                qubit_freq_ghz=(
                    float(p["qubit_freq_ghz"]) if "qubit_freq_ghz" in p else None
                ),
                idle_freq_ghz=(
                    float(p["idle_freq_ghz"]) if "idle_freq_ghz" in p else None
                ),
            )
    except KeyError as exc:
        raise ConfigError(f"{kind} pulse missing parameter {exc}") from None
    raise ConfigError(f"unknown pulse shape {kind!r}")


def schedule_to_dict(schedule: Schedule) -> list[dict]:
    out = []
    for p in schedule.pulses:
        d = {"channel": p.channel, "start_ns": p.start}
        d.update(_shape_to_dict(p.shape))
        out.append(d)
    return out


def load_schedule(source: str | Path | Sequence[Mapping]) -> Schedule:
    """Load a pulse schedule from a JSON file path or a parsed list."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"schedule file not found: {path}")
        try:
            entries = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse {path} at line {exc.lineno}: {exc.msg}") from None
    else:
        entries = source
    pulses = [
        PulseSpec(
            channel=e["channel"],
            shape=_shape_from_dict(e),
            start=float(e.get("start_ns", 0.0)),
        )
        for e in entries
    ]
    return Schedule(pulses)


def export_pulse_csv(spec: ScheduleLike, path: str | Path, rate_ghz: float = 10.0) -> Path:
    """Write (t_ns, offset per channel) samples of a schedule to CSV."""
    schedule = as_schedule(spec)
    duration = schedule.duration
    n = max(2, int(round(duration * rate_ghz)) + 1)
    times = np.linspace(0.0, duration, n)
    channels = schedule.channels
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t_ns," + ",".join(f"{ch}_offset_ghz" for ch in channels) + "\n")
        cols = [np.asarray(schedule.channel_offset(ch, times)) for ch in channels]
        for k, t in enumerate(times):
            row = [format(t, ".17g")] + [format(c[k], ".17g") for c in cols]
            fh.write(",".join(row) + "\n")
    return path
