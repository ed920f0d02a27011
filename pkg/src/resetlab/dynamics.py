"""State propagation under time-dependent, optionally non-Hermitian H.

Resonator loss at rate kappa (GHz) enters as a non-Hermitian term
-i*(2*pi*kappa/2)*n on every dissipative mode, which reproduces the no-jump
evolution of the master equation: the norm of the state decays and the lost
norm is the probability that a photon has been emitted.  Emitted-norm flux is
attributed, per step, to the basis state the system collapses into after the
emission (the source state with one resonator quantum removed), so reports
can count an emitted photon as the qubit/coupler having reached ground.

Integrator: the full time-dependent diagonal (frame detunings, Kerr terms and
pulse offsets) is removed exactly via its analytic time integral, leaving an
interaction-picture Hamiltonian whose only time dependence is a phase factor
per hopping entry.  Steps use the fourth-order commutator-free Magnus scheme
(two Gauss nodes, two matrix exponentials applied by Taylor series; the step
generator has tiny norm, so a handful of matrix-vector products is exact to
machine precision).  For a time-independent resonant block the scheme is the
exact matrix exponential at any step size.  Evolution is restricted to the
excitation sectors populated by the initial state, which is exact because H
conserves the total excitation number and the loss term is diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError
from .model import BasisState, SystemModel
from .pulses import Schedule, ScheduleLike, as_schedule

__all__ = [
    "QuantumState",
    "Trajectory",
    "SpectrumCurve",
    "CrossingResult",
    "propagate",
    "propagate_batch",
    "populations",
    "marginal",
    "spectrum_scan",
    "avoided_crossing",
    "trajectory_to_csv",
    "spectrum_to_csv",
]

_GAUSS_C1 = 0.5 - math.sqrt(3.0) / 6.0
_GAUSS_C2 = 0.5 + math.sqrt(3.0) / 6.0
_CF4_X = 0.25 - math.sqrt(3.0) / 6.0
_CF4_Y = 0.25 + math.sqrt(3.0) / 6.0


@dataclass
class QuantumState:
    """Complex amplitude vector over the full product basis of a system."""

    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 1:
            raise ConfigError("state amplitudes must be a 1-D vector")

    @classmethod
    def basis(cls, system: SystemModel, occupations: Sequence[int] | BasisState) -> "QuantumState":
        amp = np.zeros(system.dim, dtype=complex)
        amp[system.basis_index(occupations)] = 1.0
        return cls(amp)

    @classmethod
    def superposition(
        cls, system: SystemModel, terms: Mapping[tuple[int, ...], complex]
    ) -> "QuantumState":
        """Normalized superposition from a map occupation-tuple -> amplitude."""
        amp = np.zeros(system.dim, dtype=complex)
        for occ, a in terms.items():
            amp[system.basis_index(occ)] = a
        n = np.linalg.norm(amp)
        if n == 0:
            raise ConfigError("superposition has zero norm")
        return cls(amp / n)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]


def populations(state: QuantumState, system: SystemModel, cutoff: float = 1e-14) -> dict:
    """Map occupation tuple -> |amplitude|^2, omitting entries below cutoff."""
    if state.dim != system.dim:
        raise ConfigError(f"state dimension {state.dim} does not match basis size {system.dim}")
    probs = np.abs(state.amplitudes) ** 2
    out = {}
    for i in np.flatnonzero(probs > cutoff):
        out[tuple(int(n) for n in system.occupations[i])] = float(probs[i])
    return out


def marginal(state: QuantumState, system: SystemModel, mode: str) -> np.ndarray:
    """Occupation distribution of one mode, summed over all others."""
    if state.dim != system.dim:
        raise ConfigError(f"state dimension {state.dim} does not match basis size {system.dim}")
    k = system.mode_position(mode)
    probs = np.abs(state.amplitudes) ** 2
    out = np.zeros(system.mode(mode).levels)
    np.add.at(out, system.occupations[:, k], probs)
    return out


@dataclass
class Trajectory:
    """Recorded populations, norms and loss bookkeeping of one propagation."""

    times: np.ndarray
    active_indices: np.ndarray
    basis: list[BasisState]
    populations: np.ndarray  # (n_times, n_active)
    norms: np.ndarray  # total norm (not squared) per recorded time
    final_state: QuantumState
    loss: np.ndarray | None = None  # emitted norm attributed per full-basis state
    step: float = 0.0

    @property
    def lost_norm(self) -> float:
        """Total emitted probability = 1 - ||psi(T)||^2 for a normalized start."""
        return float(self.loss.sum()) if self.loss is not None else 0.0

    def population_of(self, system: SystemModel, occupations: Sequence[int]) -> np.ndarray:
        idx = system.basis_index(occupations)
        hits = np.flatnonzero(self.active_indices == idx)
        if len(hits) == 0:
            return np.zeros_like(self.times)
        return self.populations[:, hits[0]]

    def final_populations(self) -> np.ndarray:
        return self.populations[-1]


# ---------------------------------------------------------------------------
# propagation engine


class _Engine:
    """Precomputed interaction-picture structure for one (system, schedule)."""

    def __init__(
        self,
        system: SystemModel,
        schedule: Schedule,
        dissipators: Mapping[str, float],
        active_idx: np.ndarray,
    ):
        self.system = system
        self.schedule = schedule
        self.active_idx = active_idx
        self.n = len(active_idx)

        amap = np.full(system.dim, -1, dtype=np.int64)
        amap[active_idx] = np.arange(self.n)
        occ = system.occupations

        idle = {name: system.mode(name).frequency for name in system.mode_names}
        self.static_diag = system.diagonal(idle)  # rad/ns, full basis

        # amplitude decay rate per basis state (1/ns): sum_r pi*kappa_r*n_r
        kdiag_full = np.zeros(system.dim)
        self.res_modes = []
        for name, kappa in dissipators.items():
            mode = system.mode(name)
            if mode.kind != "resonator":
                raise ConfigError(f"dissipator on non-resonator mode {name!r}")
            if kappa < 0:
                raise ConfigError(f"negative kappa for mode {name!r}")
            if kappa > 0:
                kdiag_full += math.pi * kappa * occ[:, system.mode_position(name)]
                self.res_modes.append((name, kappa))
        self.kdiag = kdiag_full[active_idx]
        self.dissipative = bool(self.res_modes)

        # loss attribution: target full-basis index per (active state, resonator)
        if self.dissipative:
            strides = np.array(
                [int(np.prod(system.dims[k + 1 :])) for k in range(len(system.dims))],
                dtype=np.int64,
            )
            tgt = []
            wgt = []
            for name, kappa in self.res_modes:
                k = system.mode_position(name)
                n_r = occ[active_idx, k]
                target = np.where(n_r > 0, active_idx - strides[k], -1)
                tgt.append(target)
                wgt.append(2.0 * math.pi * kappa * n_r)
            self.loss_targets = np.stack(tgt, axis=1)  # (n, n_res)
            self.loss_weights = np.stack(wgt, axis=1).astype(float)  # rad/ns * n_r
        else:
            self.loss_targets = None
            self.loss_weights = None

        # hopping entries restricted to the active subspace
        rows_l, cols_l, gval_l, class_l = [], [], [], []
        class_key_to_id: dict[tuple[int, float], int] = {}
        class_w: list[float] = []
        class_coupling: list[int] = []
        self.coupling_modes: list[tuple[str, str]] = []
        for c_idx, (dst, src, val, coupling) in enumerate(system.hopping_terms()):
            self.coupling_modes.append((coupling.mode_a, coupling.mode_b))
            keep = (amap[dst] >= 0) & (amap[src] >= 0)
            if not np.any(keep):
                continue
            d, s, v = dst[keep], src[keep], val[keep]
            w_entry = self.static_diag[d] - self.static_diag[s]
            for dd, ss, vv, ww in zip(amap[d], amap[s], v, w_entry):
                key = (c_idx, float(ww))
                cid = class_key_to_id.get(key)
                if cid is None:
                    cid = len(class_w)
                    class_key_to_id[key] = cid
                    class_w.append(float(ww))
                    class_coupling.append(c_idx)
                rows_l.append(int(dd))
                cols_l.append(int(ss))
                gval_l.append(float(vv))
                class_l.append(cid)

        self.rows = np.array(rows_l, dtype=np.int64)
        self.cols = np.array(cols_l, dtype=np.int64)
        self.gval = np.array(gval_l)
        self.class_id = np.array(class_l, dtype=np.int64)
        self.class_w = np.array(class_w)
        self.class_coupling = np.array(class_coupling, dtype=np.int64)
        self.n_classes = len(class_w)

        self.flat_up = self.rows * self.n + self.cols
        self.flat_dn = self.cols * self.n + self.rows
        self.diag_pos = np.arange(self.n, dtype=np.int64) * (self.n + 1)
        # distinct couplings produce distinct occupation moves, so positions
        # never collide; guard anyway and fall back to accumulation if needed
        self.unique_positions = len(np.unique(self.flat_up)) == len(self.flat_up)

        self.channels = [ch for ch in schedule.channels]
        self.channel_pos = {ch: k for k, ch in enumerate(self.channels)}
        self.diag_phase_occ = occ[active_idx][
            :, [system.mode_position(ch) for ch in self.channels]
        ].astype(float) if self.channels else None

    def class_phases(self, times: np.ndarray) -> np.ndarray:
        """exp(i * phase) per (time, class); phase = w*t + 2*pi*(I_a - I_b)."""
        if self.n_classes == 0:
            return np.zeros((len(times), 0), dtype=complex)
        integrals = {
            ch: 2.0 * math.pi * np.asarray(self.schedule.channel_integral(ch, times))
            for ch in self.channels
        }
        d_coupling = np.zeros((len(times), len(self.coupling_modes)))
        for c_idx, (a, b) in enumerate(self.coupling_modes):
            if a in self.channel_pos:
                d_coupling[:, c_idx] += integrals[a]
            if b in self.channel_pos:
                d_coupling[:, c_idx] -= integrals[b]
        phase = times[:, None] * self.class_w[None, :] + d_coupling[:, self.class_coupling]
        return np.exp(1j * phase)

    def scatter_factor(
        self, buf: np.ndarray, phases_a: np.ndarray, phases_b: np.ndarray, wa: float, wb: float, h: float
    ) -> np.ndarray:
        """Dense M = -i*h*(wa*H(t_a) + wb*H(t_b)) on the active subspace."""
        combo = self.gval * (wa * phases_a[self.class_id] + wb * phases_b[self.class_id])
        flat = buf.reshape(-1)
        if self.unique_positions:
            flat[self.flat_up] = -1j * h * combo
            flat[self.flat_dn] = -1j * h * np.conj(combo)
        else:  # rare index collision: accumulate
            buf[:] = 0
            np.add.at(flat, self.flat_up, -1j * h * combo)
            np.add.at(flat, self.flat_dn, -1j * h * np.conj(combo))
        flat[self.diag_pos] = -h * (wa + wb) * self.kdiag
        return buf

    def frame_phases(self, t: float) -> np.ndarray:
        """Accumulated diagonal phase Phi(t) per active state (rad)."""
        phi = self.static_diag[self.active_idx] * t
        if self.channels:
            ints = np.array(
                [2.0 * math.pi * float(self.schedule.channel_integral(ch, t)) for ch in self.channels]
            )
            phi = phi + self.diag_phase_occ @ ints
        return phi


def _taylor_apply(m: np.ndarray, psi: np.ndarray, max_terms: int = 30) -> np.ndarray:
    """exp(m) @ psi by Taylor series with scaling.

    For the usual small integration steps ||m|| << 1 and a handful of terms
    reach machine precision; large steps (legitimate for time-independent
    resonant blocks) are split into substeps of norm <= 1/2 to avoid
    cancellation.
    """
    norm = float(np.max(np.abs(m).sum(axis=1))) if m.size else 0.0
    n_sub = max(1, int(math.ceil(norm / 0.5)))
    if n_sub > 1:
        m = m / n_sub
    for _ in range(n_sub):
        acc = psi.copy()
        term = psi
        scale = np.max(np.abs(acc))
        for k in range(1, max_terms + 1):
            term = (m @ term) / k
            acc += term
            if np.max(np.abs(term)) <= 1e-16 * scale:
                break
        psi = acc
    return psi


def _active_indices(system: SystemModel, initial: QuantumState, tol: float = 1e-14) -> np.ndarray:
    totals = system.total_excitations()
    support = np.flatnonzero(np.abs(initial.amplitudes) > tol)
    if len(support) == 0:
        raise ConfigError("initial state has no support")
    sectors = np.unique(totals[support])
    return np.flatnonzero(np.isin(totals, sectors))


def propagate_batch(
    system: SystemModel,
    schedule: ScheduleLike,
    initials: Sequence[QuantumState],
    duration: float,
    dissipators: Mapping[str, float] | None = None,
    step: float = 0.002,
    record_stride: int | None = None,
) -> list[Trajectory]:
    """Propagate several initial states under one schedule, sharing setup.

    All states are evolved on the union of their excitation sectors; results
    are identical to propagating each state alone.
    """
    if step <= 0:
        raise ConfigError(f"step must be positive, got {step}")
    if duration < 0:
        raise ConfigError(f"duration must be >= 0, got {duration}")
    sched = as_schedule(schedule)
    for ch in sched.channels:
        system.mode(ch)  # raises for unknown channels
    if dissipators is None:
        dissipators = system.kappa_map()
    for st in initials:
        if st.dim != system.dim:
            raise ConfigError("initial state dimension does not match the system basis")
        if abs(st.norm - 1.0) > 1e-9:
            raise ConfigError(f"initial state must be normalized, got norm {st.norm}")

    joint = np.zeros(system.dim, dtype=complex)
    for st in initials:
        joint += np.abs(st.amplitudes)
    active = _active_indices(system, QuantumState(joint / max(np.linalg.norm(joint), 1.0)))
    eng = _Engine(system, sched, dissipators, active)
    n, batch = eng.n, len(initials)

    n_steps = max(1, int(math.ceil(duration / step - 1e-9))) if duration > 0 else 0
    if record_stride is None:
        record_stride = max(1, n_steps // 1000) if n_steps else 1

    psi = np.zeros((n, batch), dtype=complex)
    for j, st in enumerate(initials):
        psi[:, j] = st.amplitudes[active]

    rec_times = [0.0]
    rec_pops = [np.abs(psi.T) ** 2]
    loss = np.zeros((system.dim, batch)) if eng.dissipative else None

    buf = np.zeros((n, n), dtype=complex)
    chunk = 4096
    t_edges = np.minimum(np.arange(n_steps + 1) * step, duration) if n_steps else np.array([0.0])
    done = 0
    while done < n_steps:
        hi = min(done + chunk, n_steps)
        t0s = t_edges[done:hi]
        t1s = t_edges[done + 1 : hi + 1]
        hs = t1s - t0s
        nodes1 = t0s + _GAUSS_C1 * hs
        nodes2 = t0s + _GAUSS_C2 * hs
        ph1 = eng.class_phases(nodes1)
        ph2 = eng.class_phases(nodes2)
        for k in range(hi - done):
            h = hs[k]
            if h > 0:
                pop_before = np.abs(psi) ** 2 if eng.dissipative else None
                # right factor weights the earlier Gauss node more strongly
                m = eng.scatter_factor(buf, ph1[k], ph2[k], _CF4_Y, _CF4_X, h)
                psi = _taylor_apply(m, psi)
                m = eng.scatter_factor(buf, ph1[k], ph2[k], _CF4_X, _CF4_Y, h)
                psi = _taylor_apply(m, psi)
                if eng.dissipative:
                    pop_after = np.abs(psi) ** 2
                    lost = pop_before.sum(axis=0) - pop_after.sum(axis=0)
                    mid = 0.5 * (pop_before + pop_after)
                    w = eng.loss_weights[:, :, None] * mid[:, None, :]  # (n, n_res, b)
                    tot = w.sum(axis=(0, 1))
                    ok = (tot > 0) & (lost > 0)
                    if np.any(ok):
                        scale = np.where(ok, lost / np.where(tot > 0, tot, 1.0), 0.0)
                        w = w * scale[None, None, :]
                        for r in range(w.shape[1]):
                            tgt = eng.loss_targets[:, r]
                            valid = tgt >= 0
                            np.add.at(loss, tgt[valid], w[valid, r, :])
            step_index = done + k + 1
            if step_index % record_stride == 0 or step_index == n_steps:
                rec_times.append(t_edges[step_index])
                rec_pops.append(np.abs(psi.T) ** 2)
        done = hi

    times = np.array(rec_times)
    pops = np.stack(rec_pops, axis=0)  # (n_rec, batch, n)
    phases = np.exp(-1j * eng.frame_phases(duration))
    basis = [system.basis_state(int(i)) for i in active]

    out = []
    for j in range(batch):
        final = np.zeros(system.dim, dtype=complex)
        final[active] = phases * psi[:, j]
        out.append(
            Trajectory(
                times=times,
                active_indices=active.copy(),
                basis=basis,
                populations=pops[:, j, :],
                norms=np.sqrt(pops[:, j, :].sum(axis=1)),
                final_state=QuantumState(final),
                loss=loss[:, j].copy() if loss is not None else None,
                step=step,
            )
        )
    return out


def propagate(
    system: SystemModel,
    schedule: ScheduleLike,
    initial: QuantumState,
    duration: float,
    dissipators: Mapping[str, float] | None = None,
    step: float = 0.002,
    record_stride: int | None = None,
    check_step_convergence: bool = False,
    convergence_tol: float = 1e-8,
) -> Trajectory:
    """Evolve a state under a pulse schedule; see the module docstring.

    With ``check_step_convergence`` the propagation is repeated at half the
    step and a ConvergenceError is raised if any final population moves by
    more than ``convergence_tol``.
    """
    traj = propagate_batch(
        system, schedule, [initial], duration, dissipators, step, record_stride
    )[0]
    if check_step_convergence:
        half = propagate_batch(
            system, schedule, [initial], duration, dissipators, step / 2, record_stride
        )[0]
        delta = float(np.max(np.abs(traj.final_populations() - half.final_populations())))
        if delta > convergence_tol:
            raise ConvergenceError(
                f"step convergence failure: halving {step} ns changes a final "
                f"population by {delta:.3e} > {convergence_tol:.1e}"
            )
    return traj


# ---------------------------------------------------------------------------
# spectra


@dataclass
class SpectrumCurve:
    """Continuity-tracked eigenenergy traces versus coupler frequency."""

    coupler: str
    frequencies: np.ndarray  # scan axis, GHz
    energies: np.ndarray  # (points, n_traces), GHz, frame-restored
    labels: list[str]  # dominant basis label of each trace at the first point
    sector: int

    def trace(self, label: str) -> np.ndarray:
        try:
            return self.energies[:, self.labels.index(label)]
        except ValueError:
            raise ConfigError(f"no trace labelled {label!r}; have {self.labels}") from None


@dataclass
class CrossingResult:
    location_ghz: float
    gap_ghz: float
    at_boundary: bool


def spectrum_scan(
    system: SystemModel,
    coupler: str,
    frequency_range: tuple[float, float],
    points: int,
    sector: int,
) -> SpectrumCurve:
    """Diagonalize the N-excitation block along a coupler-frequency scan.

    Traces are matched between adjacent scan points by maximum overlap of the
    eigenvectors, so each column follows one physical state through avoided
    crossings.  Energies are reported as absolute linear frequencies (GHz),
    with the rotating-frame shift N*frame added back.
    """
    if points < 2:
        raise ConfigError(f"points must be >= 2, got {points}")
    lo, hi = frequency_range
    system.mode(coupler)
    idx = system.sector_indices(sector)
    if len(idx) == 0:
        raise ConfigError(f"sector {sector} is empty")
    freqs = np.linspace(lo, hi, points)
    n_traces = len(idx)
    energies = np.empty((points, n_traces))
    prev_vecs = None
    labels: list[str] = []
    from .pulses import _match_by_overlap

    base = {name: system.mode(name).frequency for name in system.tunable_modes}
    for k, f in enumerate(freqs):
        overrides = dict(base)
        overrides[coupler] = float(f)
        h = system.hamiltonian(overrides)
        block = h[np.ix_(idx, idx)]
        evals, vecs = np.linalg.eigh(block)
        if prev_vecs is not None:
            assignment = _match_by_overlap(np.abs(prev_vecs.conj().T @ vecs))
            vecs = vecs[:, assignment]
            evals = evals[assignment]
        else:
            seen: dict[str, int] = {}
            for col in range(n_traces):
                dom = int(np.argmax(np.abs(vecs[:, col]) ** 2))
                label = system.basis_state(int(idx[dom])).label()
                if label in seen:
                    seen[label] += 1
                    label = f"{label}#{seen[label]}"
                else:
                    seen[label] = 0
                labels.append(label)
        prev_vecs = vecs
        energies[k] = evals / (2.0 * math.pi) + sector * system.frame_ghz
    return SpectrumCurve(
        coupler=coupler, frequencies=freqs, energies=energies, labels=labels, sector=sector
    )


def avoided_crossing(curve: SpectrumCurve, pair: tuple[str, str] | tuple[int, int]) -> CrossingResult:
    """Location and size of the minimum gap between two traces.

    The discrete argmin is refined by fitting a parabola to gap^2, which is
    exact for an isolated two-level crossing.  A minimum at the scan boundary
    is flagged (the traces never approach inside the range).
    """
    cols = []
    for p in pair:
        cols.append(curve.labels.index(p) if isinstance(p, str) else int(p))
    gap = np.abs(curve.energies[:, cols[0]] - curve.energies[:, cols[1]])
    k = int(np.argmin(gap))
    f = curve.frequencies
    if k == 0 or k == len(f) - 1:
        return CrossingResult(location_ghz=float(f[k]), gap_ghz=float(gap[k]), at_boundary=True)
    x = f[k - 1 : k + 2]
    y = gap[k - 1 : k + 2] ** 2
    denom = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2])
    a = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / denom
    b = (x[2] ** 2 * (y[0] - y[1]) + x[1] ** 2 * (y[2] - y[0]) + x[0] ** 2 * (y[1] - y[2])) / denom
    if a <= 0:
        return CrossingResult(location_ghz=float(f[k]), gap_ghz=float(gap[k]), at_boundary=False)
    x_min = -b / (2 * a)
    c = y[0] - a * x[0] ** 2 - b * x[0]
    g2 = a * x_min**2 + b * x_min + c
    if not (x[0] <= x_min <= x[2]):
        x_min, g2 = f[k], gap[k] ** 2
    return CrossingResult(
        location_ghz=float(x_min), gap_ghz=float(math.sqrt(max(g2, 0.0))), at_boundary=False
    )


# ---------------------------------------------------------------------------
# exports


def trajectory_to_csv(
    traj: Trajectory,
    system: SystemModel,
    path: str | Path,
    states: Sequence[Sequence[int]] | None = None,
) -> Path:
    """Write (t_ns, tracked populations, norm) rows; defaults to all active states."""
    if states is None:
        cols = list(range(len(traj.basis)))
        names = [b.label() for b in traj.basis]
    else:
        cols, names = [], []
        for occ in states:
            idx = system.basis_index(occ)
            hits = np.flatnonzero(traj.active_indices == idx)
            if len(hits) == 0:
                raise ConfigError(f"state {tuple(occ)} not tracked in this trajectory")
            cols.append(int(hits[0]))
            names.append(BasisState(tuple(int(n) for n in occ)).label())
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t_ns," + ",".join(f"p{n}" for n in names) + ",norm\n")
        for k, t in enumerate(traj.times):
            row = [format(t, ".17g")]
            row += [format(traj.populations[k, c], ".17g") for c in cols]
            row.append(format(traj.norms[k], ".17g"))
            fh.write(",".join(row) + "\n")
    return path


def spectrum_to_csv(curve: SpectrumCurve, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("f_c_ghz," + ",".join(curve.labels) + "\n")
        for k, f in enumerate(curve.frequencies):
            row = [format(f, ".17g")] + [
                format(curve.energies[k, j], ".17g") for j in range(curve.energies.shape[1])
            ]
            fh.write(",".join(row) + "\n")
    return path
