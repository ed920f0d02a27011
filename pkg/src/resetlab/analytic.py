"""Closed-form results used as oracles for the numerics and for design estimates.

All frequency arguments are linear frequencies in GHz unless a parameter set
says otherwise; times are in ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError

__all__ = [
    "DampingRegime",
    "classify_damping",
    "LzParams",
    "rabi_population",
    "damped_coupler_population",
    "fastest_decay_ratio",
    "decay_rate_scan",
    "threshold_crossing_time",
    "lz_transition_probability",
    "TotalResetTime",
    "total_reset_time",
    "CouplerBudget",
    "surface_code_coupler_budget",
]


@dataclass(frozen=True)
class DampingRegime:
    """Damping classification of the resonant coupler-resonator swap.

    The discriminant alpha_d = kappa^2 - 4*g_cr^2 (angular^2 when kappa and
    g_cr are angular rates; the sign and the ratio kappa/g_cr do not depend on
    the convention).  Classification follows the kappa = 2*g_cr critical-point
    convention.  Note that the exact resonant two-level solution switches from
    oscillatory to monotonic decay at kappa = 4*g_cr; see
    :func:`damped_coupler_population`.
    """

    kappa: float
    g_cr: float
    tolerance: float = 1e-9

    @property
    def discriminant(self) -> float:
        return self.kappa**2 - 4.0 * self.g_cr**2

    @property
    def classification(self) -> str:
        if abs(self.kappa - 2.0 * self.g_cr) <= self.tolerance * max(self.kappa, 2 * self.g_cr):
            return "critical"
        return "under-damped" if self.discriminant < 0 else "over-damped"


def classify_damping(g_cr: float, kappa: float, tolerance: float = 1e-9) -> DampingRegime:
    if g_cr <= 0:
        raise ConfigError(f"g_cr must be positive, got {g_cr}")
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    return DampingRegime(kappa=kappa, g_cr=g_cr, tolerance=tolerance)


def rabi_population(g: float, t) -> tuple:
    """Resonant two-level swap populations (P_qubit, P_coupler) at time t.

    P_qubit = cos^2(2*pi*g*t); full transfer at t = 1/(4g).
    """
    if g <= 0:
        raise ConfigError(f"g must be positive, got {g}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigError("t must be >= 0")
    pq = np.cos(2.0 * np.pi * g * t_arr) ** 2
    pc = np.sin(2.0 * np.pi * g * t_arr) ** 2
    if pq.ndim == 0:
        return float(pq), float(pc)
    return pq, pc


def damped_coupler_population(g_cr: float, kappa: float, t):
    """|psi_c(t)|^2 for the resonant lossy coupler-resonator two-level system.

    Solves i d/dt (psi_c, psi_r) = H (psi_c, psi_r) with
    H = 2*pi*[[0, g_cr], [g_cr, -i*kappa/2]] and psi_c(0) = 1, psi_r(0) = 0.
    Eliminating psi_r gives psi_c'' + (K/2) psi_c' + G^2 psi_c = 0 with
    G = 2*pi*g_cr, K = 2*pi*kappa, hence with Gamma = K/4 and
    omega = sqrt(G^2 - Gamma^2) (complex when over-damped):

        psi_c(t) = exp(-Gamma t) * (cos(omega t) + Gamma t * sinc(omega t)).

    The expression is analytic in kappa, so it is continuous through both the
    conventional critical point kappa = 2*g_cr and the true oscillatory-to-
    monotonic boundary kappa = 4*g_cr, where omega -> 0.
    """
    if g_cr <= 0:
        raise ConfigError(f"g_cr must be positive, got {g_cr}")
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigError("t must be >= 0")
    big_g = 2.0 * math.pi * g_cr
    gamma = 2.0 * math.pi * kappa / 4.0
    omega = np.sqrt(complex(big_g**2 - gamma**2))
    x = omega * t_arr
    small = np.abs(x) < 1e-8
    sinc = np.where(small, 1.0 - x**2 / 6.0, np.sin(np.where(small, 1.0, x)) / np.where(small, 1.0, x))
    psi = np.exp(-gamma * t_arr) * (np.cos(x) + gamma * t_arr * sinc)
    out = np.real(psi) ** 2  # psi is real; any imaginary part is roundoff
    return out if out.ndim else float(out)


def fastest_decay_ratio() -> float:
    """The quoted optimum kappa/g_cr ratio for fastest reset: 2.

    The companion :func:`decay_rate_scan` measures the asymptotic decay rate
    of the exact solution directly; see the decisions record for how the two
    relate.
    """
    return 2.0


def _tail_envelope_rate(g_cr: float, kappa: float, n_samples: int = 4001) -> float:
    """Asymptotic decay rate (1/ns) of |psi_c|^2, from its tail envelope.

    Samples t in [0, 20/g_cr], takes the local maxima of |psi_c|^2 over the
    tail half of the window (all points if the tail is monotonic) and fits a
    line to log |psi_c|^2: the slope magnitude is the population decay rate.
    """
    t_max = 20.0 / g_cr
    t = np.linspace(0.0, t_max, n_samples)
    p = np.asarray(damped_coupler_population(g_cr, kappa, t))
    lo = n_samples // 2
    tt, pp = t[lo:], p[lo:]
    interior = (pp[1:-1] >= pp[:-2]) & (pp[1:-1] >= pp[2:])
    peaks = np.flatnonzero(interior) + 1
    if len(peaks) >= 3:
        tt, pp = tt[peaks], pp[peaks]
    keep = pp > 1e-280
    tt, pp = tt[keep], pp[keep]
    if len(tt) < 2:
        return float("inf")  # decayed below representable range: extremely fast
    slope = np.polyfit(tt, np.log(pp), 1)[0]
    return float(-slope)


def decay_rate_scan(
    g_cr: float,
    ratios=None,
    points: int = 36,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Asymptotic reset rate of |psi_c|^2 over a kappa/g_cr grid.

    Returns (ratios, rates in 1/ns, ratio at the argmax).  The default grid
    spans kappa/g_cr in [0.5, 4] with ``points`` points.
    """
    if g_cr <= 0:
        raise ConfigError(f"g_cr must be positive, got {g_cr}")
    if ratios is None:
        ratios = np.linspace(0.5, 4.0, points)
    else:
        ratios = np.asarray(ratios, dtype=float)
    rates = np.array([_tail_envelope_rate(g_cr, r * g_cr) for r in ratios])
    finite = np.where(np.isfinite(rates), rates, -np.inf)
    return ratios, rates, float(ratios[int(np.argmax(finite))])


def threshold_crossing_time(
    g_cr: float, kappa: float, threshold: float = 1e-3, t_max: float | None = None
) -> float:
    """Earliest time after which |psi_c(t)|^2 stays below ``threshold``."""
    if not 0 < threshold < 1:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    if t_max is None:
        t_max = 60.0 / g_cr
    t = np.linspace(0.0, t_max, 60001)
    p = np.asarray(damped_coupler_population(g_cr, kappa, t))
    above = np.flatnonzero(p >= threshold)
    if len(above) == 0:
        return 0.0
    if above[-1] == len(t) - 1:
        raise ConfigError(f"population does not stay below {threshold} within {t_max} ns")
    return float(t[above[-1] + 1])


@dataclass(frozen=True)
class LzParams:
    """Linear-sweep crossing parameters in angular units.

    g: coupling in rad/ns; alpha: sweep rate of the diabatic energy
    difference, rad/ns^2.
    """

    g: float
    alpha: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.g < 0:
            raise ConfigError(f"g must be >= 0, got {self.g}")


def lz_transition_probability(params: LzParams) -> float:
    """Probability exp(-2*pi*g^2/alpha) that the state keeps its diabatic branch."""
    return float(math.exp(-2.0 * math.pi * params.g**2 / params.alpha))


class TotalResetTime(NamedTuple):
    time_ns: float
    convention: str


def total_reset_time(
    omega_r: float, omega_q: float, kappa: float, convention: str = "angular"
) -> TotalResetTime:
    """Total reset time 1/Omega_R + 1/Omega_Q + 1/kappa for design estimates.

    Inputs are quoted as linear frequencies in GHz (the X/2*pi values).  With
    ``convention="angular"`` the reciprocals are taken of the angular rates,
    giving 1/(2*pi*X) ns per term; ``"cyclic"`` takes 1/X ns per term.  The
    convention used is echoed in the result.
    """
    for name, v in (("omega_r", omega_r), ("omega_q", omega_q), ("kappa", kappa)):
        if v <= 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    if convention == "angular":
        t = sum(1.0 / (2.0 * math.pi * v) for v in (omega_r, omega_q, kappa))
    elif convention == "cyclic":
        t = sum(1.0 / v for v in (omega_r, omega_q, kappa))
    else:
        raise ConfigError(f"convention must be 'angular' or 'cyclic', got {convention!r}")
    return TotalResetTime(time_ns=float(t), convention=convention)


class CouplerBudget(NamedTuple):
    data_qubits: int
    ancilla_qubits: int
    c_d: int
    c_r: int
    feasible: bool


def surface_code_coupler_budget(d: int) -> CouplerBudget:
    """Coupler counts for a distance-d surface-code patch.

    A d x d patch has d^2 data qubits, d^2 - 1 ancillas, c_d = 4d(d-1)
    couplers available, and needs c_r = 3d^2 - 1 couplers for reset plus
    leakage reduction; the scheme fits when c_d >= c_r.
    """
    if d < 2:
        raise ConfigError(f"code distance must be >= 2, got {d}")
    c_d = 4 * d * (d - 1)
    c_r = 3 * d * d - 1
    return CouplerBudget(
        data_qubits=d * d,
        ancilla_qubits=d * d - 1,
        c_d=c_d,
        c_r=c_r,
        feasible=c_d >= c_r,
    )
