"""Device model: mode parameters, basis construction, Hamiltonian assembly.

Unit conventions used throughout the package:

* all configuration and I/O frequencies are *linear* frequencies in GHz
  (the f in omega = 2*pi*f), including anharmonicities, couplings and
  resonator linewidths;
* times are in ns;
* assembled Hamiltonians are in angular units, rad/ns, with hbar = 1.

Every mode is modelled as a Kerr oscillator truncated to ``levels`` states:
``2*pi*(f - frame)*n + 2*pi*(alpha/2)*n*(n-1)``, and couplings enter as
number-conserving hopping terms ``2*pi*g*(a^dag b + b^dag a)``.  A common
reference frame ``frame_ghz`` is subtracted from every mode frequency; since
the Hamiltonian conserves the total excitation number this shifts each
N-excitation block uniformly and leaves populations and intra-block gaps
unchanged.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "TransmonParams",
    "ResonatorParams",
    "Coupling",
    "BasisState",
    "SystemModel",
    "build_system",
    "basis_index",
    "assemble_hamiltonian",
    "excitation_block",
    "load_device_config",
]


@dataclass(frozen=True)
class TransmonParams:
    """Fixed-frequency transmon (or tunable coupler) parameters.

    frequency and anharmonicity are linear frequencies in GHz; ``levels`` is
    the truncation of the oscillator ladder.  Transmons have negative
    anharmonicity; a positive value is accepted but warned about.
    """

    frequency: float
    anharmonicity: float = 0.0
    levels: int = 3

    def __post_init__(self) -> None:
        if self.frequency <= 0:
            raise ConfigError(f"transmon frequency must be positive, got {self.frequency}")
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.anharmonicity > 0:
            warnings.warn(
                f"positive anharmonicity {self.anharmonicity} GHz is unusual for a transmon",
                stacklevel=2,
            )


@dataclass(frozen=True)
class ResonatorParams:
    """Readout-resonator parameters.

    ``kappa`` is the photon (energy) decay rate as a linear frequency in GHz:
    a lone photon population decays as exp(-2*pi*kappa*t_ns).  ``chi`` is the
    dispersive shift; it is carried in the config for completeness but plays
    no role in the dynamics.
    """

    frequency: float
    kappa: float = 0.0
    levels: int = 3
    chi: float = 0.0

    def __post_init__(self) -> None:
        if self.frequency <= 0:
            raise ConfigError(f"resonator frequency must be positive, got {self.frequency}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")

    # The Kerr term is written uniformly for all modes; resonators are linear.
    @property
    def anharmonicity(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Coupling:
    """Symmetric exchange coupling 2*pi*g*(a^dag b + b^dag a) between two modes."""

    mode_a: str
    mode_b: str
    g: float

    def __post_init__(self) -> None:
        if self.mode_a == self.mode_b:
            raise ConfigError(f"coupling must join two distinct modes, got {self.mode_a!r} twice")

    @property
    def pair(self) -> frozenset[str]:
        return frozenset((self.mode_a, self.mode_b))


@dataclass(frozen=True)
class BasisState:
    """Occupation-number tuple over the system's modes, in mode order."""

    occupations: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(n < 0 for n in self.occupations):
            raise ConfigError(f"occupations must be non-negative, got {self.occupations}")

    @property
    def total(self) -> int:
        return sum(self.occupations)

    def label(self) -> str:
        return "|" + "".join(str(n) for n in self.occupations) + ">"


@dataclass(frozen=True)
class _Mode:
    name: str
    kind: str  # "transmon" | "resonator"
    params: TransmonParams | ResonatorParams
    tunable: bool = False

    @property
    def frequency(self) -> float:
        return self.params.frequency

    @property
    def levels(self) -> int:
        return self.params.levels

    @property
    def anharmonicity(self) -> float:
        return self.params.anharmonicity

    @property
    def kappa(self) -> float:
        return self.params.kappa if isinstance(self.params, ResonatorParams) else 0.0


@dataclass
class SystemModel:
    """Validated, immutable description of the coupled-mode network.

    The basis is the full product of per-mode ladders, enumerated
    occupation-major with the *last* mode varying fastest (C order), so the
    all-zero state is index 0.  Mode ordering is exactly the order given at
    construction and fixes the meaning of labels like ``|100>``.
    """

    modes: tuple[_Mode, ...]
    couplings: tuple[Coupling, ...]
    frame_ghz: float = 0.0

    # filled in __post_init__
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _occ_table: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not self.modes:
            raise ConfigError("a system needs at least one mode")
        names = [m.name for m in self.modes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate mode names in {names}")
        self._index = {m.name: k for k, m in enumerate(self.modes)}
        for c in self.couplings:
            for name in (c.mode_a, c.mode_b):
                if name not in self._index:
                    raise ConfigError(f"coupling references undeclared mode {name!r}")
        pairs = [c.pair for c in self.couplings]
        if len(set(pairs)) != len(pairs):
            raise ConfigError("duplicate coupling between the same mode pair")
        dims = self.dims
        grids = np.indices(dims).reshape(len(dims), -1).T
        self._occ_table = np.ascontiguousarray(grids.astype(np.int64))

    # -- basic queries ----------------------------------------------------

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.levels for m in self.modes)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def mode_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.modes)

    def mode(self, name: str) -> _Mode:
        try:
            return self.modes[self._index[name]]
        except KeyError:
            raise ConfigError(f"unknown mode {name!r}") from None

    def mode_position(self, name: str) -> int:
        if name not in self._index:
            raise ConfigError(f"unknown mode {name!r}")
        return self._index[name]

    @property
    def tunable_modes(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.modes if m.tunable)

    @property
    def resonator_modes(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.modes if m.kind == "resonator")

    def kappa_map(self) -> dict[str, float]:
        """Configured linewidth of every resonator mode, in GHz."""
        return {m.name: m.kappa for m in self.modes if m.kind == "resonator"}

    # -- basis ------------------------------------------------------------

    @property
    def occupations(self) -> np.ndarray:
        """(dim, n_modes) table of occupation numbers, row i = basis state i."""
        return self._occ_table

    def basis_index(self, occupations: Sequence[int] | BasisState) -> int:
        if isinstance(occupations, BasisState):
            occupations = occupations.occupations
        occ = tuple(int(n) for n in occupations)
        if len(occ) != len(self.modes):
            raise ConfigError(
                f"expected {len(self.modes)} occupations, got {len(occ)}"
            )
        for n, m in zip(occ, self.modes):
            if n < 0 or n >= m.levels:
                raise ConfigError(
                    f"occupation {n} out of range for mode {m.name!r} with {m.levels} levels"
                )
        return int(np.ravel_multi_index(occ, self.dims))

    def basis_state(self, index: int) -> BasisState:
        if not 0 <= index < self.dim:
            raise ConfigError(f"basis index {index} out of range 0..{self.dim - 1}")
        return BasisState(tuple(int(n) for n in np.unravel_index(index, self.dims)))

    def total_excitations(self) -> np.ndarray:
        """Total occupation N of every basis state."""
        return self._occ_table.sum(axis=1)

    def sector_indices(self, n: int) -> np.ndarray:
        """Basis indices of the total-occupation-N block."""
        return np.flatnonzero(self.total_excitations() == n)

    @property
    def max_excitation(self) -> int:
        return int(sum(m.levels - 1 for m in self.modes))

    # -- Hamiltonian assembly ----------------------------------------------

    def frequencies(self, overrides: Mapping[str, float] | None = None) -> dict[str, float]:
        """Resolved mode frequencies (GHz) with tunable-mode overrides applied."""
        overrides = dict(overrides or {})
        freqs: dict[str, float] = {}
        for m in self.modes:
            if m.name in overrides:
                freqs[m.name] = float(overrides.pop(m.name))
            elif m.tunable:
                raise ConfigError(f"tunable mode {m.name!r} missing from the frequency map")
            else:
                freqs[m.name] = m.frequency
        if overrides:
            raise ConfigError(f"frequency overrides for unknown modes: {sorted(overrides)}")
        return freqs

    def diagonal(self, frequencies: Mapping[str, float]) -> np.ndarray:
        """Diagonal of H (rad/ns) for the given absolute mode frequencies."""
        occ = self._occ_table
        diag = np.zeros(self.dim)
        for k, m in enumerate(self.modes):
            n = occ[:, k]
            f = frequencies[m.name]
            diag += 2.0 * np.pi * (f - self.frame_ghz) * n
            if m.anharmonicity:
                diag += 2.0 * np.pi * (m.anharmonicity / 2.0) * n * (n - 1)
        return diag

    def hopping_terms(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, Coupling]]:
        """Upper-triangular hopping entries per coupling.

        For each coupling returns (rows, cols, values) with value
        2*pi*g*sqrt((n_a + 1) * n_b) connecting col -> row where
        row = col + e_a - e_b; the Hermitian partner is implied.
        """
        occ = self._occ_table
        strides = np.array(
            [int(np.prod(self.dims[k + 1 :])) for k in range(len(self.dims))], dtype=np.int64
        )
        out = []
        for c in self.couplings:
            a = self._index[c.mode_a]
            b = self._index[c.mode_b]
            n_a, n_b = occ[:, a], occ[:, b]
            src = np.flatnonzero((n_b > 0) & (n_a < self.modes[a].levels - 1))
            dst = src + strides[a] - strides[b]
            val = 2.0 * np.pi * c.g * np.sqrt((n_a[src] + 1.0) * n_b[src])
            out.append((dst, src, val, c))
        return out

    def hamiltonian(self, frequencies: Mapping[str, float] | None = None) -> np.ndarray:
        """Assemble the full H in rad/ns; see :func:`assemble_hamiltonian`."""
        freqs = self.frequencies(frequencies)
        h = np.zeros((self.dim, self.dim), dtype=complex)
        np.fill_diagonal(h, self.diagonal(freqs))
        for rows, cols, vals, _ in self.hopping_terms():
            h[rows, cols] += vals
            h[cols, rows] += vals
        return h


# ---------------------------------------------------------------------------
# module-level operation wrappers


def basis_index(system: SystemModel, occupations: Sequence[int] | BasisState) -> int:
    """Index of an occupation tuple in the system's basis enumeration."""
    return system.basis_index(occupations)


def assemble_hamiltonian(
    system: SystemModel, coupler_frequencies: Mapping[str, float] | None = None
) -> np.ndarray:
    """Rotating-frame Hamiltonian in rad/ns for given tunable-mode frequencies.

    ``coupler_frequencies`` maps tunable mode names to absolute frequencies in
    GHz; every tunable mode must be present, fixed modes use their configured
    frequency.  The result is Hermitian and commutes with the total number
    operator.
    """
    return system.hamiltonian(coupler_frequencies)


def excitation_block(
    h: np.ndarray, system: SystemModel, n: int
) -> tuple[np.ndarray, list[BasisState]]:
    """Restrict H to the total-occupation-N block.

    Returns the submatrix and the ordered basis labels of its rows.
    """
    if n < 0 or n > system.max_excitation:
        raise ConfigError(
            f"excitation number {n} outside representable range 0..{system.max_excitation}"
        )
    idx = system.sector_indices(n)
    labels = [system.basis_state(int(i)) for i in idx]
    return h[np.ix_(idx, idx)], labels


# ---------------------------------------------------------------------------
# configuration


def _mode_from_config(entry: Mapping) -> _Mode:
    try:
        name = entry["name"]
        kind = entry["kind"]
        freq = float(entry["frequency_ghz"])
    except KeyError as exc:
        raise ConfigError(f"mode entry missing required field {exc}") from None
    levels = int(entry.get("levels", 3))
    if kind == "transmon":
        params: TransmonParams | ResonatorParams = TransmonParams(
            frequency=freq,
            anharmonicity=float(entry.get("anharmonicity_ghz", 0.0)),
            levels=levels,
        )
    elif kind == "resonator":
        params = ResonatorParams(
            frequency=freq,
            kappa=float(entry.get("kappa_ghz", 0.0)),
            levels=levels,
            chi=float(entry.get("chi_ghz", 0.0)),
        )
    else:
        raise ConfigError(f"unknown mode kind {kind!r} for mode {name!r}")
    return _Mode(name=name, kind=kind, params=params, tunable=bool(entry.get("tunable", False)))


def build_system(config: Mapping) -> SystemModel:
    """Build a :class:`SystemModel` from a parsed device description.

    The description is a mapping with keys ``modes`` (list of mode entries),
    ``couplings`` (list of ``{a, b, g_ghz}``) and optional ``frame_ghz``.
    When ``frame_ghz`` is omitted the frequency of the first transmon is used
    (or 0 if there is none).
    """
    if "modes" not in config or not config["modes"]:
        raise ConfigError("device config must declare at least one mode")
    modes = tuple(_mode_from_config(m) for m in config["modes"])
    couplings = tuple(
        Coupling(mode_a=c["a"], mode_b=c["b"], g=float(c["g_ghz"]))
        for c in config.get("couplings", ())
    )
    if "frame_ghz" in config and config["frame_ghz"] is not None:
        frame = float(config["frame_ghz"])
    else:
        frame = next((m.frequency for m in modes if m.kind == "transmon"), 0.0)
    return SystemModel(modes=modes, couplings=couplings, frame_ghz=frame)


def load_device_config(path: str | Path) -> SystemModel:
    """Load and validate a device config file (JSON, or TOML on Python 3.11+)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"device config not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ImportError:  # pragma: no cover
            raise ConfigError(
                f"cannot parse {path}: TOML support needs Python 3.11+; use JSON instead"
            ) from None
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:  # pragma: no cover
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse {path} at line {exc.lineno}: {exc.msg}") from None
    return build_system(raw)
