"""Dipole couplings, spontaneous-emission rates and LDOS spectra.

A guest atom enters as given data: position, level energies and
transition dipole moments.  Inside the medium the dipole couples to the
displacement field divided by the local permittivity, which in mode form
means the coupling samples the eps-orthonormal mode functions h at the
atom position.  Rates follow from the golden rule with a normalized
Lorentzian standing in for the delta function on the finite grid; the
free-space reference rate is evaluated analytically so that medium
effects are isolated from discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .electrostatics import cavity_field_factor
from .errors import BandCoverageError, FeasibilityError, ProfileError
from .lattice import EDGE, Grid
from .medium import Homogeneous, MediumProfile
from .modes import ModeBank


@dataclass(frozen=True)
class AtomSpec:
    """Guest atom: position, level energies, dipole matrix, cavity size."""

    position: tuple[float, float, float]
    levels: tuple[float, ...]
    dipoles: np.ndarray                  # (nlev, nlev, 3), symmetric in (k, k')
    cavity_radius: float | None = None

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        object.__setattr__(self, "position", pos)
        levels = tuple(float(e) for e in self.levels)
        object.__setattr__(self, "levels", levels)
        nlev = len(levels)
        dip = np.asarray(self.dipoles, dtype=np.float64)
        if dip.shape != (nlev, nlev, 3):
            raise ValueError(f"dipoles must have shape {(nlev, nlev, 3)}, got {dip.shape}")
        if not np.allclose(dip, np.swapaxes(dip, 0, 1), atol=0.0):
            raise ValueError("dipole matrix must be symmetric: mu_kk' = mu_k'k")
        dip = dip.copy()
        dip.setflags(write=False)
        object.__setattr__(self, "dipoles", dip)

    def transition_frequency(self, k: int, kp: int) -> float:
        return self.levels[k] - self.levels[kp]

    def dipole(self, k: int, kp: int) -> np.ndarray:
        return self.dipoles[k, kp]


def two_level_atom(position, omega0: float, dipole, cavity_radius=None) -> AtomSpec:
    """Convenience constructor for a ground/excited pair."""
    mu = np.asarray(dipole, dtype=np.float64)
    dip = np.zeros((2, 2, 3))
    dip[0, 1] = dip[1, 0] = mu
    return AtomSpec(tuple(position), (0.0, float(omega0)), dip, cavity_radius)


@dataclass(frozen=True)
class CouplingElement:
    mode_index: int
    levels: tuple[int, int]
    value: complex


@dataclass
class EmissionReport:
    rate: float
    rate_free_space: float
    ratio: float
    eta: float
    local_field_factor: float = 1.0
    ldos_samples: list[tuple[float, float]] = field(default_factory=list)


def _check_position(position, grid: Grid):
    for x, length in zip(position, grid.lengths):
        if not (0.0 <= x < length):
            raise ProfileError(
                f"position {tuple(position)} outside the periodic box {grid.lengths}"
            )


def _interp_weights(position, grid: Grid, offset: np.ndarray):
    """Periodic trilinear corner indices and weights for one component."""
    idx = []
    wts = []
    for a in range(3):
        u = position[a] / grid.spacing - offset[a]
        i0 = int(np.floor(u))
        frac = u - i0
        n = grid.dims[a]
        idx.append((i0 % n, (i0 + 1) % n))
        wts.append((1.0 - frac, frac))
    corners = []
    for di in range(2):
        for dj in range(2):
            for dk in range(2):
                w = wts[0][di] * wts[1][dj] * wts[2][dk]
                corners.append(((idx[0][di], idx[1][dj], idx[2][dk]), w))
    return corners


def sample_mode_fields(bank: ModeBank, position) -> np.ndarray:
    """Trilinear sample of every h mode at a position, shape (n, 3).

    Each staggered component is interpolated on its own sub-lattice;
    nearest-sample lookup would bias against the offset directions.
    """
    grid = bank.grid
    _check_position(position, grid)
    offsets = grid.component_offsets(EDGE)
    out = np.zeros((len(bank), 3))
    for a in range(3):
        for (i, j, k), w in _interp_weights(position, grid, offsets[a]):
            if w:
                out[:, a] += w * bank.modes_h[:, a, i, j, k]
    return out


def sample_permittivity(m: MediumProfile, position) -> float:
    """Scalar eps at a point: mean of the three component interpolations."""
    grid = m.grid
    _check_position(position, grid)
    offsets = grid.component_offsets(EDGE)
    vals = np.zeros(3)
    for a in range(3):
        for (i, j, k), w in _interp_weights(position, grid, offsets[a]):
            vals[a] += w * m.eps[a, i, j, k]
    return float(vals.mean())


def dipole_coupling(bank: ModeBank, atom: AtomSpec, k: int, kp: int) -> list[CouplingElement]:
    """Per-mode couplings g = -i sqrt(w/2) mu . h(R) in natural units.

    The coupled field is the displacement field over the local
    permittivity (in mode form the eps factor cancels), not the electric
    or bare displacement field.
    """
    mu = atom.dipole(k, kp)
    h_at = sample_mode_fields(bank, atom.position)
    proj = h_at @ mu
    values = -1j * np.sqrt(bank.frequencies / 2.0) * proj
    return [
        CouplingElement(mode_index=i, levels=(k, kp), value=complex(v))
        for i, v in enumerate(values)
    ]


def coupling_strengths(bank: ModeBank, atom: AtomSpec, k: int, kp: int) -> np.ndarray:
    """|g|^2 per mode; the quantity entering the golden rule."""
    mu = atom.dipole(k, kp)
    proj = sample_mode_fields(bank, atom.position) @ mu
    return 0.5 * bank.frequencies * proj**2


def lorentzian(x: np.ndarray, eta: float) -> np.ndarray:
    """Unit-area Lorentzian of half-width eta."""
    return (eta / np.pi) / (x * x + eta * eta)


def distinct_levels(frequencies: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Resonance frequencies with degenerate clusters merged."""
    om = np.sort(np.asarray(frequencies))
    om = om[om > 0]
    if len(om) == 0:
        return om
    out = [om[0]]
    tol = rtol * om[-1]
    for w in om[1:]:
        if w - out[-1] > tol:
            out.append(w)
    return np.asarray(out)


def default_broadening(bank: ModeBank, omega0: float, levels: int = 6) -> float:
    """Three times the local mean spacing of distinct resonances.

    Degenerate clusters count as one resonance (their members carry no
    independent spectral information).  On coarse grids the estimate is
    clamped to a quarter of the distance to either spectral edge so the
    Lorentzian stays inside the band the bank resolves.
    """
    lv = distinct_levels(bank.frequencies)
    if len(lv) < 2:
        raise FeasibilityError("bank too small to estimate a mode spacing")
    nearest = np.sort(lv[np.argsort(np.abs(lv - omega0))[: min(levels, len(lv))]])
    spacing = float(np.mean(np.diff(nearest)))
    eta = 3.0 * spacing
    margin = min(omega0 - lv[0], lv[-1] - omega0)
    if margin > 0:
        eta = min(eta, margin / 4.0)
    if eta <= 0:
        raise FeasibilityError(
            f"cannot pick a broadening for omega0={omega0:g} at the band edge"
        )
    return eta


def free_space_rate(omega0: float, mu: np.ndarray) -> float:
    """Analytic vacuum emission rate w^3 mu^2 / (3 pi), natural units."""
    mu2 = float(np.dot(mu, mu))
    return omega0**3 * mu2 / (3 * np.pi)


def emission_rate(
    bank: ModeBank,
    atom: AtomSpec,
    transition: tuple[int, int] = (1, 0),
    eta: float | None = None,
) -> EmissionReport:
    """Golden-rule rate 2 pi sum_l |g_l|^2 L_eta(w0 - w_l).

    The transition frequency must sit inside the band the bank resolves
    (two broadening widths away from either spectral end); otherwise the
    estimate would silently depend on missing modes and the call fails.
    """
    k, kp = transition
    omega0 = atom.transition_frequency(k, kp)
    if omega0 <= 0:
        raise ValueError(f"transition {k}->{kp} has nonpositive frequency {omega0}")
    if eta is None:
        eta = default_broadening(bank, omega0)
    if eta <= 0:
        raise ValueError("broadening must be positive")
    om = bank.frequencies
    lo, hi = om.min(), om.max()
    if omega0 - 2 * eta < lo or omega0 + 2 * eta > hi:
        raise BandCoverageError(
            f"transition frequency {omega0:g} (eta={eta:g}) is outside the "
            f"reliable band [{lo:g}, {hi:g}] of the bank"
        )
    weights = coupling_strengths(bank, atom, k, kp)
    rate = float(2 * np.pi * np.sum(weights * lorentzian(omega0 - om, eta)))
    gamma0 = free_space_rate(omega0, atom.dipole(k, kp))
    return EmissionReport(
        rate=rate,
        rate_free_space=gamma0,
        ratio=rate / gamma0 if gamma0 > 0 else 0.0,
        eta=float(eta),
    )


def local_field_corrected_rate(
    bank_or_bulk_eps,
    atom: AtomSpec,
    transition: tuple[int, int] = (1, 0),
    eta: float | None = None,
    factor_grid: Grid | None = None,
    factor_tol: float = 1e-10,
) -> EmissionReport:
    """Empty-cavity rate: squared local-field factor times the bulk rate.

    The atom sits in a vacuum cavity of ``atom.cavity_radius`` inside a
    homogeneous host.  The factor is computed electrostatically (never
    hardcoded); the bulk rate comes from the homogeneous bank when one
    is supplied, or from the analytic sqrt(eps) enhancement when only
    the bulk permittivity is given.
    """
    if atom.cavity_radius is None:
        raise ValueError("atom carries no cavity radius")
    k, kp = transition
    omega0 = atom.transition_frequency(k, kp)
    gamma0 = free_space_rate(omega0, atom.dipole(k, kp))

    if isinstance(bank_or_bulk_eps, ModeBank):
        bank = bank_or_bulk_eps
        desc = bank.medium.descriptor
        if not isinstance(desc, Homogeneous):
            raise ProfileError("local-field composition expects a homogeneous host bank")
        eps_bulk = desc.eps
        bulk = emission_rate(bank, atom, transition, eta)
        bulk_rate = bulk.rate
        eta_used = bulk.eta
    else:
        eps_bulk = float(bank_or_bulk_eps)
        if eps_bulk <= 0:
            raise ProfileError("bulk permittivity must be positive")
        bulk_rate = np.sqrt(eps_bulk) * gamma0
        eta_used = eta if eta is not None else 0.0

    if factor_grid is None:
        factor_grid = Grid((48, 48, 48), spacing=atom.cavity_radius / 6)
    factor = cavity_field_factor(
        eps_bulk, factor_grid, atom.cavity_radius, tol=factor_tol
    )
    rate = factor**2 * bulk_rate
    return EmissionReport(
        rate=rate,
        rate_free_space=gamma0,
        ratio=rate / gamma0 if gamma0 > 0 else 0.0,
        eta=float(eta_used),
        local_field_factor=float(factor),
    )


def ldos_spectrum(
    bank: ModeBank,
    position,
    orientation,
    omega_grid: np.ndarray,
    eta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Projected local density of states on a frequency grid.

    rho(w) = sum_l |u . h_l(r)|^2 eps(r) L_eta(w - w_l); integrated over
    the resolved band this approaches the eps-weighted diagonal of the
    transverse projector kernel.
    """
    omegas = np.asarray(omega_grid, dtype=np.float64)
    if omegas.ndim != 1 or len(omegas) == 0:
        raise ValueError("omega grid must be a nonempty 1-d array")
    if np.any(np.diff(omegas) <= 0):
        raise ValueError("omega grid must be strictly ascending")
    if eta <= 0:
        raise ValueError("broadening must be positive")
    u = np.asarray(orientation, dtype=np.float64)
    un = np.linalg.norm(u)
    if un == 0:
        raise ValueError("orientation must be a nonzero vector")
    u = u / un
    proj = sample_mode_fields(bank, position) @ u
    eps_r = sample_permittivity(bank.medium, position)
    weights = proj**2 * eps_r
    values = lorentzian(omegas[:, None] - bank.frequencies[None, :], eta) @ weights
    return omegas, values
