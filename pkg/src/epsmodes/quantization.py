"""Quantized-field assembly on top of a mode bank.

Mode coefficients play the role of the canonical (q, p) pairs of the
harmonic oscillators behind each mode; classical coefficient arrays
stand in for the operators, so commutators are checked as dyadic kernel
identities rather than through an operator algebra.  Natural units
(hbar = eps0 = mu0 = 1) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, IncompleteBankError, PlacementError
from .lattice import EDGE, VectorField, curl_raw
from .medium import MediumProfile
from .modes import MAGNETIC, ModeBank


@dataclass(frozen=True)
class ModeCoefficients:
    """Generalized coordinates and momenta, one pair per mode."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError("q and p must be 1-d arrays of equal length")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return len(self.q)

    def amplitudes(self, frequencies: np.ndarray) -> np.ndarray:
        """Annihilation amplitudes a = sqrt(w/2) q + i sqrt(1/2w) p."""
        om = np.asarray(frequencies)
        if om.shape != self.q.shape:
            raise ValueError("frequency count does not match coefficients")
        if np.any(om <= 0):
            raise ValueError("amplitudes are undefined for zero-frequency modes")
        return np.sqrt(om / 2) * self.q + 1j * np.sqrt(1.0 / (2 * om)) * self.p

    @classmethod
    def from_amplitudes(cls, a: np.ndarray, frequencies: np.ndarray) -> "ModeCoefficients":
        om = np.asarray(frequencies)
        q = np.sqrt(2 / om) * np.real(a)
        p = np.sqrt(2 * om) * np.imag(a)
        return cls(q, p)


def evolve(coeffs: ModeCoefficients, frequencies: np.ndarray, t: float) -> ModeCoefficients:
    """Harmonic time evolution of every (q, p) pair."""
    om = np.asarray(frequencies)
    c, s = np.cos(om * t), np.sin(om * t)
    # zero-frequency modes drift linearly: q + p t, p const
    rate = np.where(om > 0, s / np.where(om > 0, om, 1.0), t)
    q = coeffs.q * c + coeffs.p * rate
    p = coeffs.p * c - om * coeffs.q * s
    return ModeCoefficients(q, p)


@dataclass
class FieldSnapshot:
    """Vector potential and its conjugate momentum on the grid.

    The conjugate field equals minus the displacement field; for the
    free field it is divergence-free.  The magnetic field is available
    on demand as the curl of the potential.
    """

    #: scalar potential is gauged away, so E is represented as -dA/dt
    ELECTRIC_FIELD_CONVENTION = "minus-dA-dt"

    vector_potential: VectorField
    conjugate_momentum: VectorField

    def magnetic_field(self) -> VectorField:
        a = self.vector_potential
        return VectorField(a.grid, "face", curl_raw(a.values, a.grid.spacing))


def synthesize_fields(bank: ModeBank, coeffs: ModeCoefficients) -> FieldSnapshot:
    """Normal-mode synthesis A = sum q_l h_l, Pi = sum p_l eps h_l."""
    if len(coeffs) != len(bank):
        raise ValueError(f"{len(coeffs)} coefficients for {len(bank)} modes")
    a = np.tensordot(coeffs.q, bank.modes_h, axes=(0, 0))
    pi = bank.medium.eps * np.tensordot(coeffs.p, bank.modes_h, axes=(0, 0))
    return FieldSnapshot(
        vector_potential=VectorField(bank.grid, EDGE, a),
        conjugate_momentum=VectorField(bank.grid, EDGE, pi),
    )


def analyze_field(bank: ModeBank, field: VectorField) -> np.ndarray:
    """Coefficients of an edge field in the eps-weighted mode basis."""
    if field.grid != bank.grid:
        raise GridMismatchError("field and bank grids differ")
    weighted = bank.medium.eps * field.values
    return np.tensordot(bank.modes_h, weighted, axes=([1, 2, 3, 4], [0, 1, 2, 3])) \
        * bank.grid.cell_volume


@dataclass
class EnergySplit:
    integral_form: float
    spectral_form: float


def hamiltonian_energy(
    bank: ModeBank, coeffs: ModeCoefficients, m: MediumProfile | None = None
) -> EnergySplit:
    """Field energy two ways: grid integral versus oscillator sum.

    Integral form: (1/2) integral of Pi^2/eps + (curl A)^2 / mu over the
    box, evaluated from the synthesized fields.  Spectral form:
    (1/2) sum of p^2 + w^2 q^2.  Equality up to mode residuals is the
    numerical content of the generalized orthonormality of the bank.
    """
    m = bank.medium if m is None else m
    snap = synthesize_fields(bank, coeffs)
    vol = m.grid.cell_volume
    pi = snap.conjugate_momentum.values
    electric = float(np.sum(pi * pi / m.eps)) * vol
    b = curl_raw(snap.vector_potential.values, m.grid.spacing)
    if bank.variant == MAGNETIC and m.mu is not None:
        magnetic = float(np.sum(b * b / m.mu)) * vol
    else:
        magnetic = float(np.sum(b * b)) * vol
    integral = 0.5 * (electric + magnetic)
    spectral = 0.5 * float(np.sum(coeffs.p**2 + bank.frequencies**2 * coeffs.q**2))
    return EnergySplit(integral_form=integral, spectral_form=spectral)


class TransverseProjector:
    """Projector defined by the mode-bank dyadic kernel.

    The kernel ``sum_l h_l(r) h_l(r') eps(r')`` is generalized
    transverse in its first slot and transverse (divergence-free) in its
    second.  Contracting a field against the first slot therefore
    returns a transverse field (identity on transverse inputs for a
    complete bank, zero on eps-weighted gradients); contracting against
    the second slot returns a generalized-transverse field and is
    self-adjoint under the eps-weighted inner product.
    """

    def __init__(self, bank: ModeBank):
        self.bank = bank

    def _coefficients(self, x: VectorField, weighted_analysis: bool) -> np.ndarray:
        if x.grid != self.bank.grid:
            raise GridMismatchError("field and bank grids differ")
        if x.placement != EDGE:
            raise PlacementError("projector expects edge fields")
        values = self.bank.medium.eps * x.values if weighted_analysis else x.values
        return np.tensordot(
            self.bank.modes_h, values, axes=([1, 2, 3, 4], [0, 1, 2, 3])
        ) * self.bank.grid.cell_volume

    def apply(self, x: VectorField) -> VectorField:
        """First-slot contraction: eps * sum_l <x, h_l> h_l (transverse out)."""
        coef = self._coefficients(x, weighted_analysis=False)
        out = self.bank.medium.eps * np.tensordot(coef, self.bank.modes_h, axes=(0, 0))
        return VectorField(self.bank.grid, EDGE, out)

    def apply_weighted(self, x: VectorField) -> VectorField:
        """Second-slot contraction: sum_l <x, h_l>_eps h_l (gen.-transverse out)."""
        coef = self._coefficients(x, weighted_analysis=True)
        out = np.tensordot(coef, self.bank.modes_h, axes=(0, 0))
        return VectorField(self.bank.grid, EDGE, out)


def apply_projector(p: TransverseProjector, x: VectorField) -> VectorField:
    """Contract a field against the first slot of the projector kernel."""
    return p.apply(x)


def projector_matrix(bank: ModeBank) -> np.ndarray:
    """Dense kernel matrix K[(a,r), (b,r')] = sum_l h_a(r) h_b(r') eps_b(r') dV.

    Acting on flattened edge fields this is the second-slot contraction;
    idempotent for any bank, and for a complete bank the identity on the
    generalized-transverse subspace.  Small grids only.
    """
    n = len(bank)
    dof = 3 * bank.grid.ncells
    if dof > 4000:
        raise ValueError(f"dense projector refused for {dof} degrees of freedom")
    h = bank.modes_h.reshape(n, dof)
    he = (bank.medium.eps[None, ...] * bank.modes_h).reshape(n, dof)
    return h.T @ he * bank.grid.cell_volume


def commutator_dyadic(bank: ModeBank, r_index, rp_index) -> np.ndarray:
    """3x3 dyadic kernel of [A, Pi]/(i hbar) between two grid cells.

    ``r_index``/``rp_index`` are (i, j, k) cell multi-indices; component
    a refers to the edge-a sample of that cell.  Requires a complete
    bank so the kernel equals the generalized transverse delta.
    """
    if not bank.complete:
        raise IncompleteBankError("commutator dyadic needs a complete bank")
    i, j, k = r_index
    ip, jp, kp = rp_index
    h_r = bank.modes_h[:, :, i, j, k]          # (n, 3)
    h_rp = bank.modes_h[:, :, ip, jp, kp]      # (n, 3)
    eps_rp = bank.medium.eps[:, ip, jp, kp]    # (3,)
    return np.einsum("la,lb,b->ab", h_r, h_rp, eps_rp)
