"""
su(d) generator bases and local charts on SU(d).

- gell_mann_basis(d): trace-orthonormal Hermitian traceless generators t_a
  (order: symmetric/antisymmetric pairs, then diagonals; for d=2 this is x, y, z)
- Chart: U(theta) = U0 exp(-i sum_a theta_a t_a)
- tangent_at: t_a(theta) = i U^dagger dU/dtheta_a via the divided-difference
  (Daleckii-Krein) formula for the derivative of exp
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from utils.errors import ValidationError
from utils.numkernel import TOL_UNITARY, hermitian_eig, is_unitary, unitary_exp


@dataclass(frozen=True)
class GeneratorBasis:
    d: int
    t: np.ndarray  # shape (d^2 - 1, d, d)

    @property
    def size(self) -> int:
        return self.t.shape[0]

    def combine(self, theta) -> np.ndarray:
        return np.tensordot(np.asarray(theta, dtype=float), self.t, axes=1)


def gell_mann_basis(d: int) -> GeneratorBasis:
    if d < 2:
        raise ValidationError(f"gell_mann_basis: d must be >= 2, got {d}")
    gens: List[np.ndarray] = []
    for j in range(d):
        for k in range(j + 1, d):
            sym = np.zeros((d, d), dtype=complex)
            sym[j, k] = sym[k, j] = 1.0
            anti = np.zeros((d, d), dtype=complex)
            anti[j, k] = -1j
            anti[k, j] = 1j
            gens.append(sym / np.sqrt(2))
            gens.append(anti / np.sqrt(2))
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        gens.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
    return GeneratorBasis(d=d, t=np.array(gens))


@dataclass(frozen=True)
class Chart:
    basis: GeneratorBasis
    reference: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        ref = np.eye(self.basis.d, dtype=complex) if self.reference is None else np.asarray(self.reference, dtype=complex)
        if ref.shape != (self.basis.d, self.basis.d):
            raise ValidationError(f"Chart: reference shape {ref.shape} does not match d={self.basis.d}")
        if not is_unitary(ref, TOL_UNITARY):
            raise ValidationError("Chart: reference is not unitary to 1e-10")
        object.__setattr__(self, "reference", ref)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def dim(self) -> int:
        return self.basis.size

    def recentered(self, theta) -> "Chart":
        """Chart whose origin is the point theta of this one."""
        return Chart(self.basis, unitary_at(self, theta))


def _check_theta(chart: Chart, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float).reshape(-1)
    if th.shape[0] != chart.dim:
        raise ValidationError(f"theta: expected length {chart.dim}, got {th.shape[0]}")
    if not np.all(np.isfinite(th)):
        raise ValidationError("theta: contains NaN or Inf")
    return th


def unitary_at(chart: Chart, theta) -> np.ndarray:
    th = _check_theta(chart, theta)
    return chart.reference @ unitary_exp(chart.basis.combine(th))


def tangent_at(chart: Chart, theta) -> np.ndarray:
    """Stack av t_a(theta), form (d^2-1, d, d). Exakt basen i theta = 0."""
    th = _check_theta(chart, theta)
    if not np.any(th):
        return chart.basis.t.copy()
    eig = hermitian_eig(chart.basis.combine(th))
    x, v = eig.eigenvalues, eig.eigenvectors
    diff = x[:, None] - x[None, :]
    same = np.abs(diff) < 1e-12
    # i e^{i x_j} f[x_j, x_k] med f(x) = e^{-ix}; gränsvärdet är 1 på diagonalen
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = np.where(same, 1.0 + 0j, 1j * (1.0 - np.exp(1j * diff)) / np.where(same, 1.0, diff))
    rotated = np.einsum("ja,nab,bk->njk", v.conj().T, chart.basis.t, v)
    return np.einsum("aj,njk,kb->nab", v, kernel[None, :, :] * rotated, v.conj().T)
