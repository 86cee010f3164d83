"""
Dense complex-matrix kernels used by every other module.

What lives here:
- Hermitian eigendecomposition with input validation
- exp(-iA) for Hermitian A, inverse square root of SPD matrices
- Haar-random unitaries (Ginibre QR with phase fix)
- tensor helpers: kron, partial trace, swap, symmetric projector, HS distance

Tolerances are fixed here and imported by the rest of the repo.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from utils.errors import ValidationError

TOL_ALGEBRA = 1e-8
TOL_UNITARY = 1e-10
TOL_SCALAR = 1e-12


@dataclass(frozen=True)
class HermitianEigen:
    eigenvalues: np.ndarray  # ascending, real
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


# ---------- Validering ----------
def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValidationError(f"{name}: expected 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name}: contains NaN or Inf")
    return m


def _require_square(m: np.ndarray, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name}: not square, shape {m.shape}")


def hermiticity_error(m: np.ndarray) -> float:
    """Relativ Frobeniusnorm av den anti-hermiteska delen."""
    return float(np.linalg.norm(m - m.conj().T) / max(1.0, np.linalg.norm(m)))


def is_unitary(u: np.ndarray, tol: float = TOL_UNITARY) -> bool:
    u = np.asarray(u)
    return bool(np.linalg.norm(u @ u.conj().T - np.eye(u.shape[0])) <= tol)


# ---------- Spektral ----------
def hermitian_eig(a) -> HermitianEigen:
    m = as_matrix(a, "hermitian_eig input")
    _require_square(m, "hermitian_eig input")
    err = hermiticity_error(m)
    if err > TOL_UNITARY:
        raise ValidationError(f"hermitian_eig input: not Hermitian (relative anti-Hermitian part {err:.3e})")
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return HermitianEigen(eigenvalues=w, eigenvectors=v)


def unitary_exp(a) -> np.ndarray:
    """exp(-iA) for Hermitian A."""
    eig = hermitian_eig(a)
    v = eig.eigenvectors
    return (v * np.exp(-1j * eig.eigenvalues)) @ v.conj().T


def inv_sqrt_spd(m) -> np.ndarray:
    mat = np.asarray(m, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"inv_sqrt_spd: not square, shape {mat.shape}")
    asym = float(np.linalg.norm(mat - mat.T) / max(1.0, np.linalg.norm(mat)))
    if asym > TOL_UNITARY:
        raise ValidationError(f"inv_sqrt_spd: not symmetric (relative asymmetry {asym:.3e})")
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    top = float(w[-1]) if w.size else 0.0
    if top <= 0 or w[0] <= TOL_SCALAR * top:
        cond = np.inf if w[0] <= 0 else top / w[0]
        raise ValidationError(f"inv_sqrt_spd: matrix near-singular (condition number {cond:.3e})")
    return (v / np.sqrt(w)) @ v.T


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed d x d unitary: QR of a complex Ginibre matrix, R's diagonal phases moved into Q."""
    if d < 1:
        raise ValidationError(f"haar_unitary: d must be >= 1, got {d}")
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    phases = diag / np.abs(diag)
    return q * phases


# ---------- Tensorprodukter ----------
def kron(*ops) -> np.ndarray:
    if not ops:
        raise ValidationError("kron: need at least one operand")
    return reduce(np.kron, [np.asarray(o, dtype=complex) for o in ops])


def kron_power(op, n: int) -> np.ndarray:
    if n < 1:
        raise ValidationError(f"kron_power: n must be >= 1, got {n}")
    return kron(*([op] * n))


def partial_trace(a, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """
    Spårar ut alla delsystem som inte finns i `keep`.
    Tom `keep` ger hela spåret som en 1x1-matris.
    """
    m = as_matrix(a, "partial_trace input")
    dims = [int(x) for x in dims]
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise ValidationError(f"partial_trace: shape {m.shape} does not match dims {dims} (total {total})")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValidationError(f"partial_trace: keep={keep} out of range for {len(dims)} subsystems")
    nsys = len(dims)
    t = m.reshape(dims + dims)
    # spåra ut bakifrån så axelnumren stämmer
    for s in reversed(range(nsys)):
        if s in keep:
            continue
        cur = t.ndim // 2
        t = np.trace(t, axis1=s, axis2=s + cur)
    kept = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(kept, kept)


def hs_distance(a, b) -> float:
    ma, mb = np.asarray(a), np.asarray(b)
    if ma.shape != mb.shape:
        raise ValidationError(f"hs_distance: shape mismatch {ma.shape} vs {mb.shape}")
    return float(np.linalg.norm(ma - mb))


def swap_operator(d: int) -> np.ndarray:
    """W = sum_kl |kl><lk| on C^d (x) C^d."""
    if d < 1:
        raise ValidationError(f"swap_operator: d must be >= 1, got {d}")
    w = np.zeros((d * d, d * d), dtype=complex)
    for k in range(d):
        for l in range(d):
            w[k * d + l, l * d + k] = 1.0
    return w


def symmetric_projector(d: int) -> np.ndarray:
    return (np.eye(d * d) + swap_operator(d)) / 2


def orthonormal_span(vectors: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Ortonormal bas (kolumner) för spannet av de givna kolumnerna."""
    if vectors.size == 0:
        return np.zeros((vectors.shape[0], 0), dtype=complex)
    return sla.orth(vectors, rcond=rtol)
