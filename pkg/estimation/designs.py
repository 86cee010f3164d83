"""
Spherical 2-designs: exact constructions, certification and Haar approximations.

- mub_prime(d): d+1 mutually unbiased bases for prime d (quadratic-phase construction)
- sic_povm(d): SIC vectors for d in {2, 3} from hardcoded Weyl-Heisenberg fiducials
- verify_2design: HS distance of (1/m) sum |t><t|^{(x)2} to 2 Pi_+ / (d(d+1))
- chernoff_sample_size: number of Haar unitaries needed for a (1 +- eps) QFI with probability q
- sample_approx_design: i.i.d. Haar unitaries from a seeded stream

Export format (JSON): list of vectors, each a list of [re, im] pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

from utils.errors import UnsupportedError, ValidationError
from utils.numkernel import haar_unitary, symmetric_projector

DESIGN_TOL = 1e-10


@dataclass(frozen=True)
class VectorSet:
    d: int
    vectors: np.ndarray  # shape (m, d), one unit vector per row

    def __post_init__(self):
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        if vecs.shape[1] != self.d or vecs.shape[0] == 0:
            raise ValidationError(f"VectorSet: expected shape (m, {self.d}) with m >= 1, got {vecs.shape}")
        norms = np.linalg.norm(vecs, axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > 1e-12:
            raise ValidationError(f"VectorSet: vectors not normalized (worst deviation {worst:.3e})")
        object.__setattr__(self, "vectors", vecs)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    def to_json(self) -> List[List[List[float]]]:
        return [[[float(z.real), float(z.imag)] for z in row] for row in self.vectors]

    @classmethod
    def from_json(cls, data: Sequence[Sequence[Sequence[float]]]) -> "VectorSet":
        arr = np.array([[complex(re, im) for re, im in row] for row in data])
        if arr.ndim != 2:
            raise ValidationError("VectorSet JSON: expected a list of vectors of [re, im] pairs")
        return cls(d=arr.shape[1], vectors=arr)


@dataclass(frozen=True)
class DesignReport:
    hs_distance: float
    is_design: bool
    tolerance: float

    def as_dict(self) -> Dict[str, Any]:
        return {"hs_distance": self.hs_distance, "is_design": self.is_design, "tolerance": self.tolerance}


# ---------- Hjälpfunktioner ----------
def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in range(2, int(math.isqrt(n)) + 1):
        if n % p == 0:
            return False
    return True


def _weyl_heisenberg(d: int, a: int, b: int) -> np.ndarray:
    """X^a Z^b with X|j> = |j+1>, Z|j> = w^j |j>."""
    w = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(w ** np.arange(d))
    return np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)


# ---------- Exakta konstruktioner ----------
def mub_prime(d: int) -> List[np.ndarray]:
    """
    d+1 MUB:ar för primtal d. Varje bas är en d x d unitär med basvektorerna som kolumner.
    Ordning: beräkningsbasen först, sedan familjen med kvadratiska faser
    (för d=2: egenbaserna till sigma_z, sigma_x, sigma_y).
    """
    if not _is_prime(int(d)):
        raise UnsupportedError(f"mub_prime: d={d} is not prime; only prime dimensions are constructed")
    d = int(d)
    bases = [np.eye(d, dtype=complex)]
    j = np.arange(d)
    for b in range(d):
        cols = []
        for l in range(d):
            if d == 2:
                # i^{b j} (-1)^{l j}: X-basis for b=0, Y-basis for b=1
                phase = (1j ** (b * j)) * ((-1.0) ** (l * j))
            else:
                phase = np.exp(2j * np.pi * (b * j * j + l * j) / d)
            cols.append(phase / np.sqrt(d))
        bases.append(np.array(cols).T)
    return bases


def mub_vectors(bases: Sequence[np.ndarray]) -> VectorSet:
    """Plattar ut baserna till en VectorSet; vektorindex = b * d + l."""
    d = bases[0].shape[0]
    rows = [basis[:, l] for basis in bases for l in range(d)]
    return VectorSet(d=d, vectors=np.array(rows))


# Fiducials: d=2 has Bloch vector (1,1,1)/sqrt(3); d=3 is the Hesse SIC (0, 1, -1)/sqrt(2).
# To regenerate, take the Weyl-Heisenberg orbit and check |<x_i|x_j>|^2 = 1/(d+1).
_SIC_FIDUCIALS = {
    2: np.array([
        math.sqrt((1 + 1 / math.sqrt(3)) / 2),
        np.exp(1j * math.pi / 4) * math.sqrt((1 - 1 / math.sqrt(3)) / 2),
    ]),
    3: np.array([0.0, 1.0, -1.0]) / math.sqrt(2),
}


def sic_povm(d: int) -> VectorSet:
    if d not in _SIC_FIDUCIALS:
        raise UnsupportedError(
            f"sic_povm: no SIC fiducial stored for d={d} (available: 2, 3); use approximate designs instead (approx)"
        )
    fid = _SIC_FIDUCIALS[d].astype(complex)
    rows = [_weyl_heisenberg(d, a, b) @ fid for a in range(d) for b in range(d)]
    return VectorSet(d=d, vectors=np.array(rows))


def frame_operator(vs: VectorSet) -> np.ndarray:
    """(1/m) sum_i [|t_i><t_i|]^{(x)2} as a d^2 x d^2 matrix."""
    doubled = np.einsum("ia,ib->iab", vs.vectors, vs.vectors).reshape(vs.m, -1)
    return doubled.T @ doubled.conj() / vs.m


def verify_2design(vs: VectorSet, tolerance: float = DESIGN_TOL) -> DesignReport:
    d = vs.d
    target = 2 * symmetric_projector(d) / (d * (d + 1))
    dist = float(np.linalg.norm(frame_operator(vs) - target))
    return DesignReport(hs_distance=dist, is_design=dist <= tolerance, tolerance=tolerance)


# ---------- Approximativa designs ----------
def chernoff_sample_size(d: int, eps: float, q: float) -> int:
    """Smallest m with m >= 4(d+1) ln2 / eps^2 * ln[2(d^2-1)/(1-q)]."""
    if d < 2:
        raise ValidationError(f"chernoff_sample_size: d must be >= 2, got {d}")
    if not (0 < eps <= 0.5):
        raise ValidationError(f"chernoff_sample_size: eps must be in (0, 1/2], got {eps}")
    if not (0 < q < 1):
        raise ValidationError(f"chernoff_sample_size: q must be in (0, 1), got {q}")
    bound = 4 * (d + 1) * math.log(2) / eps ** 2 * math.log(2 * (d * d - 1) / (1 - q))
    return int(math.ceil(bound - 1e-9))


def sample_approx_design(d: int, m: int, rng: np.random.Generator) -> List[np.ndarray]:
    if m < 1:
        raise ValidationError(f"sample_approx_design: m must be >= 1, got {m}")
    return [haar_unitary(d, rng) for _ in range(m)]


def unitary_vectors(units: Sequence[np.ndarray]) -> VectorSet:
    """The md vectors U_b|k>, index b * d + k."""
    return mub_vectors(list(units))
