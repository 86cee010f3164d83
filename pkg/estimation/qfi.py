"""
Quantum Fisher information and the closed-form optimum.

- qfi_from_moments: H_ab = 4n( Re tr[rho1 t_a t_b] + (n-1) tr[rho2 t_a (x) t_b] - n tr[rho1 t_a] tr[rho1 t_b] )
- qfi_pure_state: same quantity straight from the overlap engine (any chart point)
- attainability_defect: max |tr(rho1 [t_a, t_b])|, zero iff the BCII can be saturated
- optimal_qfi / optimal_cn: 4n(n+d)/(d(d+1)) I and d(d+1)^2(d-1)/(4n(n+d))
- h_n_single / approx_design_qfi: QFI of Haar-basis inputs; concentration_experiment
- qfi_locc_conditional: the k-independent QFI of Bob's Fourier-conditioned state
- mixed_state_qfi / bob_alone_qfi / separable_qfi_bound: what Bob gets without the ancilla

All matrices are expressed in the chart coordinates; at the chart origin the
generators are trace-orthonormal, which is where the closed forms hold verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from estimation.designs import chernoff_sample_size, sample_approx_design
from estimation.states import (
    ReducedMoments,
    StructuredState,
    collective_operator,
    condition_on_ancilla,
    double_insertions,
    dense_evolve,
    single_insertions,
)
from utils.errors import ValidationError
from utils.numkernel import TOL_ALGEBRA, hermitian_eig, inv_sqrt_spd, kron_power, partial_trace
from utils.sud import Chart, GeneratorBasis, gell_mann_basis, tangent_at, unitary_at


@dataclass(frozen=True)
class FisherMatrix:
    entries: np.ndarray
    stderr: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        h = np.asarray(self.entries, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValidationError(f"FisherMatrix: expected a square matrix, got shape {h.shape}")
        asym = float(np.linalg.norm(h - h.T) / max(1.0, np.linalg.norm(h)))
        if asym > 1e-8:
            raise ValidationError(f"FisherMatrix: not symmetric (relative asymmetry {asym:.3e})")
        h = (h + h.T) / 2
        lo = float(np.linalg.eigvalsh(h)[0]) if h.size else 0.0
        if lo < -1e-10 * max(1.0, np.linalg.norm(h)):
            raise ValidationError(f"FisherMatrix: not positive semidefinite (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "entries", h)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def trace_inverse(self) -> float:
        """Tr H^{-1}; inf when H is (numerically) singular."""
        w = self.eigenvalues()
        if w[0] <= 1e-12 * max(1.0, w[-1]):
            return float("inf")
        return float(np.sum(1.0 / w))

    def __add__(self, other: "FisherMatrix") -> "FisherMatrix":
        return FisherMatrix(self.entries + other.entries)

    def scaled(self, c: float) -> "FisherMatrix":
        return FisherMatrix(self.entries * c)


BasisLike = Union[GeneratorBasis, Chart, Sequence[np.ndarray], np.ndarray]


def _generators(basis: BasisLike, theta=None) -> np.ndarray:
    if isinstance(basis, Chart):
        return tangent_at(basis, np.zeros(basis.dim) if theta is None else theta)
    if isinstance(basis, GeneratorBasis):
        if theta is not None and np.any(theta):
            return tangent_at(Chart(basis), theta)
        return basis.t
    return np.asarray(basis, dtype=complex)


# ---------- Lemma-formler ----------
def qfi_from_moments(moments: ReducedMoments, n: int, basis: BasisLike) -> FisherMatrix:
    if n < 1:
        raise ValidationError(f"qfi_from_moments: n must be >= 1, got {n}")
    if n >= 2 and moments.rho2 is None:
        raise ValidationError("qfi_from_moments: rho2 is required for n >= 2")
    t = _generators(basis)
    rho1 = moments.rho1
    first = np.einsum("ab,pbc,qca->pq", rho1, t, t).real
    mean = np.einsum("ab,pba->p", rho1, t).real
    h = first - n * np.outer(mean, mean)
    if n >= 2:
        pairs = np.einsum("pab,qcd->pqacbd", t, t).reshape(len(t), len(t), rho1.size, rho1.size)
        second = np.einsum("ba,pqab->pq", moments.rho2, pairs).real
        h = h + (n - 1) * second
    return FisherMatrix(4 * n * h)


def qfi_pure_state(state: StructuredState, basis: BasisLike, theta=None) -> FisherMatrix:
    """4 Re[<T_a T_b> - <T_a><T_b>] with T_a = sum_p t_a(theta)_p, via the overlap engine."""
    t = _generators(basis, theta)
    norm = state.norm_squared()
    mean = single_insertions(state, t) / norm
    second = double_insertions(state, t, t) / norm
    return FisherMatrix(4 * (second - np.outer(mean, mean)).real)


def attainability_defect(moments: ReducedMoments, basis: BasisLike) -> float:
    t = _generators(basis)
    comm = np.einsum("pab,qbc->pqac", t, t) - np.einsum("qab,pbc->pqac", t, t)
    vals = np.einsum("ba,pqab->pq", moments.rho1, comm)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def optimal_qfi(d: int, n: int) -> FisherMatrix:
    if d < 2 or n < 1:
        raise ValidationError(f"optimal_qfi: need d >= 2 and n >= 1, got d={d}, n={n}")
    return FisherMatrix(4 * n * (n + d) / (d * (d + 1)) * np.eye(d * d - 1))


def optimal_cn(d: int, n: int) -> float:
    if d < 2 or n < 1:
        raise ValidationError(f"optimal_cn: need d >= 2 and n >= 1, got d={d}, n={n}")
    return d * (d + 1) ** 2 * (d - 1) / (4 * n * (n + d))


# ---------- Approximativa designs ----------
def h_n_single(u, n: int, basis: BasisLike) -> FisherMatrix:
    """(4n/d)[delta_ab + (n-1) sum_k <k|U^dag t_a U|k><k|U^dag t_b U|k>]."""
    u = np.asarray(u, dtype=complex)
    t = _generators(basis)
    d = u.shape[0]
    diag = np.einsum("ak,pab,bk->pk", u.conj(), t, u).real
    return FisherMatrix(4 * n / d * (np.eye(len(t)) + (n - 1) * diag @ diag.T))


def approx_design_qfi(units: Sequence[np.ndarray], n: int, basis: BasisLike) -> FisherMatrix:
    """H_n(U_1..U_m) = (1/m) sum_b h_n(U_b)."""
    total = sum(h_n_single(u, n, basis).entries for u in units)
    return FisherMatrix(total / len(units))


def relative_spectrum(h: FisherMatrix, reference: FisherMatrix) -> np.ndarray:
    """Eigenvalues of R^{-1/2} (H - R) R^{-1/2}; |H - R| <= eps R iff all lie in [-eps, eps]."""
    s = inv_sqrt_spd(reference.entries)
    return np.linalg.eigvalsh(s @ (h.entries - reference.entries) @ s)


@dataclass(frozen=True)
class ConcentrationReport:
    d: int
    n: int
    eps: float
    q: float
    m: int
    low: np.ndarray  # smallest relative eigenvalue per repeat
    high: np.ndarray  # largest relative eigenvalue per repeat

    @property
    def violations(self) -> np.ndarray:
        return (self.low < -self.eps) | (self.high > self.eps)

    @property
    def violation_fraction(self) -> float:
        return float(np.mean(self.violations))

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= 1 - self.q


def concentration_experiment(
    d: int,
    n: int,
    eps: float,
    q: float,
    repeats: int,
    rng: np.random.Generator,
    m: Optional[int] = None,
    progress: bool = False,
) -> ConcentrationReport:
    """Draw `repeats` independent approximate designs of size m and test (1-eps)H0 <= H <= (1+eps)H0."""
    m = chernoff_sample_size(d, eps, q) if m is None else m
    basis = gell_mann_basis(d)
    h0 = optimal_qfi(d, n)
    streams = rng.spawn(repeats)
    low, high = np.empty(repeats), np.empty(repeats)
    for r, stream in enumerate(tqdm(streams, desc="concentration", disable=not progress)):
        units = sample_approx_design(d, m, stream)
        rel = relative_spectrum(approx_design_qfi(units, n, basis), h0)
        low[r], high[r] = rel[0], rel[-1]
    return ConcentrationReport(d=d, n=n, eps=eps, q=q, m=m, low=low, high=high)


# ---------- LOCC ----------
def qfi_locc_conditional(bases: Sequence[np.ndarray], b: int, k: int, n: int, basis: BasisLike) -> FisherMatrix:
    """
    (4n/d)[delta_ab + (n-1) sum_l <phi^b_l|t_a|phi^b_l><phi^b_l|t_b|phi^b_l>].

    Den k-oberoende delen av den betingade QFI:n. Den är lika med QFI för
    bob_conditional när n >= 3; vid n = 2 gäller det bara medelvärdet över k.
    """
    if not 0 <= b < len(bases):
        raise ValidationError(f"qfi_locc_conditional: b={b} out of range 0..{len(bases) - 1}")
    d = np.asarray(bases[b]).shape[0]
    if not 0 <= k < d:
        raise ValidationError(f"qfi_locc_conditional: k={k} out of range 0..{d - 1}")
    return h_n_single(bases[b], n, basis)


def conditional_qfi_average(state: StructuredState, alice_vectors: np.ndarray, basis: BasisLike, theta=None) -> FisherMatrix:
    """sum_a p_a H(Bob's state given outcome a) for a rank-one ancilla measurement {|a><a|}."""
    t = _generators(basis, theta)
    total = np.zeros((len(t), len(t)))
    for a in np.asarray(alice_vectors):
        cond = condition_on_ancilla(state, a)
        prob = cond.norm_squared()
        if prob <= 1e-14:
            continue
        total += prob * qfi_pure_state(cond.normalized(), t).entries
    return FisherMatrix(total)


# ---------- Blandade tillstånd (dense) ----------
def mixed_state_qfi(rho: np.ndarray, drhos: Sequence[np.ndarray], cutoff: float = 1e-12) -> FisherMatrix:
    """H_ab = 2 sum_{jk: l_j + l_k > 0} Re(<j|d_a rho|k><k|d_b rho|j>) / (l_j + l_k)."""
    eig = hermitian_eig(rho)
    lam, v = eig.eigenvalues, eig.eigenvectors
    rotated = np.array([v.conj().T @ dr @ v for dr in drhos])
    denom = lam[:, None] + lam[None, :]
    keep = denom > cutoff
    inv = np.where(keep, 1.0 / np.where(keep, denom, 1.0), 0.0)
    h = 2 * np.einsum("ajk,bkj,jk->ab", rotated, rotated, inv).real
    return FisherMatrix(h)


def bob_alone_qfi(state: StructuredState, chart: Chart, theta=None) -> FisherMatrix:
    """QFI för Bobs reducerade tillstånd (ancillan utspårad); tät, bara litet n."""
    theta = np.zeros(chart.dim) if theta is None else np.asarray(theta, dtype=float)
    u = unitary_at(chart, theta)
    t = tangent_at(chart, theta)
    da, dn = state.ancilla_dim, state.d ** state.n
    psi = dense_evolve(state.normalized(), u)
    rho = partial_trace(np.outer(psi, psi.conj()), [da, dn], keep=[1])
    big_u = np.kron(np.eye(da), kron_power(u, state.n))
    drhos = []
    for gen in t:
        dpsi = -1j * big_u @ collective_operator(gen, state.n, da) @ (big_u.conj().T @ psi)
        full = np.outer(dpsi, psi.conj()) + np.outer(psi, dpsi.conj())
        drhos.append(partial_trace(full, [da, dn], keep=[1]))
    return mixed_state_qfi(rho, drhos)


def separable_qfi_bound(state: StructuredState, basis: BasisLike) -> FisherMatrix:
    """
    Konvexitetsgräns för Bobs QFI när alla ancilla-etiketter är olika:
    sum_i |c_i|^2 4n Cov_{v_i}(t_a, t_b), linjär i n.
    """
    if len(np.unique(state.labels)) != state.branches:
        raise ValidationError("separable_qfi_bound: needs distinct ancilla labels (Bob's state is then a mixture of products)")
    t = _generators(basis)
    weights = np.abs(state.coeffs) ** 2
    weights = weights / weights.sum()
    total = np.zeros((len(t), len(t)))
    for w, vec in zip(weights, state.vectors):
        mean = np.einsum("a,pab,b->p", vec.conj(), t, vec).real
        second = np.einsum("a,pab,qbc,c->pq", vec.conj(), t, t, vec).real
        total += w * 4 * state.n * (second - np.outer(mean, mean))
    return FisherMatrix(total)


def within(h: FisherMatrix, target: FisherMatrix, tol: float = TOL_ALGEBRA) -> bool:
    return bool(np.linalg.norm(h.entries - target.entries) <= tol)
