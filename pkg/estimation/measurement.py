"""
Measurements, outcome probabilities and classical Fisher information.

POVM flavours:
- OverlapPovm  the BCII-attaining measurement built at a chart point theta0:
               |b_a> = sum_b H^{-1/2}_ab lambda_b|psi>, |b_last> = |psi>,
               |m_x> = sum_c o_xc |b_c>, plus the completing effect 1 - sum_x |m_x><m_x|.
               Evaluated through the overlap engine, polynomial in n.
- DensePovm    explicit effects (or an orthonormal basis) on C^{d_A} (x) C^{d^n}
- MixturePovm  weighted union of POVMs (balanced random measurement, phase-1 measurement)
- LoccPovm     Alice's rank-one ancilla effects, then Bob's conditional OverlapPovm

Probabilities and their theta-derivatives are analytic (one- and two-insertion
overlaps), so the Fisher information is exact up to rounding. Outcomes with
p <= 1e-14 are left out of FI sums.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from estimation.qfi import FisherMatrix, attainability_defect, qfi_pure_state
from estimation.states import (
    StructuredState,
    bob_conditional,
    collective_operator,
    condition_on_ancilla,
    double_insertions,
    fourier_vector,
    from_approx_design,
    overlap,
    reduced_moments,
    single_insertions,
    to_dense,
)
from utils.errors import AttainabilityError, UnsupportedError, ValidationError
from utils.numkernel import TOL_ALGEBRA, haar_unitary, inv_sqrt_spd, kron_power, orthonormal_span
from utils.sud import Chart, tangent_at, unitary_at

PROB_FLOOR = 1e-14
DENSE_CAP = 4096


@dataclass(frozen=True)
class OutcomeDistribution:
    probabilities: np.ndarray
    clipped: float = 0.0  # largest negative value set to zero

    def __post_init__(self):
        total = float(np.sum(self.probabilities))
        if abs(total - 1.0) > 1e-10:
            raise ValidationError(f"OutcomeDistribution: probabilities sum to {total:.12f}")


def _theta(chart: Chart, theta) -> np.ndarray:
    return np.zeros(chart.dim) if theta is None else np.asarray(theta, dtype=float)


def householder_to_uniform(size: int) -> np.ndarray:
    """Real orthogonal o with o[:, -1] = (1, ..., 1)/sqrt(size)."""
    target = np.full(size, 1 / np.sqrt(size))
    e = np.zeros(size)
    e[-1] = 1.0
    w = e - target
    if np.linalg.norm(w) < 1e-15:
        return np.eye(size)
    return np.eye(size) - 2 * np.outer(w, w) / (w @ w)


class Povm(ABC):
    """Mätning på strukturerade tillstånd; sannolikheter i fast utfallsordning."""

    @property
    @abstractmethod
    def outcomes(self) -> int: ...

    @abstractmethod
    def probabilities(self, state: StructuredState, chart: Chart, theta) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, state: StructuredState, chart: Chart, theta) -> Tuple[np.ndarray, np.ndarray]:
        """(p, dp) with dp[g, x] = d p_x / d theta_g."""


# ---------- Optimal (kollektiv) mätning ----------
@dataclass(frozen=True)
class OverlapPovm(Povm):
    reference: StructuredState
    u0: np.ndarray
    generators: np.ndarray  # t_a(theta0), (K, d, d)
    coeffs: np.ndarray  # (r, K), rows define |b_a>
    means: np.ndarray  # <T_a> in the reference state
    o: np.ndarray  # (r+1, r+1)
    theta0: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def outcomes(self) -> int:
        return self.o.shape[0] + 1

    def _amplitudes(self, state, chart, theta):
        w = self.u0.conj().T @ unitary_at(chart, _theta(chart, theta))
        a_last = overlap(self.reference, u=w, ket=state)
        s = single_insertions(self.reference, self.generators, u=w, ket=state)
        a_alpha = self.coeffs @ (2j * (s - self.means * a_last))
        return w, np.concatenate([a_alpha, [a_last]])

    def probabilities(self, state, chart, theta) -> np.ndarray:
        _, amps = self._amplitudes(state, chart, theta)
        p = np.abs(self.o @ amps) ** 2
        residual = state.norm_squared() - p.sum()
        return np.concatenate([p, [residual]])

    def jacobian(self, state, chart, theta):
        theta = _theta(chart, theta)
        w, amps = self._amplitudes(state, chart, theta)
        moved = np.einsum("ab,gbc,dc->gad", w, tangent_at(chart, theta), w.conj())
        da_last = -1j * single_insertions(self.reference, moved, u=w, ket=state)
        both = double_insertions(self.reference, self.generators, moved, u=w, ket=state)
        da_alpha = self.coeffs @ (2j * (-1j * both - np.outer(self.means, da_last)))
        d_amps = np.vstack([da_alpha, da_last[None, :]])
        m = self.o @ amps
        dm = self.o @ d_amps
        dp = 2 * (m.conj()[:, None] * dm).real
        p = np.abs(m) ** 2
        p_all = np.concatenate([p, [state.norm_squared() - p.sum()]])
        dp_all = np.vstack([dp, -dp.sum(axis=0, keepdims=True)])
        return p_all, dp_all.T

    def gram(self) -> np.ndarray:
        """Gram matrix of {|b_c>}; the identity when the construction is valid."""
        ref = self.reference
        second = double_insertions(ref, self.generators, self.generators)
        cov = second - np.outer(self.means, self.means)
        g_alpha = 4 * self.coeffs @ cov @ self.coeffs.T
        centered = single_insertions(ref, self.generators) - self.means * ref.norm_squared()
        cross = self.coeffs @ (-2j * centered)
        r = self.coeffs.shape[0]
        g = np.zeros((r + 1, r + 1), dtype=complex)
        g[:r, :r] = g_alpha
        g[:r, r] = cross
        g[r, :r] = cross.conj()
        g[r, r] = ref.norm_squared()
        return g


def optimal_povm(
    state: StructuredState,
    chart: Chart,
    theta=None,
    allow_singular: bool = False,
) -> OverlapPovm:
    """
    The measurement that turns the BCII into an equality at theta.
    With allow_singular the construction is restricted to the support of a
    rank-deficient QFI (Bob's conditional states at n = 2 need this).
    """
    theta0 = _theta(chart, theta)
    ref = state.normalized()
    t = tangent_at(chart, theta0)
    defect = attainability_defect(reduced_moments(ref, two_copy=False), t)
    if defect > 1e-10:
        raise AttainabilityError(
            f"optimal_povm: tr(rho1 [t_a, t_b]) reaches {defect:.3e}; the bound is not attainable here, "
            "use the random measurement instead"
        )
    h = qfi_pure_state(ref, t).entries
    if allow_singular:
        w, v = np.linalg.eigh(h)
        keep = w > 1e-10 * max(1.0, w[-1])
        if not np.any(keep):
            raise AttainabilityError("optimal_povm: QFI vanishes, nothing to estimate")
        coeffs = (v[:, keep] / np.sqrt(w[keep])).T
    else:
        try:
            coeffs = inv_sqrt_spd(h)
        except ValidationError as e:
            raise AttainabilityError(f"optimal_povm: singular QFI ({e})") from e
    povm = OverlapPovm(
        reference=ref,
        u0=unitary_at(chart, theta0),
        generators=t,
        coeffs=coeffs,
        means=single_insertions(ref, t),
        o=householder_to_uniform(coeffs.shape[0] + 1),
        theta0=theta0,
    )
    dev = float(np.linalg.norm(povm.gram() - np.eye(coeffs.shape[0] + 1)))
    if dev > TOL_ALGEBRA:
        raise AttainabilityError(f"optimal_povm: vectors b_c not orthonormal (Gram deviation {dev:.3e})")
    return povm


# ---------- Dense mätningar ----------
def _dense_state(state: StructuredState, chart: Chart, theta, ancilla_dim: int):
    """psi(theta) och d psi / d theta_g i hela rummet."""
    theta = _theta(chart, theta)
    u = unitary_at(chart, theta)
    big = np.kron(np.eye(ancilla_dim), kron_power(u, state.n))
    omega = to_dense(state, ancilla_dim)
    psi = big @ omega
    dpsi = np.array([
        -1j * big @ (collective_operator(g, state.n, ancilla_dim) @ omega)
        for g in tangent_at(chart, theta)
    ])
    return psi, dpsi


def _check_dense(state: StructuredState, ancilla_dim: int, dense_cap: int) -> int:
    dim = ancilla_dim * state.d ** state.n
    if dim > dense_cap:
        raise UnsupportedError(
            f"dense regime: full dimension {dim} exceeds the cap {dense_cap} (raise it with --dense-cap)"
        )
    return dim


@dataclass(frozen=True)
class DensePovm(Povm):
    ancilla_dim: int
    effects: Optional[np.ndarray] = None  # (M, D, D)
    basis: Optional[np.ndarray] = None  # (D, D) unitary, columns = outcomes

    def __post_init__(self):
        if (self.effects is None) == (self.basis is None):
            raise ValidationError("DensePovm: give exactly one of effects or basis")
        if self.effects is not None:
            eff = np.asarray(self.effects, dtype=complex)
            dim = eff.shape[1]
            deficit = float(np.linalg.norm(eff.sum(axis=0) - np.eye(dim), 2))
            if deficit > TOL_ALGEBRA:
                raise ValidationError(f"DensePovm: effects do not sum to identity (deficit {deficit:.3e})")
            lowest = min(float(np.linalg.eigvalsh((e + e.conj().T) / 2)[0]) for e in eff)
            if lowest < -1e-10:
                raise ValidationError(f"DensePovm: effect not PSD (min eigenvalue {lowest:.3e})")
            object.__setattr__(self, "effects", eff)
        else:
            b = np.asarray(self.basis, dtype=complex)
            dev = float(np.linalg.norm(b.conj().T @ b - np.eye(b.shape[0])))
            if dev > TOL_ALGEBRA:
                raise ValidationError(f"DensePovm: basis not orthonormal (deviation {dev:.3e})")
            object.__setattr__(self, "basis", b)

    @property
    def outcomes(self) -> int:
        return self.basis.shape[1] if self.basis is not None else self.effects.shape[0]

    def probabilities(self, state, chart, theta) -> np.ndarray:
        psi, _ = _dense_state(state, chart, theta, self.ancilla_dim)
        if self.basis is not None:
            return np.abs(self.basis.conj().T @ psi) ** 2
        return np.einsum("a,mab,b->m", psi.conj(), self.effects, psi).real

    def jacobian(self, state, chart, theta):
        psi, dpsi = _dense_state(state, chart, theta, self.ancilla_dim)
        return _dense_jacobian(self, psi, dpsi)

    def to_json(self) -> List[List[List[List[float]]]]:
        mats = self.effects if self.effects is not None else np.einsum("ak,bk->kab", self.basis, self.basis.conj())
        return [[[[float(z.real), float(z.imag)] for z in row] for row in m] for m in mats]

    @classmethod
    def from_json(cls, data: Sequence[Sequence[Sequence[Sequence[float]]]], ancilla_dim: int = 1) -> "DensePovm":
        """Effekter som skrivna av to_json; basformen kommer tillbaka som rang-ett-effekter."""
        try:
            arr = np.asarray(data, dtype=float)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"DensePovm JSON: malformed matrices ({e})") from e
        if arr.ndim != 4 or arr.shape[-1] != 2 or arr.shape[1] != arr.shape[2]:
            raise ValidationError(f"DensePovm JSON: expected (M, D, D, 2) entries, got shape {arr.shape}")
        return cls(ancilla_dim=ancilla_dim, effects=arr[..., 0] + 1j * arr[..., 1])


def _dense_jacobian(povm: DensePovm, psi: np.ndarray, dpsi: np.ndarray):
    if povm.basis is not None:
        amp = povm.basis.conj().T @ psi
        damp = dpsi @ povm.basis.conj()
        return np.abs(amp) ** 2, 2 * (amp.conj()[None, :] * damp).real
    p = np.einsum("a,mab,b->m", psi.conj(), povm.effects, psi).real
    dp = 2 * np.einsum("a,mab,gb->gm", psi.conj(), povm.effects, dpsi).real
    return p, dp


@dataclass(frozen=True)
class MixturePovm(Povm):
    components: Tuple[Povm, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValidationError("MixturePovm: weights must be non-negative, one per component, summing to 1")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", w)

    @property
    def outcomes(self) -> int:
        return sum(c.outcomes for c in self.components)

    def probabilities(self, state, chart, theta) -> np.ndarray:
        return np.concatenate([w * c.probabilities(state, chart, theta) for w, c in zip(self.weights, self.components)])

    def jacobian(self, state, chart, theta):
        parts = [c.jacobian(state, chart, theta) for c in self.components]
        p = np.concatenate([w * pp for w, (pp, _) in zip(self.weights, parts)])
        dp = np.hstack([w * dd for w, (_, dd) in zip(self.weights, parts)])
        return p, dp


# ---------- Generiska funktioner ----------
def outcome_probabilities(povm: Povm, state: StructuredState, chart: Chart, theta=None) -> OutcomeDistribution:
    p = np.asarray(povm.probabilities(state, chart, theta), dtype=float)
    clipped = float(max(0.0, -p.min())) if p.size else 0.0
    p = np.clip(p, 0.0, None)
    return OutcomeDistribution(probabilities=p / p.sum(), clipped=clipped)


def fisher_information(
    povm: Povm,
    state: StructuredState,
    chart: Chart,
    theta=None,
    method: str = "analytic",
    step: float = 1e-5,
) -> FisherMatrix:
    """Classical FI over outcomes with p > 1e-14. method='finite' uses central differences."""
    theta = _theta(chart, theta)
    if method == "analytic":
        p, dp = povm.jacobian(state, chart, theta)
    elif method == "finite":
        p = povm.probabilities(state, chart, theta)
        rows = []
        for g in range(chart.dim):
            e = np.zeros(chart.dim)
            e[g] = step
            rows.append((povm.probabilities(state, chart, theta + e) - povm.probabilities(state, chart, theta - e)) / (2 * step))
        dp = np.array(rows)
    else:
        raise ValidationError(f"fisher_information: unknown method {method!r}")
    keep = p > PROB_FLOOR
    scaled = dp[:, keep] / p[keep]
    return FisherMatrix(scaled @ dp[:, keep].T)


# ---------- Slumpmätningen ----------
def sld_vectors(state: StructuredState, chart: Chart, theta=None, ancilla_dim: Optional[int] = None):
    """psi and lambda_a|psi> = 2 (1 - |psi><psi|) d_a psi on the dense space."""
    da = state.ancilla_dim if ancilla_dim is None else ancilla_dim
    psi, dpsi = _dense_state(state.normalized(), chart, theta, da)
    lam = 2 * (dpsi - np.outer(dpsi @ psi.conj(), psi))
    return psi, lam


def y_operator(state: StructuredState, chart: Chart, theta=None) -> np.ndarray:
    """Y = 1_R + i 1_L with L = span{lambda_a|psi>}."""
    _, lam = sld_vectors(state, chart, theta)
    q = orthonormal_span(lam.T)
    proj = q @ q.conj().T
    return np.eye(proj.shape[0]) - proj + 1j * proj


def random_measurement_pair(
    basis_choice: np.ndarray,
    state: StructuredState,
    chart: Chart,
    theta=None,
    dense_cap: int = DENSE_CAP,
) -> Tuple[DensePovm, DensePovm]:
    """Basis {U|k>} and its partner {Y U|k>}; their FIs add up to the QFI."""
    da = state.ancilla_dim
    dim = _check_dense(state, da, dense_cap)
    u = np.asarray(basis_choice, dtype=complex)
    if u.shape != (dim, dim):
        raise ValidationError(f"random_measurement_pair: basis must be {dim}x{dim}, got {u.shape}")
    y = y_operator(state, chart, theta)
    return DensePovm(ancilla_dim=da, basis=u), DensePovm(ancilla_dim=da, basis=y @ u)


def random_measurement_fi(
    state: StructuredState,
    chart: Chart,
    draws: int,
    rng: np.random.Generator,
    theta=None,
    dense_cap: int = DENSE_CAP,
    progress: bool = False,
) -> FisherMatrix:
    """Monte-Carlo average of the FI of Haar-random bases; `stderr` holds the per-entry standard error."""
    da = state.ancilla_dim
    dim = _check_dense(state, da, dense_cap)
    psi, dpsi = _dense_state(state.normalized(), chart, theta, da)
    samples = np.empty((draws, chart.dim, chart.dim))
    for i in tqdm(range(draws), desc="random bases", disable=not progress):
        povm = DensePovm(ancilla_dim=da, basis=haar_unitary(dim, rng))
        p, dp = _dense_jacobian(povm, psi, dpsi)
        keep = p > PROB_FLOOR
        samples[i] = (dp[:, keep] / p[keep]) @ dp[:, keep].T
    mean = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / np.sqrt(draws) if draws > 1 else None
    return FisherMatrix(mean, stderr=stderr)


def random_pair_mixture(
    state: StructuredState,
    chart: Chart,
    pairs: int,
    rng: np.random.Generator,
    theta=None,
    dense_cap: int = DENSE_CAP,
) -> MixturePovm:
    """Balanced mixture of `pairs` Haar bases and their Y partners: FI = QFI/2 at theta."""
    dim = _check_dense(state, state.ancilla_dim, dense_cap)
    comps: List[Povm] = []
    for _ in range(pairs):
        comps.extend(random_measurement_pair(haar_unitary(dim, rng), state, chart, theta, dense_cap))
    return MixturePovm(components=tuple(comps), weights=np.full(len(comps), 1 / len(comps)))


# ---------- LOCC ----------
def alice_fourier_vectors(num_bases: int, d: int) -> np.ndarray:
    """Rader |b> (x) |f_k>, b-major, på en ancilla märkt b * d + l."""
    rows = np.zeros((num_bases * d, num_bases * d), dtype=complex)
    for b in range(num_bases):
        for k in range(d):
            rows[b * d + k, b * d:(b + 1) * d] = fourier_vector(d, k)
    return rows


@dataclass(frozen=True)
class LoccPovm(Povm):
    alice: np.ndarray  # (A, d_A) rank-one ancilla effects |a><a|
    bob: Tuple[Optional[Povm], ...]

    @property
    def outcomes(self) -> int:
        return sum(1 if b is None else b.outcomes for b in self.bob)

    def probabilities(self, state, chart, theta) -> np.ndarray:
        parts = []
        for a, bob in zip(self.alice, self.bob):
            cond = condition_on_ancilla(state, a)
            parts.append([cond.norm_squared()] if bob is None else bob.probabilities(cond, chart, theta))
        return np.concatenate(parts)

    def jacobian(self, state, chart, theta):
        ps, dps = [], []
        for a, bob in zip(self.alice, self.bob):
            cond = condition_on_ancilla(state, a)
            if bob is None:
                ps.append([cond.norm_squared()])
                dps.append(np.zeros((chart.dim, 1)))
            else:
                p, dp = bob.jacobian(cond, chart, theta)
                ps.append(p)
                dps.append(dp)
        return np.concatenate(ps), np.hstack(dps)


@dataclass(frozen=True)
class LoccPlan:
    input_state: StructuredState
    alice_probabilities: np.ndarray  # (num_bases, d)
    povm: LoccPovm
    conditional_fi: Dict[Tuple[int, int], FisherMatrix]
    averaged_fi: FisherMatrix

    def summary(self) -> Dict[str, Any]:
        return {
            "alice_probabilities": self.alice_probabilities.tolist(),
            "averaged_fi": self.averaged_fi.entries.tolist(),
            "trace_inverse": self.averaged_fi.trace_inverse(),
        }


def locc_protocol(bases: Sequence[np.ndarray], n: int, chart: Chart, theta=None) -> LoccPlan:
    """
    Alice mäter |b><b| (x) |f_k><f_k| på ancillan, Bob gör den optimala mätningen
    för sitt betingade tillstånd. Fungerar för MUB:ar och för Haar-baser.
    """
    if len(bases) < 1:
        raise UnsupportedError("locc_protocol: no bases available")
    if n < 2:
        raise UnsupportedError(
            "locc_protocol: needs n >= 2; at n = 1 Bob's conditional states are pure single-copy states "
            "and the bound cannot be attained"
        )
    d = np.asarray(bases[0]).shape[0]
    theta = _theta(chart, theta)
    state = from_approx_design(bases, n)
    alice = alice_fourier_vectors(len(bases), d)
    probs = np.zeros((len(bases), d))
    bobs: List[Optional[Povm]] = []
    cond_fi: Dict[Tuple[int, int], FisherMatrix] = {}
    for b in range(len(bases)):
        for k in range(d):
            probs[b, k] = condition_on_ancilla(state, alice[b * d + k]).norm_squared()
            cond = bob_conditional(bases, b, k, n)
            bob = optimal_povm(cond, chart, theta, allow_singular=True)
            bobs.append(bob)
            cond_fi[(b, k)] = fisher_information(bob, cond, chart, theta)
    povm = LoccPovm(alice=alice, bob=tuple(bobs))
    return LoccPlan(
        input_state=state,
        alice_probabilities=probs,
        povm=povm,
        conditional_fi=cond_fi,
        averaged_fi=fisher_information(povm, state, chart, theta),
    )
