"""
Factored input states on ancilla (x) (C^d)^{(x)n}.

A StructuredState is a list of branches (ancilla label, coefficient, vector);
the state is sum_i c_i |label_i> (x) |v_i>^{(x)n}. Labels index an orthonormal
ancilla basis, so branches with different labels never interfere.

Everything the estimation code needs (norms, reduced moments, expectation
values of collective generators T = sum_p t_p and their products) reduces to
d x d brackets between branch vectors raised to powers of n. The d^n space is
only materialized by `to_dense`, which the tests use as an oracle.

Builders:
- from_design        (1/sqrt(m)) sum_i |i> (x) |t_i>^n
- from_approx_design (1/sqrt(md)) sum_{b,k} |bk> (x) (U_b|k>)^n
- bob_conditional    Fourier-conditioned system state after Alice's ancilla outcome
- product_baseline   |t>^n (no ancilla)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np

from estimation.designs import VectorSet
from utils.errors import UnsupportedError, ValidationError
from utils.numkernel import kron, kron_power, partial_trace


@dataclass(frozen=True)
class StructuredState:
    d: int
    n: int
    labels: np.ndarray  # (B,) int
    coeffs: np.ndarray  # (B,) complex
    vectors: np.ndarray  # (B, d) complex, unit rows

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"StructuredState: n must be >= 1, got {self.n}")
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        coeffs = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        if not (labels.shape[0] == coeffs.shape[0] == vecs.shape[0]) or vecs.shape[1] != self.d:
            raise ValidationError(
                f"StructuredState: inconsistent branch arrays labels={labels.shape} coeffs={coeffs.shape} vectors={vecs.shape}"
            )
        if labels.size and labels.min() < 0:
            raise ValidationError("StructuredState: ancilla labels must be >= 0")
        worst = float(np.max(np.abs(np.linalg.norm(vecs, axis=1) - 1.0))) if vecs.size else 0.0
        if worst > 1e-12:
            raise ValidationError(f"StructuredState: branch vectors not normalized (worst deviation {worst:.3e})")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "vectors", vecs)

    @property
    def branches(self) -> int:
        return self.labels.shape[0]

    @property
    def ancilla_dim(self) -> int:
        return int(self.labels.max()) + 1 if self.branches else 1

    def norm_squared(self) -> float:
        return float(overlap(self).real)

    def normalized(self) -> "StructuredState":
        return StructuredState(self.d, self.n, self.labels, self.coeffs / np.sqrt(self.norm_squared()), self.vectors)

    # JSON: {d, n, branches: [{label, coeff: [re, im], vec: [[re, im], ...]}]}
    def to_json(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "n": self.n,
            "branches": [
                {
                    "label": int(lab),
                    "coeff": [float(c.real), float(c.imag)],
                    "vec": [[float(z.real), float(z.imag)] for z in vec],
                }
                for lab, c, vec in zip(self.labels, self.coeffs, self.vectors)
            ],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "StructuredState":
        try:
            branches = data["branches"]
            return cls(
                d=int(data["d"]),
                n=int(data["n"]),
                labels=[int(b["label"]) for b in branches],
                coeffs=[complex(*b["coeff"]) for b in branches],
                vectors=[[complex(re, im) for re, im in b["vec"]] for b in branches],
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"StructuredState JSON: missing or malformed field ({e})") from e


@dataclass(frozen=True)
class ReducedMoments:
    rho1: np.ndarray
    rho2: Optional[np.ndarray] = None


# ---------- Byggare ----------
def from_design(vs: VectorSet, n: int) -> StructuredState:
    m = vs.m
    return StructuredState(vs.d, n, np.arange(m), np.full(m, 1 / np.sqrt(m)), vs.vectors)


def from_approx_design(units: Sequence[np.ndarray], n: int) -> StructuredState:
    if len(units) < 1:
        raise ValidationError("from_approx_design: need at least one unitary")
    d = units[0].shape[0]
    vecs = np.array([u[:, k] for u in units for k in range(d)])
    md = vecs.shape[0]
    return StructuredState(d, n, np.arange(md), np.full(md, 1 / np.sqrt(md)), vecs)


def fourier_vector(d: int, k: int) -> np.ndarray:
    """|f_k> = (1/sqrt(d)) sum_l exp(2 pi i k l / d) |l>."""
    return np.exp(2j * np.pi * k * np.arange(d) / d) / np.sqrt(d)


def bob_conditional(bases: Sequence[np.ndarray], b: int, k: int, n: int) -> StructuredState:
    """
    Bobs tillstånd efter att Alice fått utfallet (b, k) med |b><b| (x) |f_k><f_k|:
    (1/sqrt(d)) sum_l exp(-2 pi i k l / d) |phi^b_l>^n. Index börjar på 0.
    `bases` kan vara MUB:ar eller valfri lista av d x d unitärer (approximativa designer).
    """
    if not 0 <= b < len(bases):
        raise ValidationError(f"bob_conditional: b={b} out of range 0..{len(bases) - 1}")
    basis = np.asarray(bases[b])
    d = basis.shape[0]
    if not 0 <= k < d:
        raise ValidationError(f"bob_conditional: k={k} out of range 0..{d - 1}")
    coeffs = fourier_vector(d, k).conj()
    return StructuredState(d, n, np.zeros(d, dtype=int), coeffs, basis.T)


def product_baseline(tau, n: int) -> StructuredState:
    vec = np.asarray(tau, dtype=complex).reshape(1, -1)
    return StructuredState(vec.shape[1], n, [0], [1.0], vec)


def condition_on_ancilla(state: StructuredState, ancilla_vector) -> StructuredState:
    """
    (<a| (x) 1) |S>, onormerat: normen i kvadrat är sannolikheten för
    ancilla-utfallet |a><a|. Alla etiketter blir 0.
    """
    a = np.asarray(ancilla_vector, dtype=complex).reshape(-1)
    if a.shape[0] < state.ancilla_dim:
        raise ValidationError(
            f"condition_on_ancilla: ancilla vector has length {a.shape[0]}, state needs {state.ancilla_dim}"
        )
    coeffs = state.coeffs * a[state.labels].conj()
    return StructuredState(state.d, state.n, np.zeros(state.branches, dtype=int), coeffs, state.vectors)


def random_structured_state(
    d: int,
    n: int,
    branches: int,
    rng: np.random.Generator,
    ancilla_dim: Optional[int] = None,
) -> StructuredState:
    """Random vectors and coefficients; labels drawn from range(ancilla_dim) (default: all distinct)."""
    vecs = rng.standard_normal((branches, d)) + 1j * rng.standard_normal((branches, d))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    coeffs = rng.standard_normal(branches) + 1j * rng.standard_normal(branches)
    labels = np.arange(branches) if ancilla_dim is None else rng.integers(0, ancilla_dim, size=branches)
    return StructuredState(d, n, labels, coeffs, vecs).normalized()


# ---------- Overlapmotorn ----------
@dataclass(frozen=True)
class _Pairs:
    """Grenpar (i från bra, j från ket) med nollskild vikt."""
    n: int
    weight: np.ndarray  # conj(c_i) c_j * <label_i|A|label_j>
    left: np.ndarray  # conj(V v_i), rows
    right: np.ndarray  # U v_j, rows
    base: np.ndarray  # <v_i|V^dagger U|v_j>

    def power(self, k: int) -> np.ndarray:
        if k < 0:
            return np.zeros_like(self.base)
        return self.base ** k


def _pairs(bra: StructuredState, ket: StructuredState, u, v, ancilla) -> _Pairs:
    if bra.d != ket.d or bra.n != ket.n:
        raise ValidationError(f"overlap: bra (d={bra.d}, n={bra.n}) and ket (d={ket.d}, n={ket.n}) differ")
    d = bra.d
    u = np.eye(d, dtype=complex) if u is None else np.asarray(u, dtype=complex)
    v = np.eye(d, dtype=complex) if v is None else np.asarray(v, dtype=complex)
    if u.shape != (d, d) or v.shape != (d, d):
        raise ValidationError(f"overlap: operators must be {d}x{d}, got U {u.shape}, V {v.shape}")
    if ancilla is None:
        mask = (bra.labels[:, None] == ket.labels[None, :]).astype(complex)
    else:
        anc = np.asarray(ancilla, dtype=complex)
        need = max(bra.ancilla_dim, ket.ancilla_dim)
        if anc.shape[0] < need or anc.shape[1] < need:
            raise ValidationError(f"overlap: ancilla operator {anc.shape} too small for labels up to {need - 1}")
        mask = anc[np.ix_(bra.labels, ket.labels)]
    weight = bra.coeffs.conj()[:, None] * ket.coeffs[None, :] * mask
    ii, jj = np.nonzero(weight)
    left = (bra.vectors[ii] @ v.T).conj()
    right = ket.vectors[jj] @ u.T
    return _Pairs(
        n=bra.n,
        weight=weight[ii, jj],
        left=left,
        right=right,
        base=np.einsum("ea,ea->e", left, right),
    )


def _as_stack(ops) -> np.ndarray:
    stack = np.asarray(ops, dtype=complex)
    if stack.ndim == 2:
        stack = stack[None]
    return stack


def single_insertions(
    state: StructuredState,
    ops,
    u=None,
    v=None,
    ket: Optional[StructuredState] = None,
    ancilla=None,
) -> np.ndarray:
    """<S| V^dag^n (sum_p X_p) U^n |ket> for every X in the stack `ops`."""
    p = _pairs(state, state if ket is None else ket, u, v, ancilla)
    x = np.einsum("ea,pab,eb->pe", p.left, _as_stack(ops), p.right)
    return p.n * (x * (p.weight * p.power(p.n - 1))[None, :]).sum(axis=1)


def double_insertions(
    state: StructuredState,
    left_ops,
    right_ops,
    u=None,
    v=None,
    ket: Optional[StructuredState] = None,
    ancilla=None,
) -> np.ndarray:
    """<S| V^dag^n (sum_p X_p)(sum_q Y_q) U^n |ket> for all X in left_ops, Y in right_ops; shape (P, Q)."""
    p = _pairs(state, state if ket is None else ket, u, v, ancilla)
    xs, ys = _as_stack(left_ops), _as_stack(right_ops)
    lx = np.einsum("ea,pab->peb", p.left, xs)
    yr = np.einsum("qbc,ec->qeb", ys, p.right)
    same_copy = np.einsum("peb,qeb->pqe", lx, yr)
    x = np.einsum("peb,eb->pe", lx, p.right)
    y = np.einsum("ea,qea->qe", p.left, yr)
    n = p.n
    total = n * same_copy * (p.weight * p.power(n - 1))
    if n >= 2:
        total = total + n * (n - 1) * x[:, None, :] * y[None, :, :] * (p.weight * p.power(n - 2))
    return total.sum(axis=2)


def overlap(
    state: StructuredState,
    ancilla=None,
    u=None,
    v=None,
    insertions: Sequence[np.ndarray] = (),
    ket: Optional[StructuredState] = None,
) -> complex:
    """
    <S| (A (x) V^dag^n) (insertions) (1 (x) U^n) |ket>.

    Each insertion X is the collective sum sum_p X_p; they are applied left to
    right. A defaults to the identity on the ancilla, ket defaults to S.
    """
    ins = list(insertions)
    if len(ins) > 2:
        raise UnsupportedError(f"overlap: at most two insertions supported, got {len(ins)}")
    if len(ins) == 1:
        return complex(single_insertions(state, ins[0], u, v, ket, ancilla)[0])
    if len(ins) == 2:
        return complex(double_insertions(state, ins[0], ins[1], u, v, ket, ancilla)[0, 0])
    p = _pairs(state, state if ket is None else ket, u, v, ancilla)
    return complex((p.weight * p.power(p.n)).sum())


def reduced_moments(state: StructuredState, two_copy: bool = True) -> ReducedMoments:
    """
    Medelvärdade reducerade täthetsmatriser för en kopia (rho1) och symmetriserade
    två kopior (rho2), byggda ur grenbrackets; tillståndet normeras i farten.
    """
    if two_copy and state.n < 2:
        raise UnsupportedError("reduced_moments: the two-copy moment needs n >= 2")
    p = _pairs(state, state, None, None, None)
    norm = float((p.weight * p.power(state.n)).sum().real)
    w1 = p.weight * p.power(state.n - 1) / norm
    rho1 = np.einsum("e,ea,eb->ab", w1, p.right, p.left)
    rho1 = (rho1 + rho1.conj().T) / 2
    rho2 = None
    if two_copy:
        w2 = p.weight * p.power(state.n - 2) / norm
        rr = np.einsum("ea,eb->eab", p.right, p.right).reshape(len(w2), -1)
        ll = np.einsum("ea,eb->eab", p.left, p.left).reshape(len(w2), -1)
        rho2 = np.einsum("e,ea,eb->ab", w2, rr, ll)
        rho2 = (rho2 + rho2.conj().T) / 2
    return ReducedMoments(rho1=rho1, rho2=rho2)


def injectivity_margin(state: StructuredState, u) -> float:
    """1 - |<S|(1 (x) U^n)|S>|; zero exactly on the phase orbit of the identity for design inputs."""
    val = abs(overlap(state, u=u)) / state.norm_squared()
    return float(min(1.0, max(0.0, 1.0 - val)))


# ---------- Dense orakel (små n) ----------
def to_dense(state: StructuredState, ancilla_dim: Optional[int] = None) -> np.ndarray:
    """Hela vektorn på C^{d_A} (x) C^{d^n}, ancillan först."""
    da = state.ancilla_dim if ancilla_dim is None else ancilla_dim
    out = np.zeros(da * state.d ** state.n, dtype=complex)
    for lab, c, vec in zip(state.labels, state.coeffs, state.vectors):
        e = np.zeros(da, dtype=complex)
        e[lab] = 1.0
        out += c * kron(e, kron_power(vec, state.n))
    return out


def collective_operator(op, n: int, ancilla_dim: int = 1) -> np.ndarray:
    """1_A (x) sum_p op_p on the dense space."""
    op = np.asarray(op, dtype=complex)
    d = op.shape[0]
    total = np.zeros((d ** n, d ** n), dtype=complex)
    for p in range(n):
        factors = [np.eye(d)] * n
        factors[p] = op
        total += kron(*factors)
    return np.kron(np.eye(ancilla_dim), total)


def dense_evolve(state: StructuredState, u, ancilla_dim: Optional[int] = None) -> np.ndarray:
    da = state.ancilla_dim if ancilla_dim is None else ancilla_dim
    return np.kron(np.eye(da), kron_power(u, state.n)) @ to_dense(state, da)


def bob_reduced_density(state: StructuredState, u=None) -> np.ndarray:
    """Bobs tillstånd med ancillan utspårad (tät, d^n x d^n)."""
    d = state.d
    u = np.eye(d) if u is None else u
    psi = dense_evolve(state, u)
    rho = np.outer(psi, psi.conj())
    return partial_trace(rho, [state.ancilla_dim, d ** state.n], keep=[1])
