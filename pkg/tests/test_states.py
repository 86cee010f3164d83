import json

import numpy as np
import pytest

from estimation.designs import mub_prime, mub_vectors, sic_povm
from estimation.states import (
    StructuredState,
    bob_conditional,
    bob_reduced_density,
    collective_operator,
    condition_on_ancilla,
    dense_evolve,
    from_design,
    injectivity_margin,
    overlap,
    product_baseline,
    random_structured_state,
    reduced_moments,
    to_dense,
)
from utils.errors import UnsupportedError, ValidationError
from utils.numkernel import haar_unitary, kron, symmetric_projector


def _random_op(d, rng):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_overlap_matches_dense_oracle(n):
    rng = np.random.default_rng(100 + n)
    d = 2
    bra = random_structured_state(d, n, 4, rng, ancilla_dim=3)
    ket = random_structured_state(d, n, 3, rng, ancilla_dim=3)
    da = 3
    a = _random_op(da, rng)
    u, v = haar_unitary(d, rng), haar_unitary(d, rng)
    x, y = _random_op(d, rng), _random_op(d, rng)

    left = np.kron(np.eye(da), kron(*([v] * n))) @ to_dense(bra, da)
    right = np.kron(np.eye(da), kron(*([u] * n))) @ to_dense(ket, da)
    ax = np.kron(a, np.eye(d ** n))
    big_x = collective_operator(x, n, da)
    big_y = collective_operator(y, n, da)

    assert overlap(bra, a, u, v, ket=ket) == pytest.approx(left.conj() @ ax @ right, abs=1e-10)
    assert overlap(bra, a, u, v, [x], ket=ket) == pytest.approx(left.conj() @ ax @ big_x @ right, abs=1e-10)
    assert overlap(bra, a, u, v, [x, y], ket=ket) == pytest.approx(left.conj() @ ax @ big_x @ big_y @ right, abs=1e-10)


def test_overlap_rejects_three_insertions():
    state = from_design(sic_povm(2), 2)
    x = np.eye(2)
    with pytest.raises(UnsupportedError):
        overlap(state, insertions=[x, x, x])


def test_design_state_is_normalized_and_centered():
    state = from_design(mub_vectors(mub_prime(3)), 2)
    assert state.norm_squared() == pytest.approx(1.0)
    # tracefria generatorer har väntevärde noll
    gen = np.diag([1.0, -1.0, 0.0])
    assert abs(overlap(state, insertions=[gen])) < 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_design_moments(d):
    state = from_design(mub_vectors(mub_prime(d)), 3)
    mom = reduced_moments(state)
    assert np.allclose(mom.rho1, np.eye(d) / d)
    assert np.allclose(mom.rho2, 2 * symmetric_projector(d) / (d * (d + 1)))


def test_product_moments():
    tau = np.array([0.6, 0.8j])
    mom = reduced_moments(product_baseline(tau, 2))
    proj = np.outer(tau, tau.conj())
    assert np.allclose(mom.rho1, proj)
    assert np.allclose(mom.rho2, np.kron(proj, proj))


def test_reduced_moments_single_copy():
    state = from_design(sic_povm(2), 1)
    with pytest.raises(UnsupportedError):
        reduced_moments(state)
    assert reduced_moments(state, two_copy=False).rho2 is None


def test_bob_conditional_coefficients():
    bases = mub_prime(2)
    state = bob_conditional(bases, 0, 1, 2)
    assert np.allclose(state.coeffs, np.array([1, -1]) / np.sqrt(2))
    assert np.allclose(state.vectors, np.eye(2))
    assert state.norm_squared() == pytest.approx(1.0)


def test_bob_conditional_ranges():
    bases = mub_prime(3)
    with pytest.raises(ValidationError, match="b=4"):
        bob_conditional(bases, 4, 0, 2)
    with pytest.raises(ValidationError, match="k=3"):
        bob_conditional(bases, 0, 3, 2)


def test_condition_on_ancilla_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    state = random_structured_state(2, 2, 5, rng, ancilla_dim=3)
    basis = haar_unitary(3, rng)
    probs = [condition_on_ancilla(state, basis[:, j]).norm_squared() for j in range(3)]
    assert sum(probs) == pytest.approx(1.0)


def test_condition_on_ancilla_too_short():
    state = from_design(sic_povm(2), 2)
    with pytest.raises(ValidationError):
        condition_on_ancilla(state, [1.0, 0.0])


def test_injectivity_margin():
    state = from_design(mub_vectors(mub_prime(2)), 2)
    # en global fas ger samma kanal
    assert injectivity_margin(state, np.exp(0.7j) * np.eye(2)) == pytest.approx(0.0, abs=1e-12)
    u = haar_unitary(2, np.random.default_rng(9))
    assert injectivity_margin(state, u) > 1e-3


def test_bob_reduced_density_trace():
    state = from_design(sic_povm(2), 2)
    u = haar_unitary(2, np.random.default_rng(4))
    rho = bob_reduced_density(state, u)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.allclose(rho, rho.conj().T)


def test_dense_evolve_norm():
    state = from_design(sic_povm(3), 2)
    psi = dense_evolve(state, haar_unitary(3, np.random.default_rng(1)))
    assert np.linalg.norm(psi) == pytest.approx(1.0)


def test_state_json():
    state = from_design(sic_povm(2), 3)
    back = StructuredState.from_json(json.loads(json.dumps(state.to_json())))
    assert back.n == 3 and back.branches == 4
    assert np.allclose(to_dense(back), to_dense(state))


def test_state_json_missing_field():
    with pytest.raises(ValidationError, match="missing or malformed"):
        StructuredState.from_json({"d": 2, "n": 1})


def test_state_validation():
    with pytest.raises(ValidationError):
        StructuredState(2, 0, [0], [1.0], [[1, 0]])
    with pytest.raises(ValidationError, match="not normalized"):
        StructuredState(2, 1, [0], [1.0], [[1, 1]])
    with pytest.raises(ValidationError, match="inconsistent"):
        StructuredState(2, 1, [0, 1], [1.0], [[1, 0]])
