import numpy as np
import pytest

from utils.errors import ValidationError
from utils.numkernel import haar_unitary
from utils.sud import Chart, gell_mann_basis, tangent_at, unitary_at

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
])


def test_gell_mann_d2_is_pauli_over_sqrt2():
    basis = gell_mann_basis(2)
    assert basis.size == 3
    assert np.allclose(basis.t, PAULI / np.sqrt(2))


@pytest.mark.parametrize("d", [2, 3, 4])
def test_gell_mann_trace_orthonormal(d):
    t = gell_mann_basis(d).t
    assert t.shape == (d * d - 1, d, d)
    gram = np.einsum("aij,bji->ab", t, t)
    assert np.allclose(gram, np.eye(d * d - 1))
    assert np.allclose(np.einsum("aii->a", t), 0)
    assert np.allclose(t, np.conj(np.transpose(t, (0, 2, 1))))


def test_unitary_at_origin_and_determinant():
    chart = Chart(gell_mann_basis(3))
    assert np.allclose(unitary_at(chart, np.zeros(8)), np.eye(3))
    u = unitary_at(chart, np.linspace(-0.4, 0.4, 8))
    assert np.isclose(np.linalg.det(u), 1.0)


@pytest.mark.parametrize("d", [2, 3])
def test_tangent_matches_finite_differences(d):
    chart = Chart(gell_mann_basis(d), haar_unitary(d, np.random.default_rng(d)))
    theta = np.random.default_rng(7).uniform(-0.5, 0.5, chart.dim)
    u = unitary_at(chart, theta)
    t = tangent_at(chart, theta)
    h = 1e-6
    for a in range(chart.dim):
        e = np.zeros(chart.dim)
        e[a] = h
        du = (unitary_at(chart, theta + e) - unitary_at(chart, theta - e)) / (2 * h)
        assert np.allclose(t[a], 1j * u.conj().T @ du, atol=1e-7)


def test_tangent_is_hermitian_and_exact_at_origin():
    chart = Chart(gell_mann_basis(2))
    assert np.array_equal(tangent_at(chart, np.zeros(3)), chart.basis.t)
    t = tangent_at(chart, [0.2, -0.1, 0.4])
    assert np.allclose(t, np.conj(np.transpose(t, (0, 2, 1))))


def test_tangent_with_degenerate_eigenvalues():
    # theta along the 8th Gell-Mann matrix has a doubly degenerate spectrum
    chart = Chart(gell_mann_basis(3))
    theta = np.zeros(8)
    theta[-1] = 0.3
    u = unitary_at(chart, theta)
    h = 1e-6
    e = np.zeros(8)
    e[0] = h
    du = (unitary_at(chart, theta + e) - unitary_at(chart, theta - e)) / (2 * h)
    assert np.allclose(tangent_at(chart, theta)[0], 1j * u.conj().T @ du, atol=1e-7)


def test_recentered_chart():
    chart = Chart(gell_mann_basis(2))
    theta = np.array([0.1, 0.2, -0.3])
    moved = chart.recentered(theta)
    assert np.allclose(unitary_at(moved, np.zeros(3)), unitary_at(chart, theta))


def test_chart_rejects_bad_reference():
    with pytest.raises(ValidationError, match="not unitary"):
        Chart(gell_mann_basis(2), np.array([[1, 1], [0, 1]]))
    with pytest.raises(ValidationError, match="shape"):
        Chart(gell_mann_basis(2), np.eye(3))


def test_theta_validation():
    chart = Chart(gell_mann_basis(2))
    with pytest.raises(ValidationError, match="expected length 3"):
        unitary_at(chart, [0.1, 0.2])
    with pytest.raises(ValidationError, match="NaN"):
        unitary_at(chart, [np.nan, 0, 0])
