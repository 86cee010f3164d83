import itertools
import json

import numpy as np
import pytest

from estimation.designs import (
    VectorSet,
    chernoff_sample_size,
    frame_operator,
    mub_prime,
    mub_vectors,
    sample_approx_design,
    sic_povm,
    unitary_vectors,
    verify_2design,
)
from utils.errors import UnsupportedError, ValidationError


@pytest.mark.parametrize("d", [2, 3, 5])
def test_mub_prime_is_unbiased_design(d):
    bases = mub_prime(d)
    assert len(bases) == d + 1
    for b in bases:
        assert np.allclose(b.conj().T @ b, np.eye(d))
    for a, b in itertools.combinations(bases, 2):
        assert np.allclose(np.abs(a.conj().T @ b) ** 2, 1 / d)
    report = verify_2design(mub_vectors(bases))
    assert report.is_design
    assert report.hs_distance <= 1e-12


def test_mub_d2_order():
    bases = mub_prime(2)
    assert np.allclose(bases[0], np.eye(2))
    # X-basis second, Y-basis third
    assert np.allclose(bases[1][:, 0], np.array([1, 1]) / np.sqrt(2))
    assert np.allclose(bases[2][:, 0], np.array([1, 1j]) / np.sqrt(2))


def test_mub_non_prime_unsupported():
    with pytest.raises(UnsupportedError, match="not prime"):
        mub_prime(4)


@pytest.mark.parametrize("d", [2, 3])
def test_sic_equiangular(d):
    vs = sic_povm(d)
    assert vs.m == d * d
    g = np.abs(vs.vectors.conj() @ vs.vectors.T) ** 2
    off = g[~np.eye(d * d, dtype=bool)]
    assert np.allclose(off, 1 / (d + 1))
    assert verify_2design(vs).is_design


def test_sic_d2_is_tetrahedron():
    vs = sic_povm(2)
    pauli = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]])
    bloch = np.einsum("ia,pab,ib->ip", vs.vectors.conj(), pauli, vs.vectors).real
    assert np.allclose(np.abs(bloch), 1 / np.sqrt(3))
    assert np.allclose(bloch.sum(axis=0), 0)


def test_sic_unsupported_dimension_suggests_approx():
    with pytest.raises(UnsupportedError, match="approx"):
        sic_povm(5)


def test_computational_basis_is_not_a_design():
    report = verify_2design(VectorSet(d=2, vectors=np.eye(2)))
    assert not report.is_design
    assert report.hs_distance > 0.1


def test_frame_operator_trace_one():
    vs = sic_povm(3)
    assert np.isclose(np.trace(frame_operator(vs)).real, 1.0)


def test_chernoff_sample_size():
    assert chernoff_sample_size(2, 0.5, 0.95) == 160
    assert chernoff_sample_size(3, 0.5, 0.95) > 160


@pytest.mark.parametrize("d, eps, q", [(1, 0.5, 0.9), (2, 0.0, 0.9), (2, 0.6, 0.9), (2, 0.5, 1.0)])
def test_chernoff_sample_size_ranges(d, eps, q):
    with pytest.raises(ValidationError):
        chernoff_sample_size(d, eps, q)


def test_vector_set_json():
    vs = mub_vectors(mub_prime(3))
    back = VectorSet.from_json(json.loads(json.dumps(vs.to_json())))
    assert back.d == 3 and back.m == 12
    assert np.allclose(back.vectors, vs.vectors)


def test_vector_set_rejects_unnormalized():
    with pytest.raises(ValidationError, match="not normalized"):
        VectorSet(d=2, vectors=[[1, 1]])


def test_sample_approx_design_seeded():
    a = sample_approx_design(3, 4, np.random.default_rng(5))
    b = sample_approx_design(3, 4, np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert unitary_vectors(a).m == 12
    with pytest.raises(ValidationError):
        sample_approx_design(3, 0, np.random.default_rng(5))
