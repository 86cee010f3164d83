"""
Identity suite behind `sudest verify`.

Every check reduces to one number (a deviation, a count of bad cases or a
z-score) and passes when that number is <= its threshold. Sizes are chosen for
a laptop; `quick=True` shrinks the statistical checks for smoke runs.

`inject_fault` names a check whose measured value gets +1.0, so the CLI and
the tests can see a FAIL end to end.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from estimation.designs import chernoff_sample_size, mub_prime, mub_vectors, sample_approx_design, sic_povm
from estimation.estimate import ExperimentConfig, mse_experiment
from estimation.measurement import (
    DensePovm,
    OverlapPovm,
    alice_fourier_vectors,
    fisher_information,
    locc_protocol,
    optimal_povm,
    random_measurement_fi,
    random_measurement_pair,
    random_pair_mixture,
)
from estimation.qfi import (
    concentration_experiment,
    conditional_qfi_average,
    h_n_single,
    optimal_cn,
    optimal_qfi,
    qfi_pure_state,
)
from estimation.states import (
    StructuredState,
    collective_operator,
    from_approx_design,
    from_design,
    injectivity_margin,
    overlap,
    random_structured_state,
    reduced_moments,
    to_dense,
)
from utils.errors import ValidationError
from utils.numkernel import haar_unitary, kron_power, symmetric_projector
from utils.sud import Chart, gell_mann_basis

FAULT = 1.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value)) and self.value <= self.threshold

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
            "seconds": round(self.seconds, 3),
        }


def _design_inputs(d: int, n: int) -> Dict[str, StructuredState]:
    out = {"mub": from_design(mub_vectors(mub_prime(d)), n)}
    if d in (2, 3):
        out["sic"] = from_design(sic_povm(d), n)
    return out


# ---------- Checks ----------
def check_qfi_closed_form(rng, quick: bool):
    worst = 0.0
    for d in (2, 3):
        basis = gell_mann_basis(d)
        for n in range(1, 9):
            for state in _design_inputs(d, n).values():
                dev = np.linalg.norm(qfi_pure_state(state, basis).entries - optimal_qfi(d, n).entries)
                worst = max(worst, float(dev))
    return worst, 1e-10, "MUB and SIC inputs, d in {2,3}, n = 1..8"


def check_bound_value(rng, quick: bool):
    worst = 0.0
    for d in (2, 3):
        basis = gell_mann_basis(d)
        for n in range(1, 9):
            for state in _design_inputs(d, n).values():
                worst = max(worst, abs(qfi_pure_state(state, basis).trace_inverse() - optimal_cn(d, n)))
    return worst, 1e-10, f"Tr H^-1 vs d(d+1)^2(d-1)/(4n(n+d)); d=2: n=1 -> {optimal_cn(2, 1)}, n=2 -> {optimal_cn(2, 2)}"


def check_attainment(rng, quick: bool):
    worst = 0.0
    for d, ns in ((2, (1, 2, 3)), (3, (1, 2))):
        chart = Chart(gell_mann_basis(d))
        for n in ns:
            for state in _design_inputs(d, n).values():
                povm = optimal_povm(state, chart)
                fi = fisher_information(povm, state, chart)
                worst = max(worst, float(np.linalg.norm(fi.entries - optimal_qfi(d, n).entries)))
    return worst, 1e-8, "FI of the constructed POVM vs QFI"


def check_bound_sharpness(rng, quick: bool):
    d, n = 2, 3
    basis = gell_mann_basis(d)
    bound = optimal_cn(d, n)
    target = 2 * symmetric_projector(d) / (d * (d + 1))
    cases = [random_structured_state(d, n, int(rng.integers(2, 7)), rng) for _ in range(50 if quick else 200)]
    cases += list(_design_inputs(d, n).values())
    bad = 0
    for state in cases:
        gap = qfi_pure_state(state, basis).trace_inverse() - bound
        matches = np.linalg.norm(reduced_moments(state).rho2 - target) <= 1e-8
        if gap < -1e-9 or (gap <= 1e-9) != matches:
            bad += 1
    return float(bad), 0.0, f"{len(cases)} inputs; tight cases must be exactly the 2-design ones"


def dense_overlap_effects(povm: OverlapPovm, chart: Chart) -> np.ndarray:
    """Effekter |m_x><m_x| plus kompletterande effekt i hela rummet, byggda utan overlap-motorn."""
    ref = povm.reference
    da = ref.ancilla_dim
    big = np.kron(np.eye(da), kron_power(povm.u0, ref.n))
    omega = to_dense(ref, da)
    psi = big @ omega
    lam = np.array([
        -2j * big @ (collective_operator(g, ref.n, da) @ omega - mu * omega)
        for g, mu in zip(povm.generators, povm.means)
    ])
    vecs = povm.o @ np.vstack([povm.coeffs @ lam, psi[None, :]])
    effects = np.einsum("xa,xb->xab", vecs, vecs.conj())
    rest = np.eye(psi.size) - effects.sum(axis=0)
    return np.concatenate([effects, rest[None]])


def check_dense_oracle(rng, quick: bool):
    d = 2
    chart = Chart(gell_mann_basis(d))
    worst = 0.0
    for n in (1, 2, 3):
        design = _design_inputs(d, n)["mub"]
        for _ in range(5 if quick else 20):
            state = random_structured_state(d, n, 4, rng, ancilla_dim=3)
            u, v = haar_unitary(d, rng), haar_unitary(d, rng)
            x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            y = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            engine = overlap(state, ancilla=a, u=u, v=v, insertions=[x, y])
            omega = to_dense(state, 3)
            lhs = np.kron(a, kron_power(v, n).conj().T)
            rhs = np.kron(np.eye(3), kron_power(u, n))
            dense = omega.conj() @ lhs @ collective_operator(x, n, 3) @ collective_operator(y, n, 3) @ rhs @ omega
            worst = max(worst, abs(engine - dense))

            theta0 = rng.uniform(-0.3, 0.3, chart.dim)
            theta = rng.uniform(-0.3, 0.3, chart.dim)
            povm = optimal_povm(design, chart, theta0)
            oracle = DensePovm(ancilla_dim=design.ancilla_dim, effects=dense_overlap_effects(povm, chart))
            worst = max(worst, float(np.max(np.abs(
                povm.probabilities(design, chart, theta) - oracle.probabilities(design, chart, theta)
            ))))
            fi_gap = fisher_information(povm, design, chart, theta).entries - fisher_information(oracle, design, chart, theta).entries
            worst = max(worst, float(np.linalg.norm(fi_gap)))
    return worst, 1e-10, "overlaps, probabilities and FI vs full-space vectors, d=2, n=1..3"


def check_product_scaling(rng, quick: bool):
    d = 2
    basis = gell_mann_basis(d)
    values = []
    for n in range(1, 9):
        state = from_design(sic_povm(d), n)
        values.append(n * conditional_qfi_average(state, np.eye(state.ancilla_dim), basis).trace_inverse())
    spread = max(values) / min(values)
    return float(spread - 1.0), 1e-8, f"n Tr H^-1 for the product ensemble: {values[0]:.6f} (constant in n)"


def check_random_measurement(rng, quick: bool):
    d = 2
    chart = Chart(gell_mann_basis(d))
    worst = 0.0
    for n in (1, 2):
        state = _design_inputs(d, n)["mub"]
        dim = state.ancilla_dim * d ** n
        for _ in range(5 if quick else 20):
            first, second = random_measurement_pair(haar_unitary(dim, rng), state, chart)
            total = fisher_information(first, state, chart).entries + fisher_information(second, state, chart).entries
            worst = max(worst, float(np.linalg.norm(total - optimal_qfi(d, n).entries)))
    state = _design_inputs(d, 1)["mub"]
    mixture = random_pair_mixture(state, chart, 3, rng)
    trace_gap = abs(fisher_information(mixture, state, chart).trace_inverse() - 3.0)
    return max(worst, trace_gap), 1e-8, "FI(B) + FI(YB) = QFI; balanced mixture Tr FI^-1 = 3.0 at d=2, n=1"


def check_random_average(rng, quick: bool):
    d, n = 2, 1
    chart = Chart(gell_mann_basis(d))
    state = _design_inputs(d, n)["mub"]
    draws = 2000 if quick else 10_000
    fi = random_measurement_fi(state, chart, draws, rng)
    z = np.abs(fi.entries - optimal_qfi(d, n).entries / 2) / np.maximum(fi.stderr, 1e-15)
    return float(np.max(z)), 3.0, f"Haar-averaged FI vs QFI/2 over {draws} bases (max z-score)"


def check_locc(rng, quick: bool):
    d = 2
    chart = Chart(gell_mann_basis(d))
    bases = mub_prime(d)
    worst = 0.0
    for n in (2, 3, 4):
        state = from_approx_design(bases, n)
        avg = conditional_qfi_average(state, alice_fourier_vectors(len(bases), d), chart)
        worst = max(worst, float(np.linalg.norm(avg.entries - optimal_qfi(d, n).entries)))
    plan = locc_protocol(bases, 2, chart)
    fi_gap = float(np.linalg.norm(plan.averaged_fi.entries - optimal_qfi(d, 2).entries))
    # QFI identity to 1e-10, end-to-end FI to 1e-8
    return max(worst / 1e-10, fi_gap / 1e-8), 1.0, "averaged conditional QFI over Alice's 6 outcomes; LOCC FI at n=2"


def check_approx_designs(rng, quick: bool):
    d, eps, q = 2, 0.5, 0.95
    m = chernoff_sample_size(d, eps, q)
    recomputed = math.ceil(4 * (d + 1) * math.log(2) / eps ** 2 * math.log(2 * (d * d - 1) / (1 - q)))
    report = concentration_experiment(d, 2, eps, q, 50 if quick else 200, rng, m=m)
    basis = gell_mann_basis(d)
    draws = np.array([h_n_single(u, 2, basis).entries for u in sample_approx_design(d, 500 if quick else 2000, rng)])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    z = float(np.max(np.abs(mean - optimal_qfi(d, 2).entries) / np.maximum(se, 1e-15)))
    value = max(float(m != recomputed) * 1e3, report.violation_fraction / (1 - q), z / 3.0)
    return value, 1.0, f"m={m}, violation fraction {report.violation_fraction:.3f}, mean-h z={z:.2f}"


def check_injectivity(rng, quick: bool):
    d, n = 2, 2
    states = [_design_inputs(d, n)["mub"], from_approx_design(sample_approx_design(d, 20, rng), n)]
    bad = 0
    for state in states:
        for phi in rng.uniform(0, 2 * np.pi, 10):
            if injectivity_margin(state, np.exp(1j * phi) * np.eye(d)) > 1e-12:
                bad += 1
        tested = 0
        while tested < (30 if quick else 100):
            u = haar_unitary(d, rng)
            if math.sqrt(max(0.0, 2 * d - 2 * abs(np.trace(u)))) < 0.1:
                continue
            tested += 1
            if injectivity_margin(state, u) <= 1e-6:
                bad += 1
    return float(bad), 0.0, "margin 0 on phases, > 1e-6 away from the phase orbit"


def check_determinism(rng, quick: bool):
    seed = int(rng.integers(1, 2 ** 63))
    a = concentration_experiment(2, 2, 0.5, 0.95, 5, np.random.default_rng(seed), m=20)
    b = concentration_experiment(2, 2, 0.5, 0.95, 5, np.random.default_rng(seed), m=20)
    cfg = ExperimentConfig(d=2, n=1, N=200, trials=3, seed=seed)
    r1, r2 = mse_experiment(cfg), mse_experiment(cfg)
    same = np.array_equal(a.low, b.low) and np.array_equal(a.high, b.high) and np.array_equal(r1.mse_matrix, r2.mse_matrix)
    return float(not same), 0.0, "repeat runs with one master seed are bit-identical"


def check_mse_scaling(rng, quick: bool):
    trials = 200
    seed = int(rng.integers(1, 2 ** 63))
    reports = [mse_experiment(ExperimentConfig(d=2, n=n, N=5000, trials=trials, seed=seed + n)) for n in (1, 2, 3, 4)]
    outside = max(max(0.0, 0.85 - r.ratio, r.ratio - 1.20) for r in reports[:3])
    scaled = [r.scaled for r in reports]
    spread = max(0.0, max(scaled) / min(scaled) - 1.3)
    ratios = ", ".join(f"{r.ratio:.3f}" for r in reports)
    return outside + spread, 0.0, f"N Tr MSE / bound for n=1..4: {ratios}"


CHECKS: Dict[str, Callable] = {
    "qfi_closed_form": check_qfi_closed_form,
    "bound_value": check_bound_value,
    "attainment": check_attainment,
    "bound_sharpness": check_bound_sharpness,
    "dense_oracle": check_dense_oracle,
    "product_scaling": check_product_scaling,
    "random_measurement": check_random_measurement,
    "random_average": check_random_average,
    "locc": check_locc,
    "approx_designs": check_approx_designs,
    "injectivity": check_injectivity,
    "determinism": check_determinism,
}
SLOW_CHECKS: Dict[str, Callable] = {"mse_scaling": check_mse_scaling}


def run_suite(
    seed: int,
    quick: bool = False,
    include_mse: bool = False,
    inject_fault: Optional[str] = None,
    only: Optional[List[str]] = None,
    progress: bool = False,
) -> List[CheckResult]:
    checks = dict(CHECKS)
    if include_mse:
        checks.update(SLOW_CHECKS)
    if only:
        unknown = sorted(set(only) - set(checks))
        if unknown:
            raise ValidationError(f"run_suite: unknown checks {unknown}")
        checks = {k: v for k, v in checks.items() if k in only}
    streams = np.random.SeedSequence(seed).spawn(len(checks))
    results: List[CheckResult] = []
    for (name, check), stream in tqdm(list(zip(checks.items(), streams)), desc="verify", disable=not progress):
        started = time.perf_counter()
        value, threshold, detail = check(np.random.default_rng(stream), quick)
        if inject_fault == name:
            value += FAULT
            detail = f"{detail} [fault injected]"
        results.append(CheckResult(name, float(value), threshold, detail, time.perf_counter() - started))
    return results
