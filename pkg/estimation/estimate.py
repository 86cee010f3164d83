"""
Outcome sampling, maximum-likelihood estimation and MSE experiments.

Flow of one experiment (mse_experiment):
- build the input state and the measurement once, from the first child of the master seed
- run `trials` independent trials, each on its own SeedSequence child
  (sample N outcomes at theta_true -> MLE started at theta_true)
- average (est - theta)(est - theta)^T over converged trials and compare
  N * Tr MSE with d(d+1)^2(d-1) / (4n(n+d))

Trials that do not converge are excluded and counted, never dropped silently.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from tqdm import tqdm

from estimation.designs import chernoff_sample_size, mub_prime, mub_vectors, sample_approx_design, sic_povm
from estimation.measurement import (
    DENSE_CAP,
    PROB_FLOOR,
    LoccPovm,
    Povm,
    fisher_information,
    locc_protocol,
    optimal_povm,
    outcome_probabilities,
    random_pair_mixture,
)
from estimation.qfi import FisherMatrix, conditional_qfi_average, optimal_cn, qfi_pure_state
from estimation.states import StructuredState, condition_on_ancilla, from_approx_design, from_design
from utils.errors import EstimationError, SudestError, UnsupportedError, ValidationError
from utils.sud import Chart, gell_mann_basis

CHART_RADIUS = math.pi / 2
NM_MAXITER = 500
NM_TOL = 1e-8
GRAD_TOL = 1e-6

STATE_FAMILIES = ("mub", "sic", "approx", "product")
MEASUREMENT_FAMILIES = ("optimal", "random", "locc", "adaptive")


@dataclass(frozen=True)
class Trial:
    seed: int
    true_theta: np.ndarray
    outcomes: np.ndarray
    estimate: np.ndarray
    converged: bool

    def __post_init__(self):
        if self.converged and not np.all(np.isfinite(self.estimate)):
            raise ValidationError("Trial: a converged trial must have a finite estimate")


@dataclass(frozen=True)
class MleFit:
    theta: np.ndarray
    converged: bool
    neg_log_likelihood: float
    evaluations: int


@dataclass(frozen=True)
class AdaptiveFit:
    theta: np.ndarray
    converged: bool
    phase1_size: int
    phase1_estimate: np.ndarray
    fell_back: bool
    outcomes: np.ndarray  # phase-1 outcomes followed by phase-2 outcomes


@dataclass(frozen=True)
class MseReport:
    d: int
    n: int
    N: int
    trials: int
    excluded: int
    mse_matrix: np.ndarray
    trace_mse: float
    n_times_trace: float  # N * Tr MSE
    bound: float
    ratio: float
    crb: float  # Tr FI^{-1} of the measurement used, at theta_true
    state: str = "mub"
    measurement: str = "optimal"
    seed: int = 0
    estimates: Optional[np.ndarray] = field(default=None, compare=False)  # converged trials only

    def __post_init__(self):
        lo = float(np.linalg.eigvalsh(self.mse_matrix)[0])
        if lo < -1e-12:
            raise ValidationError(f"MseReport: MSE matrix not PSD (min eigenvalue {lo:.3e})")

    @property
    def scaled(self) -> float:
        """N Tr MSE n(n+d); constant in n when the 1/(N n^2) law holds."""
        return self.n_times_trace * self.n * (self.n + self.d)

    def as_row(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "n": self.n,
            "N": self.N,
            "state": self.state,
            "measurement": self.measurement,
            "trials": self.trials,
            "excluded": self.excluded,
            "trace_mse": self.trace_mse,
            "n_times_trace": self.n_times_trace,
            "bound": self.bound,
            "ratio": self.ratio,
            "crb": self.crb,
            "scaled": self.scaled,
            "seed": self.seed,
        }

    def as_dict(self) -> Dict[str, Any]:
        out = self.as_row()
        out["mse_matrix"] = self.mse_matrix.tolist()
        if self.estimates is not None:
            out["estimates"] = self.estimates.tolist()
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 2
    n: int = 1
    N: int = 5000
    trials: int = 200
    state: str = "mub"
    measurement: str = "optimal"
    theta: Optional[Tuple[float, ...]] = None
    seed: int = 1
    m: Optional[int] = None  # approx: number of Haar unitaries (default: Chernoff size)
    eps: float = 0.5
    q: float = 0.95
    pairs: int = 4  # random: Haar basis pairs in the balanced mixture
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    dense_cap: int = DENSE_CAP
    progress: bool = False

    def __post_init__(self):
        if self.d < 2 or self.n < 1:
            raise ValidationError(f"ExperimentConfig: need d >= 2 and n >= 1, got d={self.d}, n={self.n}")
        if self.N < 1 or self.trials < 1:
            raise ValidationError(f"ExperimentConfig: N and trials must be >= 1, got N={self.N}, trials={self.trials}")
        if self.state not in STATE_FAMILIES:
            raise ValidationError(f"ExperimentConfig: unknown state {self.state!r} (choose from {', '.join(STATE_FAMILIES)})")
        if self.measurement not in MEASUREMENT_FAMILIES:
            raise ValidationError(
                f"ExperimentConfig: unknown measurement {self.measurement!r} (choose from {', '.join(MEASUREMENT_FAMILIES)})"
            )
        if self.state == "product" and self.measurement != "random":
            raise ValidationError("ExperimentConfig: product inputs only support the random measurement")
        if self.measurement == "locc" and self.state == "sic":
            raise ValidationError("ExperimentConfig: the LOCC strategy needs bases (mub or approx), not SIC vectors")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"ExperimentConfig: seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.pairs < 1 or self.workers < 1:
            raise ValidationError("ExperimentConfig: pairs and workers must be >= 1")
        if self.theta is not None and len(self.theta) != self.d * self.d - 1:
            raise ValidationError(f"ExperimentConfig: theta must have {self.d * self.d - 1} entries, got {len(self.theta)}")
        if self.theta is not None and np.linalg.norm(self.theta) >= CHART_RADIUS:
            raise ValidationError(f"ExperimentConfig: ||theta|| must stay below pi/2, got {np.linalg.norm(self.theta):.4f}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__ and v is not None}
        if known.get("theta") is not None:
            known["theta"] = tuple(float(x) for x in known["theta"])
        return cls(**known)

    def as_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["theta"] = None if self.theta is None else list(self.theta)
        return out

    def true_theta(self) -> np.ndarray:
        return np.zeros(self.d * self.d - 1) if self.theta is None else np.asarray(self.theta, dtype=float)


# ---------- Sampling ----------
def sample_outcomes(povm: Povm, state: StructuredState, chart: Chart, theta, N: int, rng: np.random.Generator) -> np.ndarray:
    """Drar N oberoende utfallsindex i theta."""
    if N < 1:
        raise ValidationError(f"sample_outcomes: N must be >= 1, got {N}")
    p = outcome_probabilities(povm, state, chart, theta).probabilities
    return rng.choice(p.size, size=N, p=p)


# ---------- Likelihood ----------
@dataclass(frozen=True)
class _Dataset:
    counts: np.ndarray
    povm: Povm


def _counts(outcomes, povm: Povm) -> np.ndarray:
    outcomes = np.asarray(outcomes, dtype=int)
    if outcomes.size and (outcomes.min() < 0 or outcomes.max() >= povm.outcomes):
        raise ValidationError(f"mle: outcome labels must lie in 0..{povm.outcomes - 1}")
    return np.bincount(outcomes, minlength=povm.outcomes).astype(float)


def _nll(theta, data: Sequence[_Dataset], state, chart) -> float:
    if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) >= CHART_RADIUS:
        return np.inf
    total = 0.0
    for ds in data:
        p = np.clip(ds.povm.probabilities(state, chart, theta), PROB_FLOOR, None)
        total -= float(ds.counts @ np.log(p))
    return total


def _nll_grad(theta, data: Sequence[_Dataset], state, chart) -> np.ndarray:
    grad = np.zeros(chart.dim)
    for ds in data:
        p, dp = ds.povm.jacobian(state, chart, theta)
        grad -= dp @ (ds.counts / np.clip(p, PROB_FLOOR, None))
    return grad


def _fit(data: Sequence[_Dataset], state: StructuredState, chart: Chart, init) -> MleFit:
    init = np.asarray(init, dtype=float)
    if not np.isfinite(_nll(init, data, state, chart)):
        raise ValidationError("mle: log-likelihood is not finite at the initial point")
    total = sum(float(ds.counts.sum()) for ds in data)

    with np.errstate(invalid="ignore", over="ignore"):
        simplex = minimize(
            _nll, init, args=(data, state, chart), method="Nelder-Mead",
            options={"maxiter": NM_MAXITER, "fatol": NM_TOL, "xatol": NM_TOL},
        )
        polish = minimize(
            _nll, simplex.x, args=(data, state, chart), jac=_nll_grad, method="BFGS",
            options={"gtol": GRAD_TOL * total},
        )

    best = polish if np.isfinite(polish.fun) and polish.fun <= simplex.fun else simplex
    theta = np.asarray(best.x, dtype=float)
    finite = bool(np.isfinite(best.fun)) and np.linalg.norm(theta) < CHART_RADIUS
    grad_ok = finite and np.linalg.norm(_nll_grad(theta, data, state, chart)) / total <= GRAD_TOL
    converged = finite and (bool(simplex.success) or bool(polish.success) or grad_ok)
    return MleFit(
        theta=theta,
        converged=converged,
        neg_log_likelihood=float(best.fun),
        evaluations=int(simplex.nfev + polish.nfev),
    )


def mle(outcomes, povm: Povm, state: StructuredState, chart: Chart, init=None) -> MleFit:
    """
    Maximize sum_x count_x log p_x(theta) over ||theta|| < pi/2.
    Nelder-Mead först, sedan BFGS med den analytiska gradienten.
    """
    init = np.zeros(chart.dim) if init is None else init
    return _fit([_Dataset(_counts(outcomes, povm), povm)], state, chart, init)


# ---------- Tvåstegsprotokollet ----------
def two_step_adaptive(
    state: StructuredState,
    chart: Chart,
    theta_true,
    N: int,
    rng: np.random.Generator,
    pairs: int = 1,
    dense_cap: int = DENSE_CAP,
) -> AdaptiveFit:
    """
    ceil(sqrt(N)) repetitions with a fixed random-basis mixture built at the chart
    origin give a rough estimate; the rest use the optimal measurement built there.
    The final estimate maximizes the joint likelihood of both phases.
    """
    if N < 2:
        raise ValidationError(f"two_step_adaptive: N must be >= 2, got {N}")
    n1 = int(math.ceil(math.sqrt(N)))
    origin = np.zeros(chart.dim)

    rough_povm = random_pair_mixture(state, chart, pairs, rng, theta=origin, dense_cap=dense_cap)
    first = sample_outcomes(rough_povm, state, chart, theta_true, n1, rng)
    rough = mle(first, rough_povm, state, chart, init=origin)
    fell_back = not rough.converged or not np.all(np.isfinite(rough.theta))
    theta1 = origin if fell_back else rough.theta
    if fell_back:
        print("⚠️ two-step: phase-1 estimate degenerate, building the phase-2 measurement at the chart origin")

    fine_povm = optimal_povm(state, chart, theta1)
    second = sample_outcomes(fine_povm, state, chart, theta_true, N - n1, rng)
    data = [_Dataset(_counts(first, rough_povm), rough_povm), _Dataset(_counts(second, fine_povm), fine_povm)]
    fit = _fit(data, state, chart, theta1)
    return AdaptiveFit(
        theta=fit.theta,
        converged=fit.converged,
        phase1_size=n1,
        phase1_estimate=np.asarray(theta1, dtype=float),
        fell_back=fell_back,
        outcomes=np.concatenate([first, second]),
    )


# ---------- Experiment setup ----------
@dataclass(frozen=True)
class ExperimentSetup:
    state: StructuredState
    chart: Chart
    povm: Optional[Povm]  # None for the adaptive strategy
    crb: float


def _design_state(d: int, n: int) -> StructuredState:
    try:
        return from_design(mub_vectors(mub_prime(d)), n)
    except UnsupportedError:
        return from_design(sic_povm(d), n)


def build_input(
    family: str,
    d: int,
    n: int,
    rng: np.random.Generator,
    m: Optional[int] = None,
    eps: float = 0.5,
    q: float = 0.95,
) -> Tuple[StructuredState, Optional[List[np.ndarray]]]:
    """Input state of one family, plus the bases behind it when there are any."""
    if family == "mub":
        bases = mub_prime(d)
        return from_design(mub_vectors(bases), n), bases
    if family == "sic":
        return from_design(sic_povm(d), n), None
    if family == "approx":
        units = sample_approx_design(d, m if m is not None else chernoff_sample_size(d, eps, q), rng)
        return from_approx_design(units, n), units
    if family == "product":
        # design vectors sent as products, the ancilla only records which one
        return _design_state(d, n), None
    raise ValidationError(f"build_input: unknown state family {family!r} (choose from {', '.join(STATE_FAMILIES)})")


def input_qfi(state: StructuredState, family: str, d: int) -> FisherMatrix:
    """QFI i kartans origo; produkttillstånd får det ancilla-medelvärdade (separabla) värdet."""
    basis = gell_mann_basis(d)
    if family == "product":
        return conditional_qfi_average(state, np.eye(state.ancilla_dim), basis)
    return qfi_pure_state(state, basis)


def _product_povm(state: StructuredState, chart: Chart, pairs: int, rng, theta, dense_cap) -> LoccPovm:
    """Ancillan läses i beräkningsbasen, Bob mäter en slumpad mixtur per gren."""
    alice = np.eye(state.ancilla_dim, dtype=complex)
    bobs = tuple(
        random_pair_mixture(condition_on_ancilla(state, a).normalized(), chart, pairs, rng, theta, dense_cap)
        for a in alice
    )
    return LoccPovm(alice=alice, bob=bobs)


def build_setup(config: ExperimentConfig, rng: np.random.Generator) -> ExperimentSetup:
    chart = Chart(gell_mann_basis(config.d))
    theta = config.true_theta()
    state, bases = build_input(config.state, config.d, config.n, rng, config.m, config.eps, config.q)

    povm: Optional[Povm] = None
    if config.measurement == "optimal":
        povm = optimal_povm(state, chart, theta)
    elif config.measurement == "random" and config.state == "product":
        povm = _product_povm(state, chart, config.pairs, rng, theta, config.dense_cap)
    elif config.measurement == "random":
        povm = random_pair_mixture(state, chart, config.pairs, rng, theta, config.dense_cap)
    elif config.measurement == "locc":
        plan = locc_protocol(bases, config.n, chart, theta)
        state, povm = plan.input_state, plan.povm

    reference = povm if povm is not None else optimal_povm(state, chart, theta)
    crb = fisher_information(reference, state, chart, theta).trace_inverse()
    return ExperimentSetup(state=state, chart=chart, povm=povm, crb=crb)


# ---------- Trials ----------
@dataclass(frozen=True)
class _TrialJob:
    seed: int
    setup: ExperimentSetup
    theta: np.ndarray
    N: int
    adaptive: bool
    pairs: int = 1
    dense_cap: int = DENSE_CAP


def _run_trial(job: _TrialJob) -> Trial:
    rng = np.random.default_rng(job.seed)
    setup = job.setup
    try:
        if job.adaptive:
            fit = two_step_adaptive(setup.state, setup.chart, job.theta, job.N, rng, job.pairs, job.dense_cap)
            outcomes, theta, ok = fit.outcomes, fit.theta, fit.converged
        else:
            outcomes = sample_outcomes(setup.povm, setup.state, setup.chart, job.theta, job.N, rng)
            fit = mle(outcomes, setup.povm, setup.state, setup.chart, init=job.theta)
            theta, ok = fit.theta, fit.converged
    except (SudestError, np.linalg.LinAlgError) as e:
        print(f"⚠️ trial with seed {job.seed} failed: {e}")
        return Trial(job.seed, job.theta, np.zeros(0, dtype=int), np.full(job.theta.shape, np.nan), False)
    return Trial(job.seed, job.theta, outcomes, theta, ok)


def trial_seeds(master_seed: int, trials: int) -> Tuple[np.random.SeedSequence, List[int]]:
    """Första barnet styr uppsättningen, resterande `trials` barn ett försök var."""
    children = np.random.SeedSequence(master_seed).spawn(trials + 1)
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children[1:]]
    return children[0], seeds


def run_trials(config: ExperimentConfig, setup: ExperimentSetup, seeds: Sequence[int]) -> List[Trial]:
    theta = config.true_theta()
    jobs = [
        _TrialJob(seed=s, setup=setup, theta=theta, N=config.N, adaptive=config.measurement == "adaptive",
                  pairs=config.pairs, dense_cap=config.dense_cap)
        for s in seeds
    ]
    bar = dict(total=len(jobs), desc=f"trials d={config.d} n={config.n}", disable=not config.progress)
    workers = min(config.workers, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(_run_trial, jobs), **bar))
    return [_run_trial(job) for job in tqdm(jobs, **bar)]


def aggregate(config: ExperimentConfig, trials: Sequence[Trial], crb: float) -> MseReport:
    good = [t for t in trials if t.converged]
    excluded = len(trials) - len(good)
    if not good:
        raise EstimationError(f"mse_experiment: all {len(trials)} trials failed to converge")
    if excluded:
        print(f"⚠️ {excluded} of {len(trials)} trials excluded (optimizer did not converge)")
    errors = np.array([t.estimate - t.true_theta for t in good])
    mse = errors.T @ errors / len(good)
    trace = float(np.trace(mse))
    bound = optimal_cn(config.d, config.n)
    return MseReport(
        d=config.d,
        n=config.n,
        N=config.N,
        trials=len(trials),
        excluded=excluded,
        mse_matrix=(mse + mse.T) / 2,
        trace_mse=trace,
        n_times_trace=config.N * trace,
        bound=bound,
        ratio=config.N * trace / bound,
        crb=crb,
        state=config.state,
        measurement=config.measurement,
        seed=config.seed,
        estimates=np.array([t.estimate for t in good]),
    )


def mse_experiment(config: ExperimentConfig) -> MseReport:
    """Kör alla försök för `config` och rapporterar N Tr MSE mot den optimala gränsen."""
    setup_seq, seeds = trial_seeds(config.seed, config.trials)
    setup = build_setup(config, np.random.default_rng(setup_seq))
    trials = run_trials(config, setup, seeds)
    return aggregate(config, trials, setup.crb)
