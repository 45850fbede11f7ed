"""Metropolis-Hastings, Adaptive Metropolis and two-level Delayed Acceptance.

The delayed-acceptance sampler runs a short Metropolis subchain on a cheap
coarse model, corrected by a state-independent approximation error model
(AEM), and promotes the subchain endpoint with a fine-model accept/reject
step. Prior and proposal terms cancel in the promotion ratio because the
subchain targets prior times corrected coarse likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    ChainFailureError,
    ContractViolationError,
    GWDesignError,
    InvalidArgumentError,
    InvalidStateError,
)
from .moments import RunningMoments
from .observations import log_likelihood

log = logging.getLogger(__name__)

FIELD_NAMES = ("head", "flux_norm", "influence", "conductivity")
_SOLVE_ERRORS = (GWDesignError, np.linalg.LinAlgError, FloatingPointError, ValueError)


@dataclass
class ChainConfig:
    n_fine_samples: int = 25000
    subchain_length: int = 5
    burn_in: int = 5000
    n_chains: int = 2
    adaptation_start: int = 500
    am_jitter: float = 1e-6
    am_scale: float | None = None  # defaults to 2.38**2 / dim
    initial_step: float = 0.1
    theta_thin: int = 1
    seed: int | None = 0

    def __post_init__(self):
        if self.n_fine_samples < 1 or self.n_chains < 1:
            raise InvalidArgumentError("n_fine_samples and n_chains must be >= 1")
        if not 0 <= self.burn_in < self.n_fine_samples:
            raise InvalidArgumentError("burn_in must lie in [0, n_fine_samples)")
        if self.subchain_length < 1:
            raise InvalidArgumentError("subchain_length must be >= 1")
        if self.theta_thin < 1:
            raise InvalidArgumentError("theta_thin must be >= 1")

    @property
    def retained_per_chain(self):
        return self.n_fine_samples - self.burn_in

    @property
    def n_retained(self):
        return self.n_chains * self.retained_per_chain


def log_prior(theta):
    return -0.5 * float(theta @ theta)


class AdaptiveMetropolis:
    """Gaussian random-walk proposal with covariance learnt from the chain history.

    Before ``adaptation_start`` history points the proposal is isotropic with
    standard deviation ``initial_step``; afterwards it is
    ``scale * Cov(history) + jitter * I``.
    """

    def __init__(self, dim, adaptation_start=500, scale=None, jitter=1e-6, initial_step=0.1):
        self.dim = dim
        self.adaptation_start = adaptation_start
        self.scale = 2.38 ** 2 / dim if scale is None else scale
        self.jitter = jitter
        self.initial_step = initial_step
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))
        self._chol = None

    @property
    def adapted(self):
        return self.count >= max(self.adaptation_start, 2)

    def update(self, theta):
        self.count += 1
        delta = theta - self.mean
        self.mean = self.mean + delta / self.count
        self.scatter += np.outer(delta, theta - self.mean)
        if self.adapted:
            self._chol = None

    def empirical_covariance(self):
        if self.count < 2:
            raise InvalidStateError("need at least two history points")
        return self.scatter / (self.count - 1)

    @property
    def covariance(self):
        if not self.adapted:
            return self.initial_step ** 2 * np.eye(self.dim)
        return self.scale * self.empirical_covariance() + self.jitter * np.eye(self.dim)

    def propose(self, current, rng):
        z = rng.standard_normal(self.dim)
        if not self.adapted:
            return current + self.initial_step * z
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.covariance)
        return current + self._chol @ z

    @staticmethod
    def log_proposal_ratio(current, proposal):
        """``log q(current | proposal) - log q(proposal | current)``; zero for this kernel."""
        return 0.0


def am_propose(current, am, rng):
    return am.propose(current, rng)


@dataclass
class ChainState:
    theta: np.ndarray
    log_post: float
    payload: object = None


def mh_step(current, proposal, log_post_fn, rng, log_proposal_ratio=0.0):
    """One Metropolis-Hastings accept/reject.

    ``log_post_fn(theta)`` returns ``(log posterior, payload)``. A NaN log
    posterior is treated as a probability-zero state. One uniform is drawn
    per call whatever the outcome, so the random stream does not depend on
    the decision.
    """
    log_p, payload = log_post_fn(proposal)
    u = rng.random()
    if math.isnan(log_p) or log_p == -math.inf:
        return current, False
    log_alpha = log_p - current.log_post + log_proposal_ratio
    if log_alpha >= 0 or math.log(u) < log_alpha:
        return ChainState(proposal, log_p, payload), True
    return current, False


@dataclass(frozen=True)
class AEMState:
    """Running estimate of the fine-minus-coarse prediction offset."""

    bias: np.ndarray
    m2: np.ndarray
    sample_count: int = 0
    frozen: bool = False

    @classmethod
    def empty(cls, n_data):
        return cls(np.zeros(n_data), np.zeros(n_data))

    @property
    def covariance(self):
        """Diagonal of the offset covariance (unbiased; zero with < 2 samples)."""
        if self.sample_count < 2:
            return np.zeros_like(self.bias)
        return self.m2 / (self.sample_count - 1)

    def freeze(self):
        return AEMState(self.bias, self.m2, self.sample_count, True)


def aem_update(state, fine_pred, coarse_pred):
    if state.frozen:
        raise ContractViolationError("approximation error model is frozen")
    d = np.asarray(fine_pred, dtype=float) - np.asarray(coarse_pred, dtype=float)
    n = state.sample_count + 1
    delta = d - state.bias
    bias = state.bias + delta / n
    m2 = state.m2 + delta * (d - bias)
    return AEMState(bias, m2, n, False)


@dataclass
class DAState:
    """Fine-level chain state with its cached fine result and coarse prediction."""

    theta: np.ndarray
    fine_loglik: float
    fine_result: object
    coarse_pred: np.ndarray


@dataclass
class StepInfo:
    accepted: bool
    fine_evaluated: bool
    coarse_accepts: int
    coarse_loglik: float
    fine_pred: np.ndarray | None = None
    coarse_pred: np.ndarray | None = None


def _safe_predict(model, theta):
    try:
        pred = model.predict(theta)
    except _SOLVE_ERRORS as exc:
        log.debug("coarse solve failed: %s", exc)
        return None
    return pred if np.all(np.isfinite(pred)) else None


def _safe_evaluate(model, theta):
    try:
        res = model.evaluate(theta)
    except _SOLVE_ERRORS as exc:
        log.warning("fine solve failed, proposal rejected: %s", exc)
        return None
    return res if np.all(np.isfinite(res.predictions)) else None


def corrected_coarse_loglik(pred, observations, aem):
    if pred is None:
        return -math.inf
    return log_likelihood(pred + aem.bias, observations, aem.covariance)


def da_step(state, config, coarse_model, fine_model, aem, am, observations, rng):
    """One fine-level Delayed Acceptance transition with a coarse subchain."""

    def coarse_log_post(theta):
        pred = _safe_predict(coarse_model, theta)
        return log_prior(theta) + corrected_coarse_loglik(pred, observations, aem), pred

    start_ll = corrected_coarse_loglik(state.coarse_pred, observations, aem)
    start = ChainState(state.theta, log_prior(state.theta) + start_ll, state.coarse_pred)
    cur, n_acc = start, 0
    for _ in range(config.subchain_length):
        cur, acc = mh_step(cur, am.propose(cur.theta, rng), coarse_log_post, rng)
        n_acc += acc

    if cur is start or np.array_equal(cur.theta, state.theta):
        return state, StepInfo(False, False, n_acc, start_ll)

    result = _safe_evaluate(fine_model, cur.theta)
    u = rng.random()
    prop_ll = cur.log_post - log_prior(cur.theta)
    if result is None:
        return state, StepInfo(False, True, n_acc, start_ll)
    fine_ll = log_likelihood(result.predictions, observations)
    log_alpha = (fine_ll - state.fine_loglik) - (prop_ll - start_ll)
    info = StepInfo(False, True, n_acc, start_ll, result.predictions, cur.payload)
    if log_alpha >= 0 or math.log(u) < log_alpha:
        info.accepted = True
        info.coarse_loglik = prop_ll
        return DAState(cur.theta, fine_ll, result, cur.payload), info
    return state, info


@dataclass
class PosteriorEnsemble:
    """Retained posterior samples and streaming moments of the nodal fields."""

    thetas: list = field(default_factory=list)
    moments: dict = field(default_factory=dict)
    qoi: list = field(default_factory=list)
    n_chains: int = 0
    diagnostics: list = field(default_factory=list)

    @property
    def n_retained(self):
        return len(self.qoi)

    def add(self, theta, result, keep_theta=True):
        if keep_theta:
            self.thetas.append(np.array(theta))
        fields = result.fields() if hasattr(result, "fields") else {}
        for name, values in fields.items():
            if name not in self.moments:
                self.moments[name] = RunningMoments(np.shape(values))
            self.moments[name].update(values)
        self.qoi.append(float(result.qoi))

    def merge(self, other):
        moments = dict(self.moments)
        for name, m in other.moments.items():
            moments[name] = moments[name].merge(m) if name in moments else m
        return PosteriorEnsemble(
            self.thetas + other.thetas,
            moments,
            self.qoi + other.qoi,
            self.n_chains + other.n_chains,
            self.diagnostics + other.diagnostics,
        )

    def field_mean(self, name):
        return self.moments[name].mean

    def field_std(self, name):
        return self.moments[name].std(ddof=1)


def _initial_state(fine_model, coarse_model, observations, rng, max_tries=100):
    for _ in range(max_tries):
        theta = rng.standard_normal(fine_model.n_params)
        pred = _safe_predict(coarse_model, theta)
        result = _safe_evaluate(fine_model, theta)
        if pred is not None and result is not None:
            return DAState(theta, log_likelihood(result.predictions, observations), result, pred)
    raise ChainFailureError("could not find a finite initial state")


def run_chain(config, fine_model, coarse_model, observations, seed_seq, chain_index=0, record=None):
    """Run one DA chain; returns its :class:`PosteriorEnsemble`.

    ``record``, if given, is called with one dict per retained sample.
    """
    rng = np.random.default_rng(seed_seq)
    if fine_model.n_params != coarse_model.n_params:
        raise InvalidArgumentError("fine and coarse models have different parameter dimensions")
    am = AdaptiveMetropolis(
        fine_model.n_params, config.adaptation_start, config.am_scale, config.am_jitter, config.initial_step
    )
    ens = PosteriorEnsemble(n_chains=1)
    stats = {"chain": chain_index, "fine_accepts": 0, "fine_evaluations": 0, "coarse_accepts": 0, "step": 0}
    try:
        state = _initial_state(fine_model, coarse_model, observations, rng)
        aem = AEMState.empty(observations.data.size)
        if config.burn_in > 0:
            aem = aem_update(aem, state.fine_result.predictions, state.coarse_pred)
        else:
            aem = aem.freeze()
        for step in range(config.n_fine_samples):
            stats["step"] = step
            state, info = da_step(state, config, coarse_model, fine_model, aem, am, observations, rng)
            stats["fine_accepts"] += info.accepted
            stats["fine_evaluations"] += info.fine_evaluated
            stats["coarse_accepts"] += info.coarse_accepts
            if step < config.burn_in:
                if info.fine_pred is not None and info.coarse_pred is not None:
                    aem = aem_update(aem, info.fine_pred, info.coarse_pred)
                if step == config.burn_in - 1:
                    aem = aem.freeze()
            am.update(state.theta)
            if step >= config.burn_in:
                keep = (step - config.burn_in) % config.theta_thin == 0
                ens.add(state.theta, state.fine_result, keep_theta=keep)
                if record is not None:
                    record({
                        "chain": chain_index,
                        "step": step,
                        "theta": state.theta.tolist(),
                        "loglik_fine": state.fine_loglik,
                        "loglik_coarse": info.coarse_loglik,
                        "qoi": ens.qoi[-1],
                        "accepted": bool(info.accepted),
                        "coarse_accepts": int(info.coarse_accepts),
                    })
    except Exception as exc:
        raise ChainFailureError(f"chain {chain_index} aborted at step {stats['step']}: {exc}", stats) from exc
    stats["aem_samples"] = aem.sample_count
    stats["acceptance_rate"] = stats["fine_accepts"] / config.n_fine_samples
    stats["coarse_acceptance_rate"] = stats["coarse_accepts"] / (config.n_fine_samples * config.subchain_length)
    ens.diagnostics.append(stats)
    return ens


def run_chains(config, fine_model, coarse_model, observations, record_factory=None):
    """Run ``config.n_chains`` independent chains and merge their ensembles.

    Chain ``c`` draws from ``SeedSequence(config.seed).spawn(n_chains)[c]``.
    ``record_factory(c)`` may return a per-chain record callback.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    ens = PosteriorEnsemble()
    for c, ss in enumerate(seeds):
        record = record_factory(c) if record_factory is not None else None
        ens = ens.merge(run_chain(config, fine_model, coarse_model, observations, ss, c, record))
    return ens


def run_mh_chain(log_post_fn, theta0, n_steps, rng, am):
    """Plain single-level adaptive Metropolis chain (used as a reference sampler).

    Returns the array of visited states (length ``n_steps``) and the accept count.
    """
    lp, payload = log_post_fn(theta0)
    cur = ChainState(np.asarray(theta0, dtype=float), lp, payload)
    out = np.empty((n_steps, np.size(theta0)))
    n_acc = 0
    for i in range(n_steps):
        cur, acc = mh_step(cur, am.propose(cur.theta, rng), log_post_fn, rng)
        n_acc += acc
        am.update(cur.theta)
        out[i] = cur.theta
    return out, n_acc
