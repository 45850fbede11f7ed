"""Synthetic adaptive-design experiment: truth, wells, inversion, acquisition, metrics.

Seeding
-------
Every random stream of replicate ``r`` under master seed ``s`` comes from
``SeedSequence(s, spawn_key=(r, p))`` where ``p`` indexes :data:`STREAMS`.
Streams never depend on the acquisition strategy, so the truth field, the
initial wells and the initial observations are shared by all strategies.
The three posteriors of a replicate (initial, vanilla, dual-weighted) use the
same chain stream, so their comparison is made with common random numbers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .acquisition import acquire_batch
from .errors import DegenerateDistributionError, GWDesignError, InvalidArgumentError
from .fem import build_rect_mesh
from .inference import ForwardModel, ObservationSet, run_chains
from .random_field import build_kl_basis, sample_prior

log = logging.getLogger(__name__)

STREAMS = ("truth", "wells", "observe_initial", "chains", "observe_vanilla", "observe_dual_weighted")
STRATEGIES = ("vanilla", "dual_weighted")
POSTERIORS = ("initial",) + STRATEGIES


def stream(master_seed, replicate, purpose):
    return np.random.SeedSequence(master_seed, spawn_key=(replicate, STREAMS.index(purpose)))


def lhs_wells(n, width, height, rng):
    """Latin hypercube well layout: one point per stratum along each axis."""
    if n < 1:
        raise InvalidArgumentError("need at least one well")
    unit = qmc.LatinHypercube(d=2, rng=rng).random(n)
    return unit * np.array([width, height])


def observe(truth, wells, head_noise_std, fluxnorm_noise_std, rng):
    """Noisy head and flux-norm readings from a solved truth model at ``wells``."""
    wells = np.asarray(wells, dtype=float).reshape(-1, 2)
    clean = truth.model.with_wells(wells).predictions_from(truth.conductivity, truth.head)
    n = wells.shape[0]
    head = clean[:n] + rng.normal(0.0, head_noise_std, n)
    flux = clean[n:] + rng.normal(0.0, fluxnorm_noise_std, n)
    return ObservationSet(wells, head, flux, head_noise_std, fluxnorm_noise_std)


def mse(qoi_samples, q_true):
    q = np.asarray(qoi_samples, dtype=float)
    if q.size == 0:
        raise InvalidArgumentError("no QoI samples")
    return float(np.mean((q_true - q) ** 2))


def sample_variance(qoi_samples):
    q = np.asarray(qoi_samples, dtype=float)
    if q.size < 2:
        raise InvalidArgumentError("sample variance needs at least two samples")
    return float(np.var(q, ddof=1))


def scott_bandwidth(samples):
    q = np.asarray(samples, dtype=float)
    return float(np.std(q, ddof=1)) * q.size ** (-0.2)


def kde_density_at(qoi_samples, q_true):
    """Gaussian KDE of the samples evaluated at ``q_true`` (Scott bandwidth)."""
    q = np.asarray(qoi_samples, dtype=float)
    if q.size < 2:
        raise InvalidArgumentError("kernel density needs at least two samples")
    h = scott_bandwidth(q)
    if np.all(q == q[0]) or not h > 0:
        raise DegenerateDistributionError("QoI samples have zero variance")
    z = (q_true - q) / h
    return float(np.sum(np.exp(-0.5 * z * z)) / (q.size * h * math.sqrt(2.0 * math.pi)))


@dataclass
class PosteriorSummary:
    qoi: np.ndarray
    mse: float
    variance: float
    density: float
    mean: float
    diagnostics: list = field(default_factory=list)

    @classmethod
    def from_samples(cls, qoi, q_true, diagnostics=()):
        qoi = np.asarray(qoi, dtype=float)
        try:
            density = kde_density_at(qoi, q_true)
        except DegenerateDistributionError:
            density = float("nan")
        return cls(qoi, mse(qoi, q_true), sample_variance(qoi), density, float(qoi.mean()), list(diagnostics))

    def errors(self, q_true):
        return q_true - self.qoi


@dataclass
class RoundResult:
    replicate: int
    master_seed: int
    q_true: float
    posteriors: dict
    wells: dict
    observations: dict

    def error_samples(self, name):
        return self.q_true - self.posteriors[name].qoi

    def to_dict(self):
        return {
            "replicate": self.replicate,
            "master_seed": self.master_seed,
            "failed": False,
            "q_true": self.q_true,
            "posteriors": {
                name: {
                    "mse": p.mse,
                    "variance": p.variance,
                    "kde_density": p.density,
                    "mean": p.mean,
                    "n_samples": int(p.qoi.size),
                    "diagnostics": p.diagnostics,
                }
                for name, p in self.posteriors.items()
            },
            "wells": {k: np.asarray(v).tolist() for k, v in self.wells.items()},
            "observations": {k: v.to_dict() for k, v in self.observations.items()},
        }


class ReplicateFailure(GWDesignError):
    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class Setup:
    """Meshes and KL bases shared by every replicate of one configuration."""

    fine_mesh: object
    coarse_mesh: object
    truth_basis: object
    inversion_basis: object
    coarse_basis: object

    @classmethod
    def build(cls, config):
        d, p = config.domain, config.prior
        fine = build_rect_mesh(d.width, d.height, *config.mesh.fine)
        coarse = build_rect_mesh(d.width, d.height, *config.mesh.coarse)
        truth_basis = build_kl_basis(fine, p.truth_n_kl, p.length_scale, p.mu, p.sigma)
        inv = truth_basis.truncate(p.n_kl)
        return cls(fine, coarse, truth_basis, inv, inv.transfer(fine, coarse))


def run_replicate(config, replicate=0, master_seed=None, setup=None):
    """Run one full replicate: truth, initial inversion, acquisition, two re-inversions."""
    seed = config.seed if master_seed is None else master_seed
    setup = setup or Setup.build(config)
    rngs = {name: np.random.default_rng(stream(seed, replicate, name)) for name in STREAMS}
    chain_seed = int(stream(seed, replicate, "chains").generate_state(1, np.uint64)[0])
    chain_cfg = config.chain.to_chain_config(chain_seed)
    noise = (config.noise.head, config.noise.flux_norm)
    stage = "truth"
    try:
        truth_model = ForwardModel(setup.fine_mesh, setup.truth_basis, config.heads,
                                   qoi_boundary=config.boundary.qoi_boundary)
        truth = truth_model.evaluate(sample_prior(rngs["truth"], setup.truth_basis.n_kl))
        q_true = truth.qoi

        stage = "initial_wells"
        wells0 = lhs_wells(config.design.initial_wells, config.domain.width, config.domain.height, rngs["wells"])
        obs0 = observe(truth, wells0, *noise, rngs["observe_initial"])

        stage = "initial_inversion"
        fine = ForwardModel(setup.fine_mesh, setup.inversion_basis, config.heads, wells0,
                            config.boundary.qoi_boundary)
        coarse = ForwardModel(setup.coarse_mesh, setup.coarse_basis, config.heads, wells0,
                              config.boundary.qoi_boundary)
        ens0 = run_chains(chain_cfg, fine, coarse, obs0)
        posteriors = {"initial": PosteriorSummary.from_samples(ens0.qoi, q_true, ens0.diagnostics)}
        wells = {"initial": wells0}
        observations = {"initial": obs0}
        exclusions = sorted({setup.fine_mesh.nearest_node(x) for x in wells0})

        for strategy in STRATEGIES:
            stage = f"acquisition_{strategy}"
            acq = acquire_batch(ens0, setup.fine_mesh, strategy, config.design.dispersion_target,
                                config.design.new_wells, config.design.l_psi, exclusions)
            new_obs = observe(truth, acq.selected_points, *noise, rngs[f"observe_{strategy}"])
            obs = obs0.append(new_obs)
            wells[strategy] = acq.selected_points
            observations[strategy] = obs
            stage = f"inversion_{strategy}"
            if new_obs.n_wells == 0:
                ens = ens0
            else:
                ens = run_chains(chain_cfg, fine.with_wells(obs.wells), coarse.with_wells(obs.wells), obs)
            posteriors[strategy] = PosteriorSummary.from_samples(ens.qoi, q_true, ens.diagnostics)
    except Exception as exc:
        raise ReplicateFailure(stage, str(exc)) from exc
    return RoundResult(replicate, seed, q_true, posteriors, wells, observations)


def _run_one(args):
    config, replicate, master_seed, setup = args
    try:
        return run_replicate(config, replicate, master_seed, setup)
    except ReplicateFailure as exc:
        log.error("replicate %d failed at %s", replicate, exc)
        return {"replicate": replicate, "master_seed": master_seed, "failed": True,
                "stage": exc.stage, "error": str(exc)}


def run_replicates(config, n=None, master_seed=None, parallel=1, setup=None):
    """Run ``n`` replicates, optionally in worker processes; results are in replicate order."""
    n = config.replicates if n is None else n
    if n < 1:
        raise InvalidArgumentError("number of replicates must be >= 1")
    seed = config.seed if master_seed is None else master_seed
    setup = setup or Setup.build(config)
    jobs = [(config, r, seed, setup) for r in range(n)]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def _reduction(before, after):
    return 100.0 * (1.0 - after / before) if before > 0 else float("nan")


def _improvement(before, after):
    return 100.0 * (after / before - 1.0) if before > 0 else float("nan")


def aggregate(results):
    """Median percentage changes per strategy relative to the initial posterior.

    Accepts :class:`RoundResult` objects or their ``to_dict`` form; failed
    replicates (dicts with ``failed: True``) are counted and skipped.
    """
    rows = [r.to_dict() if isinstance(r, RoundResult) else r for r in results]
    ok = [r for r in rows if not r.get("failed")]
    if not ok:
        raise InvalidArgumentError("no successful replicates to aggregate")
    summary = {
        "n_replicates": len(rows),
        "n_successful": len(ok),
        "failed_replicates": [r["replicate"] for r in rows if r.get("failed")],
        "median_mse_reduction_pct": {},
        "median_variance_reduction_pct": {},
        "median_density_improvement_pct": {},
        "mse_worsened_count": {},
    }
    for s in STRATEGIES:
        mse_red, var_red, dens_imp, worse = [], [], [], 0
        for r in ok:
            init, post = r["posteriors"]["initial"], r["posteriors"][s]
            mse_red.append(_reduction(init["mse"], post["mse"]))
            var_red.append(_reduction(init["variance"], post["variance"]))
            dens_imp.append(_improvement(init["kde_density"], post["kde_density"]))
            worse += post["mse"] > init["mse"]
        summary["median_mse_reduction_pct"][s] = float(np.median(mse_red))
        summary["median_variance_reduction_pct"][s] = float(np.median(var_red))
        summary["median_density_improvement_pct"][s] = float(np.median(dens_imp))
        summary["mse_worsened_count"][s] = int(worse)
    return summary
