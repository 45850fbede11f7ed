"""Posterior sampling over KL coefficients."""

from .forward import ForwardModel, ForwardResult
from .moments import RunningMoments
from .observations import ObservationSet, log_likelihood
from .samplers import (
    AdaptiveMetropolis,
    AEMState,
    ChainConfig,
    ChainState,
    DAState,
    PosteriorEnsemble,
    aem_update,
    am_propose,
    da_step,
    log_prior,
    mh_step,
    run_chain,
    run_chains,
    run_mh_chain,
)

__all__ = [
    "AEMState",
    "AdaptiveMetropolis",
    "ChainConfig",
    "ChainState",
    "DAState",
    "ForwardModel",
    "ForwardResult",
    "ObservationSet",
    "PosteriorEnsemble",
    "RunningMoments",
    "aem_update",
    "am_propose",
    "da_step",
    "log_likelihood",
    "log_prior",
    "mh_step",
    "run_chain",
    "run_chains",
    "run_mh_chain",
]
