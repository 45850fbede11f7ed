"""Well observations and the Gaussian log-likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Noisy head and flux-norm readings at a list of wells.

    The data vector is ordered as all heads followed by all flux norms, in
    well order. Zero noise is allowed when generating synthetic data, but a
    likelihood then needs some additional variance to be finite.
    """

    wells: np.ndarray
    head_values: np.ndarray
    fluxnorm_values: np.ndarray
    head_noise_std: float
    fluxnorm_noise_std: float

    def __post_init__(self):
        wells = np.asarray(self.wells, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "wells", wells)
        for name in ("head_values", "fluxnorm_values"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if arr.size != wells.shape[0]:
                raise InvalidArgumentError(f"{name} has {arr.size} entries for {wells.shape[0]} wells")
            object.__setattr__(self, name, arr)
        if self.head_noise_std < 0 or self.fluxnorm_noise_std < 0:
            raise InvalidArgumentError("noise standard deviations must be non-negative")

    @property
    def n_wells(self):
        return self.wells.shape[0]

    @property
    def data(self):
        return np.concatenate([self.head_values, self.fluxnorm_values])

    @property
    def noise_variance(self):
        n = self.n_wells
        return np.concatenate([
            np.full(n, self.head_noise_std ** 2),
            np.full(n, self.fluxnorm_noise_std ** 2),
        ])

    def append(self, other):
        """Observation set with ``other``'s wells added after the existing ones."""
        if (other.head_noise_std, other.fluxnorm_noise_std) != (self.head_noise_std, self.fluxnorm_noise_std):
            raise InvalidArgumentError("cannot merge observation sets with different noise levels")
        return ObservationSet(
            np.vstack([self.wells, other.wells]),
            np.concatenate([self.head_values, other.head_values]),
            np.concatenate([self.fluxnorm_values, other.fluxnorm_values]),
            self.head_noise_std,
            self.fluxnorm_noise_std,
        )

    def to_dict(self):
        return {
            "wells": self.wells.tolist(),
            "head_values": self.head_values.tolist(),
            "fluxnorm_values": self.fluxnorm_values.tolist(),
            "head_noise_std": self.head_noise_std,
            "fluxnorm_noise_std": self.fluxnorm_noise_std,
        }


def log_likelihood(predicted, observed, extra_cov_diag=None):
    """Unnormalised Gaussian log-likelihood ``-r^T (S + diag(extra))^-1 r / 2``."""
    predicted = np.asarray(predicted, dtype=float)
    data = observed.data
    if predicted.shape != data.shape:
        raise InvalidArgumentError(f"prediction length {predicted.size} != data length {data.size}")
    var = observed.noise_variance
    if extra_cov_diag is not None:
        extra = np.asarray(extra_cov_diag, dtype=float)
        if extra.shape != var.shape:
            raise InvalidArgumentError("extra_cov_diag does not match the data length")
        var = var + extra
    r = predicted - data
    return float(-0.5 * np.sum(r * r / var))
