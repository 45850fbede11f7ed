"""Vanilla and dual-weighted acquisition with Gaussian local penalisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError

MODES = ("vanilla", "dual_weighted")
DISPERSION_TARGETS = ("head", "flux_norm", "conductivity")


@dataclass(frozen=True)
class Penalizer:
    center: tuple
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidArgumentError("penalizer scale must be positive")

    def __call__(self, points):
        d2 = np.sum((np.atleast_2d(points) - np.asarray(self.center, dtype=float)) ** 2, axis=1)
        return 1.0 - np.exp(-0.5 * d2 / self.scale)


def penalize(point, penalizer):
    """``1 - exp(-|x - x'|^2 / (2 l_psi))``; exactly zero at the center."""
    return float(penalizer(np.asarray(point, dtype=float))[0])


@dataclass
class AcquisitionField:
    node_scores: np.ndarray
    mode: str
    dispersion_target: str
    penalizer_scale: float
    base_scores: np.ndarray
    selected: list = field(default_factory=list)
    selected_points: np.ndarray | None = None
    selected_scores: list = field(default_factory=list)


def dispersion_field(ensemble, target="flux_norm"):
    """Posterior standard deviation (ddof=1) of a nodal field."""
    if target not in DISPERSION_TARGETS:
        raise InvalidArgumentError(f"unknown dispersion target {target!r}")
    if ensemble.n_retained == 0 or target not in ensemble.moments:
        raise InvalidStateError("ensemble holds no samples of the requested field")
    m = ensemble.moments[target]
    if m.count < 2:
        return np.zeros_like(m.mean)
    return m.std(ddof=1)


def base_scores(dispersion, mean_influence=None, mode="vanilla"):
    if mode == "vanilla":
        return np.asarray(dispersion, dtype=float).copy()
    if mode == "dual_weighted":
        if mean_influence is None:
            raise InvalidArgumentError("dual-weighted acquisition needs the mean influence function")
        return np.asarray(dispersion, dtype=float) * np.abs(mean_influence)
    raise InvalidArgumentError(f"unknown acquisition mode {mode!r}")


def select_batch(scores, nodes, n_new, l_psi, exclusions=()):
    """Greedy penalised selection over nodes.

    After each pick every score is multiplied by the Gaussian penaliser
    centred there. Excluded and already picked nodes are never eligible;
    ties go to the lowest node index. Returns ``(indices, scores at pick,
    final penalised scores)``.
    """
    scores = np.array(scores, dtype=float)
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise InvalidArgumentError("scores must be finite and non-negative")
    if not l_psi > 0:
        raise InvalidArgumentError("l_psi must be positive")
    eligible = np.ones(scores.size, dtype=bool)
    excl = np.asarray(list(exclusions), dtype=np.int64)
    eligible[excl] = False
    scores[excl] = 0.0
    if n_new > eligible.sum():
        raise InvalidArgumentError(f"cannot select {n_new} nodes from {int(eligible.sum())} eligible")
    picked, picked_scores = [], []
    for _ in range(n_new):
        idx = int(np.argmax(np.where(eligible, scores, -np.inf)))
        picked.append(idx)
        picked_scores.append(float(scores[idx]))
        eligible[idx] = False
        scores = scores * Penalizer(tuple(nodes[idx]), l_psi)(nodes)
    return picked, picked_scores, scores


def acquire_batch(ensemble, mesh, mode="dual_weighted", dispersion_target="flux_norm", n_new=8,
                  l_psi=0.01, exclusions=()):
    """Pick ``n_new`` well locations (mesh nodes) from the posterior moments."""
    if n_new < 0:
        raise InvalidArgumentError("n_new must be non-negative")
    disp = dispersion_field(ensemble, dispersion_target)
    mean_omega = None
    if mode == "dual_weighted":
        if "influence" not in ensemble.moments:
            raise InvalidStateError("ensemble carries no influence-function moments")
        mean_omega = ensemble.field_mean("influence")
    base = base_scores(disp, mean_omega, mode)
    picked, picked_scores, final = select_batch(base, mesh.nodes, n_new, l_psi, exclusions)
    return AcquisitionField(
        node_scores=final,
        mode=mode,
        dispersion_target=dispersion_target,
        penalizer_scale=l_psi,
        base_scores=base,
        selected=picked,
        selected_points=mesh.nodes[picked].copy(),
        selected_scores=picked_scores,
    )
