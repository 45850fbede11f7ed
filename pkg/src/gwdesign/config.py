"""Experiment configuration and its YAML representation.

The file mirrors :class:`ExperimentConfig` section by section::

    domain: {width: 2.0, height: 1.0}
    mesh: {fine: [50, 25], coarse: [36, 18]}
    prior: {length_scale: 0.1, mu: -2.0, sigma: 1.0, truth_n_kl: 256, n_kl: 128}
    boundary: {head_left: 1.0, head_right: 0.0, qoi_boundary: right}
    noise: {head: 0.01, flux_norm: 0.001}
    design: {initial_wells: 8, new_wells: 8, l_psi: 0.01, dispersion_target: flux_norm}
    chain: {n_fine_samples: 25000, subchain_length: 5, burn_in: 5000, n_chains: 2, ...}
    replicates: 30
    seed: 0

Unknown keys are rejected. Missing keys take the defaults below, which are
the full-scale values of the synthetic groundwater experiment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import InvalidArgumentError
from .inference.samplers import ChainConfig


class ConfigError(InvalidArgumentError):
    pass


@dataclass
class DomainConfig:
    width: float = 2.0
    height: float = 1.0


@dataclass
class MeshConfig:
    fine: tuple = (50, 25)
    coarse: tuple = (36, 18)


@dataclass
class PriorConfig:
    length_scale: float = 0.1
    mu: float = -2.0
    sigma: float = 1.0
    truth_n_kl: int = 256
    n_kl: int = 128


@dataclass
class BoundaryConfig:
    head_left: float = 1.0
    head_right: float = 0.0
    qoi_boundary: str = "right"


@dataclass
class NoiseConfig:
    head: float = 0.01
    flux_norm: float = 0.001


@dataclass
class DesignConfig:
    initial_wells: int = 8
    new_wells: int = 8
    l_psi: float = 0.01
    dispersion_target: str = "flux_norm"


@dataclass
class ChainSection:
    n_fine_samples: int = 25000
    subchain_length: int = 5
    burn_in: int = 5000
    n_chains: int = 2
    adaptation_start: int = 500
    am_jitter: float = 1e-6
    am_scale: float | None = None
    initial_step: float = 0.1
    theta_thin: int = 1

    def to_chain_config(self, seed):
        return ChainConfig(seed=seed, **dataclasses.asdict(self))


@dataclass
class ExperimentConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    chain: ChainSection = field(default_factory=ChainSection)
    replicates: int = 30
    seed: int = 0

    def __post_init__(self):
        self.mesh.fine = tuple(int(v) for v in self.mesh.fine)
        self.mesh.coarse = tuple(int(v) for v in self.mesh.coarse)
        self.validate()

    def validate(self):
        p, d = self.prior, self.design
        if len(self.mesh.fine) != 2 or len(self.mesh.coarse) != 2:
            raise ConfigError("mesh.fine and mesh.coarse must be [nx, ny] pairs")
        if min(self.mesh.fine + self.mesh.coarse) < 1:
            raise ConfigError("mesh element counts must be >= 1")
        if p.n_kl < 1 or p.truth_n_kl < p.n_kl:
            raise ConfigError("need 1 <= prior.n_kl <= prior.truth_n_kl")
        if d.initial_wells < 1 or d.new_wells < 0:
            raise ConfigError("design.initial_wells must be >= 1 and design.new_wells >= 0")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.boundary.qoi_boundary not in ("left", "right"):
            raise ConfigError("boundary.qoi_boundary must be a fixed-head side")
        try:
            self.chain.to_chain_config(0)
        except InvalidArgumentError as exc:
            raise ConfigError(f"chain: {exc}") from exc

    @property
    def heads(self):
        return {"left": self.boundary.head_left, "right": self.boundary.head_right}

    @classmethod
    def desk(cls):
        """Reduced-scale setup that runs on a laptop in minutes per replicate.

        The truth and the inversion share one 32-mode expansion; raise
        ``prior.truth_n_kl`` to draw truths outside the inversion model class.
        """
        return cls(
            mesh=MeshConfig(fine=(36, 18), coarse=(24, 12)),
            prior=PriorConfig(truth_n_kl=32, n_kl=32),
            chain=ChainSection(n_fine_samples=2000, burn_in=500),
            replicates=10,
        )

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["mesh"] = {k: list(v) for k, v in out["mesh"].items()}
        return out

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "")

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text):
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"configuration is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_yaml())


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"section {prefix or '<root>'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid section {prefix or '<root>'}: {exc}") from exc
