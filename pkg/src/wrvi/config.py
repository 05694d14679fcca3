"""Experiment configuration: strict JSON <-> nested dataclasses."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .prob import PriorBlock
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class ProblemConfig:
    kind: str = "nonlinear_poisson"
    # Poisson
    n_elements: int = 60
    domain: list = field(default_factory=lambda: [-1.0, 1.0])
    dirichlet: list = field(default_factory=lambda: [0.0, 0.0])
    solution_order: int = 9
    kappa_order: int = 4
    forcing_order: int = 3
    kappa_transform: str = "softplus"
    quad_points: int = 3
    eps_u: float = 1e-2
    precondition: bool = False
    # collocation
    grid_nx: int = 32
    grid_nt: int = 32
    x_max: float = 6.283185307179586
    t_max: float = 1.0
    eps_domain: float = 1e-2
    eps_boundary: float = 1e-3
    eps_initial: float = 1e-3
    conductivity: str = "nonlinear"
    z_prior: list[PriorBlock] = field(default_factory=list)
    f_prior: list[PriorBlock] = field(default_factory=list)


@dataclass
class NetworkConfig:
    hidden: list[int] = field(default_factory=lambda: [100, 100, 100, 100])
    beta_hidden: list[int] = field(default_factory=list)
    phi_hidden: list[int] = field(default_factory=list)
    activation: str = "swish"
    lv_min: float = -13.8
    lv_max: float = 2.0
    last_scale: float = 0.1
    field_scale: float = 1.0


@dataclass
class EvalConfig:
    n_draws: int = 100
    seed: int = 1234
    scan_gamma: list[float] = field(default_factory=list)
    scan_kappa: list[float] = field(default_factory=list)
    sweep_eps: list[float] = field(default_factory=list)
    sweep_seeds: list[int] = field(default_factory=list)


@dataclass
class ObservationConfig:
    operator: str = "truncate_middle"
    width: int = 20
    sigma_y: float = 0.01
    n_obs: int = 100
    n_holdout: int = 20
    data_seed: int = 7
    iterations: int = 10_000
    learning_rate: float = 1e-3
    halving_period: int = 200_000
    obs_batch: int = 0
    posterior_samples: int = 200


@dataclass
class PathsConfig:
    out_dir: str = "runs/default"
    checkpoint: str = ""


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        (inner,) = typing.get_args(tp) or (typing.Any,)
        return [_coerce(inner, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return list(value)
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return tuple(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, path: str = ""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown key (expected one of {sorted(names)})")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path or cls.__name__, str(exc)) from exc


def to_dict(cfg) -> dict:
    out = dataclasses.asdict(cfg)
    return json.loads(json.dumps(out))


def dumps(cfg) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    cfg = from_dict(ExperimentConfig, data)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def bundled(name: str) -> ExperimentConfig:
    """Load one of the configs shipped in ``wrvi/configs``."""
    res = resources.files("wrvi") / "configs" / f"{name}.json"
    if not res.is_file():
        raise ConfigError("", f"no bundled config named {name!r}")
    return loads(res.read_text(encoding="utf-8"))


def bundled_names() -> list[str]:
    root = resources.files("wrvi") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def validate(cfg: ExperimentConfig) -> None:
    from .pde import KINDS

    p = cfg.problem
    if p.kind not in KINDS:
        raise ConfigError("problem.kind", f"unknown kind {p.kind!r}; expected one of {list(KINDS)}")
    if len(p.domain) != 2 or not p.domain[1] > p.domain[0]:
        raise ConfigError("problem.domain", "expected [a, b] with a < b")
    if len(p.dirichlet) != 2:
        raise ConfigError("problem.dirichlet", "expected [left, right]")
    for name in ("eps_u", "eps_domain", "eps_boundary", "eps_initial"):
        if not getattr(p, name) > 0:
            raise ConfigError(f"problem.{name}", "must be positive")
    if p.n_elements < 1:
        raise ConfigError("problem.n_elements", "must be >= 1")
    if not cfg.network.hidden:
        raise ConfigError("network.hidden", "needs at least one hidden layer")
    o = cfg.observation
    if not o.sigma_y > 0:
        raise ConfigError("observation.sigma_y", "must be positive")
    if o.operator not in ("identity", "truncate_middle"):
        raise ConfigError("observation.operator", f"unknown operator {o.operator!r}")
    if any(not e > 0 for e in cfg.evaluation.sweep_eps):
        raise ConfigError("evaluation.sweep_eps", "values must be positive")
    if cfg.evaluation.n_draws < 0:
        raise ConfigError("evaluation.n_draws", "must be >= 0")
