"""JSON run configuration: sections, defaults, validation, overrides."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .operators import BINARY_NAMES, DEFAULT_BINARY


class ConfigError(ValueError):
    pass


@dataclass
class ProblemSpec:
    name: str = "poisson60"
    d: int | None = None
    nu: float | None = None
    mu: float | None = None
    lam: float = 100.0
    n_interior: int = 500
    n_boundary: int = 1000
    seed: int = 0


@dataclass
class TreeSpec:
    depth: int = 2
    binary: list[str] = field(default_factory=lambda: list(DEFAULT_BINARY))


@dataclass
class TuneSpec:
    M: int = 200
    corr_len: float = 0.5
    realizations: int = 10
    samples: int = 500
    gamma_min: float = 0.1
    gamma_max: float = 2.0
    grid_size: int = 50
    seed: int = 0


@dataclass
class TnSpec:
    M: int = 200
    J: int = 500
    gamma: float | None = None  # None -> tuned
    domain: list[float] | None = None  # None -> problem domain
    seed: int = 0
    tune: TuneSpec = field(default_factory=TuneSpec)


@dataclass
class PoolSpec:
    name: str | None = None  # a named pool; mutually exclusive with operators
    operators: list[str] | None = None  # None -> named pool, else the desk pool
    file: str | None = None
    tn: TnSpec = field(default_factory=TnSpec)


@dataclass
class SearchSpec:
    T: int = 50
    N: int = 10
    K: int = 10
    T1: int = 2
    T2: int = 20
    T3: int = 2000
    lr1: float = 0.001
    bfgs_step: float = 1.0
    lr3: float = 0.01
    lr3_final_frac: float = 0.01
    restarts: int = 1
    checkpoint_every: int = 10


@dataclass
class ControllerSpec:
    epsilon: float = 0.1
    epsilon_final: float | None = None  # linear decay target; None -> constant
    nu_q: float = 0.5
    lr: float = 0.002


@dataclass
class SliceSpec:
    dims: list[int] = field(default_factory=lambda: [0, 1])
    resolution: int = 200
    fixed_values: list[float] | None = None
    relative: bool = False


@dataclass
class EvalSpec:
    n_points: int = 2000
    repeats: int = 50
    seed: int = 1234
    slice: SliceSpec = field(default_factory=SliceSpec)


@dataclass
class RunConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    tree: TreeSpec = field(default_factory=TreeSpec)
    pool: PoolSpec = field(default_factory=PoolSpec)
    search: SearchSpec = field(default_factory=SearchSpec)
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    seed: int = 0
    output_dir: str | None = None
    notes: str = ""

    def validate(self) -> "RunConfig":
        s = self.search
        for key in ("N", "K", "T1", "T2", "T3", "restarts", "checkpoint_every"):
            if getattr(s, key) < (0 if key in ("T1", "T2", "T3") else 1):
                raise ConfigError(f"search.{key} must be positive")
        if s.T < 0:
            raise ConfigError("search.T must be non-negative")
        if self.tree.depth not in (1, 2, 3):
            raise ConfigError("tree.depth must be 1, 2 or 3")
        for b in self.tree.binary:
            if b not in BINARY_NAMES:
                raise ConfigError(f"tree.binary: unknown operator {b!r}")
        c = self.controller
        if not 0 <= c.epsilon <= 1:
            raise ConfigError("controller.epsilon must lie in [0, 1]")
        if c.epsilon_final is not None and not 0 <= c.epsilon_final <= 1:
            raise ConfigError("controller.epsilon_final must lie in [0, 1]")
        if not 0 < c.nu_q < 1:
            raise ConfigError("controller.nu_q must lie in (0, 1)")
        if self.pool.name is not None and self.pool.operators is not None:
            raise ConfigError("pool.name and pool.operators are mutually exclusive")
        if self.pool.operators is not None and not self.pool.operators:
            raise ConfigError("pool.operators must list at least one operator")
        p = self.problem
        if p.n_interior < 1 or p.n_boundary < 1:
            raise ConfigError("problem.n_interior and problem.n_boundary must be positive")
        return self

    def to_dict(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["problem"]["lambda"] = rec["problem"].pop("lam")
        return rec

    def hash(self) -> str:
        """Digest of everything that influences the search trajectory."""
        rec = self.to_dict()
        for key in ("output_dir", "eval", "notes"):
            rec.pop(key, None)
        blob = json.dumps(rec, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def from_dict(cls, data: dict | None, path: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    # "lambda" is a keyword in Python
    data = {("lam" if k == "lambda" else k): v for k, v in data.items()}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        sub = _nested_type(cls, name)
        kwargs[name] = from_dict(sub, value, f"{path}.{name}" if path else name) if sub else value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "problem"): ProblemSpec, (RunConfig, "tree"): TreeSpec, (RunConfig, "pool"): PoolSpec,
    (RunConfig, "search"): SearchSpec, (RunConfig, "controller"): ControllerSpec, (RunConfig, "eval"): EvalSpec,
    (PoolSpec, "tn"): TnSpec, (TnSpec, "tune"): TuneSpec, (EvalSpec, "slice"): SliceSpec,
}


def _nested_type(cls, name):
    return _NESTED.get((cls, name))


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return data


def load_run_config(path, overrides: list[str] = ()) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(RunConfig, apply_overrides(data, list(overrides))).validate()


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
