"""Named operator pools and construction of the unary operator list."""

from __future__ import annotations

import logging
import os
import zlib

import numpy as np

from .config import ConfigError, PoolSpec, TuneSpec
from .operators import BUILTINS
from .transnet import GammaTuneConfig, TnOperator, build_tn_operator, load_operators, tune_gamma

log = logging.getLogger(__name__)

_BASE = ["0", "1", "Id"]
_P1 = _BASE + ["TN[x^2]", "TN[x^3]", "TN[x^4]", "TN[exp]", "TN[sin]", "TN[cos]"]

NAMED_POOLS: dict[str, tuple[list[str], tuple[float, float]]] = {
    "poisson-P1": (_P1, (-1.0, 1.0)),
    "poisson-P2": (_BASE + ["TN[sin(x^2)]", "TN[x^3]", "TN[x^4]", "TN[exp]", "TN[sin]", "TN[cos]"], (-1.0, 1.0)),
    "reactdiff-P1": (_P1, (0.0, 1.0)),
    "reactdiff-P2": (_BASE + ["TN[x^2]", "TN[x*sin(x)]", "TN[x^4]", "TN[exp]", "TN[sin]", "TN[cos]"], (0.0, 1.0)),
    "semilinear": (_P1, (-1.0, 1.0)),
    "desk": (_BASE + ["TN[x^2]", "TN[sin]"], (-1.0, 1.0)),
}


def tn_tag(name: str) -> str | None:
    if name.startswith("TN[") and name.endswith("]"):
        return name[3:-1]
    return None


def tuned_gamma(spec: TuneSpec):
    cfg = GammaTuneConfig(M=spec.M, dim=1, corr_len=spec.corr_len, realizations=spec.realizations,
                          samples=spec.samples, gamma_min=spec.gamma_min, gamma_max=spec.gamma_max,
                          grid_size=spec.grid_size)
    return tune_gamma(cfg, np.random.default_rng(spec.seed))


def build_tn_set(tags, domain, spec) -> tuple[list[TnOperator], float]:
    """Fit one TN operator per tag with a shared (possibly tuned) shape parameter."""
    gamma = spec.gamma
    if gamma is None:
        gamma = tuned_gamma(spec.tune).gamma_opt
        log.info("tuned shape parameter gamma=%.4g", gamma)
    ops = []
    for tag in tags:
        # per-tag stream so adding an operator does not perturb the others
        rng = np.random.default_rng([spec.seed, zlib.crc32(tag.encode())])
        op = build_tn_operator(tag, domain, spec.M, gamma, spec.J, rng)
        log.info("built %s: sup error %.3g on [%g, %g]", op.name, op.fit_sup_error, *domain)
        ops.append(op)
    return ops, float(gamma)


def pool_contents(spec: PoolSpec, default_domain=(-1.0, 1.0)) -> tuple[list[str], tuple]:
    """Operator names and TN fit domain implied by a pool section."""
    if spec.name is not None:
        if spec.name not in NAMED_POOLS:
            raise ConfigError(f"pool.name: unknown pool {spec.name!r}; known: {sorted(NAMED_POOLS)}")
        names, domain = NAMED_POOLS[spec.name]
        return list(names), domain
    if spec.operators is None:
        return list(NAMED_POOLS["desk"][0]), tuple(default_domain)
    return list(spec.operators), tuple(default_domain)


def resolve_pool(spec: PoolSpec, default_domain) -> list:
    """Unary operator objects, in pool order; missing TN operators are fitted."""
    names, default_domain = pool_contents(spec, default_domain)
    available: dict[str, object] = {}
    if spec.file is not None:
        if not os.path.exists(spec.file):
            raise ConfigError(f"pool file not found: {spec.file}")
        for op in load_operators(spec.file):
            available[op.name] = op
    missing = []
    for name in names:
        if name in BUILTINS or name in available:
            continue
        if tn_tag(name) is None:
            raise ConfigError(f"pool.operators: unknown operator {name!r}")
        missing.append(tn_tag(name))
    if missing:
        domain = tuple(spec.tn.domain) if spec.tn.domain is not None else tuple(default_domain)
        built, _ = build_tn_set(missing, domain, spec.tn)
        available.update({op.name: op for op in built})
    return [BUILTINS[n] if n in BUILTINS else available[n] for n in names]
