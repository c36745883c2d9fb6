"""Command-line entry point: ``fextn {tune-gamma,build-pool,solve,eval,slice}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, PoolSpec, RunConfig, TuneSpec, apply_overrides, from_dict, load_run_config
from .evaluation import mc_relative_l2, slice_grid, write_slice_csvs
from .expression import Expression
from .operators import BUILTINS
from .pools import NAMED_POOLS, build_tn_set, pool_contents, tn_tag, tuned_gamma
from .problems import make_problem
from .search import CheckpointError, SearchError, run_search
from .transnet import TARGETS, load_operators, save_operators

OUTPUT_ROOT_ENV = "FEXTN_OUTPUT_ROOT"

log = logging.getLogger("fextn")


def output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, rec):
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, ensure_ascii=False)


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _default_dir(args, cfg: RunConfig, kind: str) -> str:
    if getattr(args, "out", None):
        return args.out
    if cfg.output_dir:
        return cfg.output_dir
    stem = os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(output_root(), f"{stem}-{kind}-{cfg.hash()[:8]}")


def cmd_tune_gamma(args) -> int:
    data = apply_overrides(_read_json(args.config), args.overrides)
    for key in ("gamma_min", "gamma_max"):
        if key not in data:
            raise ConfigError(f"tune-gamma config is missing required key {key!r}")
    spec = from_dict(TuneSpec, data, "tune")
    if args.seed is not None:
        spec.seed = args.seed
    try:
        result = tuned_gamma(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = args.out or os.path.join(output_root(), "tune-gamma")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "gamma_curve.csv"), "w") as fh:
        fh.write(result.to_csv())
    rec = {"gamma_opt": result.gamma_opt, "config": vars(spec)}
    _write_json(os.path.join(out, "gamma_opt.json"), rec)
    print(f"gamma_opt={result.gamma_opt!r}")
    print(f"wrote {out}")
    return 0


def cmd_build_pool(args) -> int:
    cfg = _run_config(args)
    spec: PoolSpec = cfg.pool
    if args.pool is not None:
        spec.name, spec.operators = args.pool, None
    prob = make_problem(cfg.problem.name, d=1)
    names, domain = pool_contents(spec, (prob.lo, prob.hi))
    if spec.tn.domain is not None:
        domain = tuple(spec.tn.domain)
    tags = [tn_tag(n) for n in names if n not in BUILTINS]
    for tag in tags:
        if tag is None or tag not in TARGETS:
            raise ConfigError(f"cannot build operator for pool entry {tag!r}")
    ops, gamma = build_tn_set(tags, domain, spec.tn)
    out = args.out or _default_dir(args, cfg, "pool")
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "operators.json")
    save_operators(ops, path)
    _write_json(os.path.join(out, "pool.json"), {
        "pool": spec.name, "operators": names, "domain": list(domain), "gamma": gamma,
        "fit_sup_error": {op.name: op.fit_sup_error for op in ops},
    })
    print(f"pool: {', '.join(names)}")
    for op in ops:
        print(f"  {op.name:16s} fit_sup_error={op.fit_sup_error:.3e}")
    print(f"wrote {path}")
    return 0


def cmd_solve(args) -> int:
    cfg = _run_config(args)
    run_dir = args.run_dir or _default_dir(args, cfg, "solve")
    result = run_search(cfg, run_dir, threads=args.threads, resume=args.resume)
    print(f"best expression: {result.expression.render()}")
    print(f"operators: {' '.join(op.name for op in result.expression.ops)}")
    print(f"fine-tuned loss: {result.best.fine_loss!r}")
    print(f"run directory: {run_dir}")
    return 0


def load_run(run_dir: str):
    """Problem, stored config and best expression of a finished run."""
    cfg = from_dict(RunConfig, _read_json(os.path.join(run_dir, "config.json"))).validate()
    rec = _read_json(os.path.join(run_dir, "best_expression.json"))
    ops = dict(BUILTINS)
    op_path = os.path.join(run_dir, "operators.json")
    if os.path.exists(op_path):
        ops.update({op.name: op for op in load_operators(op_path)})
    p = cfg.problem
    problem = make_problem(p.name, d=p.d, nu=p.nu, mu=p.mu, lam=p.lam)
    return cfg, problem, Expression.from_dict(rec, ops)


def _eval_overrides(cfg: RunConfig, overrides) -> RunConfig:
    if not overrides:
        return cfg
    data = apply_overrides({"eval": cfg.to_dict()["eval"]}, overrides)
    unknown = set(data) - {"eval"}
    if unknown:
        raise ConfigError(f"only eval.* keys can be overridden here, got {sorted(unknown)}")
    cfg.eval = from_dict(type(cfg.eval), data["eval"], "eval")
    return cfg


def cmd_eval(args) -> int:
    cfg, problem, expr = load_run(args.run_dir)
    cfg = _eval_overrides(cfg, args.overrides)
    e = cfg.eval
    seed = args.seed if args.seed is not None else e.seed
    report = mc_relative_l2(problem, expr, e.n_points, e.repeats, seed)
    rec = {"problem": problem.metadata(), "expression": expr.render(), **report.to_dict()}
    path = os.path.join(args.run_dir, "eval_report.json")
    _write_json(path, rec)
    print(f"relative L2 error: {report.mean:.4e} +- {report.std:.4e} "
          f"({report.repeats} repeats x {report.points} points)")
    print(f"wrote {path}")
    return 0


def cmd_slice(args) -> int:
    cfg, problem, expr = load_run(args.run_dir)
    cfg = _eval_overrides(cfg, args.overrides)
    s = cfg.eval.slice
    try:
        grid = slice_grid(expr, problem, s.dims, s.fixed_values, s.resolution, s.relative)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = args.out or args.run_dir
    paths = write_slice_csvs(grid, out)
    print(f"max {'relative' if s.relative else 'absolute'} error on slice {tuple(s.dims)}: "
          f"{float(np.max(grid.error)):.4e}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fextn", description="Expression search for high-dimensional PDEs "
                                 "with TransNet-fitted unary operators.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="JSON config file")
        p.add_argument("overrides", nargs="*", help="key=value overrides (values parsed as JSON)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")

    p = sub.add_parser("tune-gamma", help="grid-search the shared TransNet shape parameter")
    common(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_tune_gamma)

    p = sub.add_parser("build-pool", help="fit and serialise the TN operators of a pool")
    common(p)
    p.add_argument("--pool", choices=sorted(NAMED_POOLS), help="named pool (overrides pool.name)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("solve", help="run the search and fine-tune the best candidates")
    common(p)
    p.add_argument("--run-dir", help="run directory (default: $%s/<config>-solve-<hash>)" % OUTPUT_ROOT_ENV)
    p.add_argument("--threads", type=int, default=1, help="worker threads for candidate scoring")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.set_defaults(func=cmd_solve)

    for name, func, hlp in (("eval", cmd_eval, "Monte Carlo relative L2 error of a finished run"),
                            ("slice", cmd_slice, "export a 2-D slice of reference, prediction and error")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("run_dir", help="directory written by `solve`")
        common(p, config=False)
        if name == "slice":
            p.add_argument("--out", help="output directory (default: the run directory)")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    # key=value overrides may follow option flags
    stray = [x for x in extra if x.startswith("-") or "=" not in x]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    if extra:
        args.overrides = list(args.overrides) + extra
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, SearchError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
