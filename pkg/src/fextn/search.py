"""The search loop: sample sequences, score them, keep the top-K, fine-tune."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from .config import RunConfig, dump_config
from .expression import Expression, OperatorPool, build_skeleton, init_theta
from .optim import AdamConfig, BfgsConfig, adam_run, compute_score, score_from_loss
from .pools import resolve_pool
from .problems import LossFunction, make_problem, sample_points
from .transnet import TnOperator, save_operators

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class SearchError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class Candidate:
    e: tuple[int, ...]
    theta: np.ndarray
    score: float
    origin_iteration: int
    loss: float = float("nan")
    fine_loss: float | None = None

    def to_dict(self, names=None) -> dict:
        rec = {"e": list(self.e), "theta": [float(t) for t in self.theta], "score": self.score,
               "origin_iteration": self.origin_iteration, "loss": self.loss, "fine_loss": self.fine_loss}
        if names is not None:
            rec["names"] = names
        return rec

    @classmethod
    def from_dict(cls, rec: dict) -> "Candidate":
        return cls(tuple(rec["e"]), np.asarray(rec["theta"], dtype=float), rec["score"],
                   rec["origin_iteration"], rec["loss"], rec.get("fine_loss"))


@dataclass
class CandidatePool:
    capacity: int
    entries: list[Candidate] = field(default_factory=list)

    def insert(self, cand: Candidate) -> bool:
        """Top-K insertion; a repeated sequence keeps only its best score."""
        for i, old in enumerate(self.entries):
            if old.e == cand.e:
                if cand.score > old.score:
                    self.entries[i] = cand
                    self._sort()
                    return True
                return False
        if len(self.entries) < self.capacity:
            self.entries.append(cand)
            self._sort()
            return True
        if cand.score > self.entries[-1].score:
            self.entries[-1] = cand
            self._sort()
            return True
        return False

    def _sort(self):
        # stable: earlier entries win ties
        self.entries.sort(key=lambda c: -c.score)

    def scores(self) -> list[float]:
        return [c.score for c in self.entries]

    def __len__(self):
        return len(self.entries)


def pool_insert(pool: CandidatePool, cand: Candidate) -> bool:
    return pool.insert(cand)


@dataclass
class SearchResult:
    best: Candidate
    expression: Expression
    pool: list[Candidate]
    history: list[tuple[int, float, float]]
    run_dir: str | None = None


class Searcher:
    """Holds everything a run needs; :meth:`run` executes the loop."""

    def __init__(self, cfg: RunConfig, unary_ops=None):
        self.cfg = cfg.validate()
        pc = cfg.problem
        self.problem = make_problem(pc.name, d=pc.d, nu=pc.nu, mu=pc.mu, lam=pc.lam)
        self.samples = sample_points(self.problem, pc.n_interior, pc.n_boundary,
                                     np.random.default_rng(pc.seed))
        self.samples.seed = pc.seed
        if unary_ops is None:
            unary_ops = resolve_pool(cfg.pool, (self.problem.lo, self.problem.hi))
        self.pool_ops = OperatorPool(unary_ops, cfg.tree.binary)
        self.skel = build_skeleton(cfg.tree.depth, self.problem.dim)
        self.loss_fn = LossFunction(self.problem, self.samples)
        self.loss_fn.warm(self.pool_ops.unary)
        s = cfg.search
        self.t1 = AdamConfig(lr=s.lr1, steps=s.T1)
        self.t2 = BfgsConfig(step=s.bfgs_step, max_steps=s.T2)
        self.t3 = AdamConfig(lr=s.lr3, steps=s.T3, schedule="cosine", final_frac=s.lr3_final_frac)

    # -- randomness: every stream is derived from (master seed, purpose, counters)
    def _rng(self, *counters) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, *counters])

    def epsilon_at(self, t: int) -> float:
        c = self.cfg.controller
        T = self.cfg.search.T
        if c.epsilon_final is None or T <= 1:
            return c.epsilon
        return c.epsilon + (c.epsilon_final - c.epsilon) * (t - 1) / (T - 1)

    def new_controller(self) -> ctl.ControllerState:
        c = self.cfg.controller
        sizes = [self.pool_ops.choices(k) for k in self.skel.kinds]
        return ctl.ControllerState.uniform(sizes, lr=c.lr, epsilon=c.epsilon, nu_q=c.nu_q)

    def score(self, e, t: int, n: int) -> Candidate:
        ops = self.pool_ops.resolve(self.skel, e)
        best = None
        for r in range(self.cfg.search.restarts):
            theta0 = init_theta(self.skel, self._rng(2, t, n, r))
            res = compute_score(self.loss_fn, self.skel, ops, theta0, self.t1, self.t2)
            if best is None or res.score > best.score:
                best = res
        return Candidate(tuple(e), best.theta, best.score, t, best.loss)

    def _safe_score(self, args) -> Candidate:
        e, t, n = args
        try:
            return self.score(e, t, n)
        except Exception as exc:  # noqa: BLE001 - one bad candidate must not end the run
            log.warning("candidate %s at iteration %d failed: %s", e, t, exc)
            return Candidate(tuple(e), init_theta(self.skel, self._rng(2, t, n, 0)), 0.0, t, float("inf"))

    def fine_tune(self, cand: Candidate) -> Candidate:
        ops = self.pool_ops.resolve(self.skel, cand.e)
        res = adam_run(lambda th: self.loss_fn.value_and_grad(self.skel, ops, th), cand.theta, self.t3)
        return Candidate(cand.e, res.theta, cand.score, cand.origin_iteration, cand.loss, res.value)

    def expression(self, cand: Candidate) -> Expression:
        return Expression(self.skel, self.pool_ops.resolve(self.skel, cand.e), cand.theta)

    def names(self, e) -> list[str]:
        return self.pool_ops.names(self.skel, e)

    def run(self, run_dir: str | None = None, threads: int = 1, resume: bool = False,
            stop_after: int | None = None) -> SearchResult | None:
        """Run the loop.  ``stop_after`` halts after that iteration (used to
        simulate an interruption); the return value is then ``None``."""
        cfg = self.cfg
        s = cfg.search
        state = None
        if run_dir is not None:
            os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
            if resume:
                state = load_checkpoint(run_dir, cfg.hash())
            dump_config(cfg, os.path.join(run_dir, "config.json"))
            tn_ops = [op for op in self.pool_ops.unary if isinstance(op, TnOperator)]
            save_operators(tn_ops, os.path.join(run_dir, "operators.json"))
        if state is None:
            controller = self.new_controller()
            pool = CandidatePool(s.K)
            history: list[tuple[int, float, float]] = []
            log_rows: list[list] = []
            start = 1
        else:
            controller, pool, history, log_rows = state
            start = len(history) + 1
            log.info("resuming at iteration %d", start)

        executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        try:
            for t in range(start, s.T + 1):
                controller.epsilon = self.epsilon_at(t)
                rng = self._rng(1, t)
                seqs = [ctl.sample_sequence(controller, rng) for _ in range(s.N)]
                jobs = [(e, t, n) for n, e in enumerate(seqs)]
                if executor is None:
                    cands = [self._safe_score(j) for j in jobs]
                else:
                    cands = list(executor.map(self._safe_score, jobs))
                for c in cands:
                    pool.insert(c)
                    log_rows.append([t, "|".join(self.names(c.e)), repr(c.score), repr(c.loss)])
                scores = np.array([c.score for c in cands])
                controller = ctl.update(controller, ctl.ScoredBatch(seqs, scores))
                history.append((t, float(scores.max()), float(scores.mean())))
                log.info("iter %d: best %.6g mean %.6g pool-min %.6g", t, scores.max(), scores.mean(),
                         pool.entries[-1].score)
                if run_dir is not None and (t % s.checkpoint_every == 0 or t == s.T):
                    save_checkpoint(run_dir, cfg.hash(), t, controller, pool, history, log_rows)
                if stop_after is not None and t >= stop_after and t < s.T:
                    return None
        finally:
            if executor is not None:
                executor.shutdown()

        if not pool.entries:
            raise SearchError("search finished with an empty candidate pool (search.T must be positive)")
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                tuned = list(ex.map(self.fine_tune, pool.entries))
        else:
            tuned = [self.fine_tune(c) for c in pool.entries]
        best = min(tuned, key=lambda c: c.fine_loss)
        result = SearchResult(best, self.expression(best), tuned, history, run_dir)
        if run_dir is not None:
            self.write_outputs(run_dir, result, log_rows)
        return result

    def write_outputs(self, run_dir: str, result: SearchResult, log_rows) -> None:
        with open(os.path.join(run_dir, "history.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "best_score", "mean_score"])
            for t, b, m in result.history:
                w.writerow([t, repr(b), repr(m)])
        with open(os.path.join(run_dir, "candidates.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "e", "score", "loss"])
            w.writerows(log_rows)
        with open(os.path.join(run_dir, "pool.json"), "w") as fh:
            json.dump([c.to_dict(self.names(c.e)) for c in result.pool], fh, indent=2)
        rec = result.expression.to_dict()
        rec["loss"] = result.best.fine_loss
        rec["score"] = score_from_loss(result.best.fine_loss)
        rec["coarse_score"] = result.best.score
        with open(os.path.join(run_dir, "best_expression.json"), "w") as fh:
            json.dump(rec, fh, indent=2, ensure_ascii=False)


def run_search(cfg: RunConfig, run_dir: str | None = None, threads: int = 1, resume: bool = False,
               stop_after: int | None = None, unary_ops=None) -> SearchResult | None:
    return Searcher(cfg, unary_ops).run(run_dir, threads, resume, stop_after)


def _checksum(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_checkpoint(run_dir, config_hash, t, controller, pool, history, log_rows) -> str:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "iteration": t,
        "controller": controller.to_dict(),
        "pool": {"capacity": pool.capacity, "entries": [c.to_dict() for c in pool.entries]},
        "history": [list(h) for h in history],
        "log": log_rows,
    }
    rec = {"payload": payload, "checksum": _checksum(payload)}
    path = os.path.join(run_dir, "checkpoints", f"ckpt_{t:06d}.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(rec, fh)
    os.replace(tmp, path)
    with open(os.path.join(run_dir, "checkpoints", "latest"), "w") as fh:
        fh.write(os.path.basename(path))
    return path


def load_checkpoint(run_dir, config_hash):
    marker = os.path.join(run_dir, "checkpoints", "latest")
    if not os.path.exists(marker):
        raise CheckpointError(f"no checkpoint found in {run_dir}")
    with open(marker) as fh:
        path = os.path.join(run_dir, "checkpoints", fh.read().strip())
    try:
        with open(path) as fh:
            rec = json.load(fh)
        payload = rec["payload"]
        ok = rec["checksum"] == _checksum(payload)
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not ok:
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    if payload["config_hash"] != config_hash:
        raise CheckpointError("checkpoint was written for a different configuration; refusing to resume")
    controller = ctl.ControllerState.from_dict(payload["controller"])
    pool = CandidatePool(payload["pool"]["capacity"],
                         [Candidate.from_dict(c) for c in payload["pool"]["entries"]])
    history = [(int(t), float(b), float(m)) for t, b, m in payload["history"]]
    return controller, pool, history, payload["log"]
