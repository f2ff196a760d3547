"""Posterior samplers over trees.

* :func:`run_mcmc` -- a single Metropolis-Hastings chain.  With
  ``likelihood_mode="partitioned"`` every tree evaluation is split across
  ``hp.workers`` data shards (the data-partitioned variant, DP).
* :func:`run_sumd` -- a population of ``hp.workers`` trees.  Each round every
  particle moves to a proposal, is weighted by the Metropolis-Hastings ratio
  of that move, and the population is multinomially resampled.
"""

from __future__ import annotations

import logging
import math
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import model
from .core import Dataset, DegenerateDatasetError, Hyperparams, Leaf, Split, Tree
from .moves import Proposal, propose
from .runtime import WorkerPool, resolve_workers, rng_stream

log = logging.getLogger(__name__)

Evaluator = Callable[[Tree], "tuple[Tree, float]"]


class CollapsedParticlesError(RuntimeError):
    """Every particle weight is zero."""


@dataclass(frozen=True)
class ChainState:
    current: Tree
    current_log_joint: float
    iteration: int = 0
    accepted_count: int = 0


@dataclass
class ParticleSet:
    particles: list
    log_weights: np.ndarray
    normalized: bool = False
    log_joints: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.particles)


@dataclass
class PosteriorSample:
    """Trees retained after burn-in, tagged with the iteration (MCMC) or
    round (SUMD) that produced them."""

    trees: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    log_joints: list = field(default_factory=list)
    method: str = "mcmc"
    steps: int = 0
    accepted: int = 0

    def __len__(self):
        return len(self.trees)

    def append(self, tree: Tree, iteration: int, log_joint: float):
        self.trees.append(tree)
        self.iterations.append(iteration)
        self.log_joints.append(log_joint)


def initial_tree(data: Dataset, hp: Hyperparams, rng: Optional[np.random.Generator] = None) -> Tree:
    """The single-leaf tree, or with ``hp.init_depth > 0`` a random tree in which
    each leaf above that depth is split with probability 1/2."""
    if hp.init_depth == 0 or not data.splittable:
        return Tree()
    limit = hp.init_depth if hp.max_depth is None else min(hp.init_depth, hp.max_depth)

    def grow(depth):
        if depth >= limit or (depth > 0 and rng.random() < 0.5):
            return Leaf()
        k = data.splittable[int(rng.integers(len(data.splittable)))]
        c = float(data.candidates[k][int(rng.integers(len(data.candidates[k])))])
        return Split(k, c, grow(depth + 1), grow(depth + 1))

    return Tree(grow(0))


def sequential_evaluator(data: Dataset, hp: Hyperparams) -> Evaluator:
    return lambda tree: model.evaluate(tree, data, hp)


def partitioned_evaluator(data: Dataset, hp: Hyperparams, part: model.Partition,
                          pool: Optional[WorkerPool] = None) -> Evaluator:
    return lambda tree: model.evaluate_partitioned(tree, data, hp, part, pool)


def _score(current_log_joint: float, prop: Proposal, evaluate: Evaluator):
    fitted, new_joint = evaluate(prop.new_tree)
    if new_joint == -math.inf:
        return -math.inf, fitted, new_joint
    log_alpha = (new_joint - current_log_joint) + (prop.log_q_rev - prop.log_q_fwd)
    if math.isnan(log_alpha):
        log_alpha = -math.inf
    return log_alpha, fitted, new_joint


def acceptance_log_ratio(state: ChainState, prop: Proposal, data: Dataset, hp: Hyperparams) -> float:
    """Metropolis-Hastings log ratio: log posterior ratio plus log q_rev - log q_fwd."""
    return _score(state.current_log_joint, prop, sequential_evaluator(data, hp))[0]


def mcmc_step(state: ChainState, data: Dataset, hp: Hyperparams, rng: np.random.Generator,
              evaluate: Optional[Evaluator] = None) -> ChainState:
    if evaluate is None:
        evaluate = sequential_evaluator(data, hp)
    prop = propose(state.current, data, rng, hp.max_depth)
    log_alpha, fitted, new_joint = _score(state.current_log_joint, prop, evaluate)
    u = rng.random()
    log_u = math.log(u) if u > 0 else -math.inf
    accept = log_alpha > -math.inf and log_u <= log_alpha
    if accept:
        return ChainState(fitted, new_joint, state.iteration + 1, state.accepted_count + 1)
    return replace(state, iteration=state.iteration + 1)


def run_mcmc(data: Dataset, hp: Hyperparams, likelihood_mode: str = "sequential",
             pool_workers: Optional[int] = None) -> PosteriorSample:
    """Run ``hp.iterations`` MH steps and keep every tree after ``hp.burn_in``.

    ``pool_workers`` bounds the processes used by partitioned mode; by default
    it is resolved from the environment and capped at the shard count.
    """
    if likelihood_mode not in ("sequential", "partitioned"):
        raise ValueError(f"unknown likelihood mode {likelihood_mode!r}")
    if not data.splittable:
        raise DegenerateDatasetError("every feature is constant; no split threshold exists")
    rng = rng_stream(hp.seed, "mcmc")
    tree0 = initial_tree(data, hp, rng_stream(hp.seed, "init"))
    method = "mcmc"
    if likelihood_mode == "partitioned":
        method = "dp"
        part = model.Partition.even(data.n_rows, hp.workers)
        pool = WorkerPool(resolve_workers(cap=hp.workers, requested=pool_workers), context=data)
    else:
        pool = None
    out = PosteriorSample(method=method)
    with pool if pool is not None else nullcontext():
        evaluate = (partitioned_evaluator(data, hp, part, pool) if pool is not None
                    else sequential_evaluator(data, hp))
        fitted, joint = evaluate(tree0)
        state = ChainState(fitted, joint)
        for i in range(hp.iterations):
            state = mcmc_step(state, data, hp, rng, evaluate)
            if i >= hp.burn_in:
                out.append(state.current, i, state.current_log_joint)
    out.steps = hp.iterations
    out.accepted = state.accepted_count
    return out


# --------------------------------------------------------------------------
# SUMD


def normalize_weights(log_weights) -> np.ndarray:
    """Shift log-weights so that their exponentials sum to one."""
    w = np.asarray(log_weights, dtype=np.float64)
    if w.size == 0 or not np.any(w > -np.inf):
        raise CollapsedParticlesError("all particle weights are zero")
    if np.any(np.isnan(w)) or np.any(w == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    return w - logsumexp(w)


def multinomial_resample(particles: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Draw C indices i.i.d. from the weights; the survivors get weight 1/C."""
    if not particles.normalized:
        raise ValueError("particle weights must be normalized before resampling")
    c = len(particles)
    p = np.exp(particles.log_weights)
    counts = rng.multinomial(c, p / p.sum())
    idx = np.repeat(np.arange(c), counts)
    joints = None if particles.log_joints is None else particles.log_joints[idx]
    return ParticleSet([particles.particles[i] for i in idx],
                       np.full(c, -math.log(c)), True, joints)


def _advance_particle(context, item):
    data, hp = context
    tree, joint, index, round_ = item
    rng = rng_stream(hp.seed, "sumd", index, round_)
    prop = propose(tree, data, rng, hp.max_depth)
    log_alpha, fitted, new_joint = _score(joint, prop, sequential_evaluator(data, hp))
    if hp.sumd_weight == "capped":
        log_alpha = min(0.0, log_alpha)
    return fitted, new_joint, log_alpha


def sumd_schedule(hp: Hyperparams) -> tuple[int, int]:
    """``(rounds, burn-in rounds)`` for a run with ``hp.workers`` particles."""
    rounds = hp.iterations // hp.workers
    burn = rounds // 2 if hp.sumd_burn_in is None else hp.sumd_burn_in
    return rounds, burn


def run_sumd(data: Dataset, hp: Hyperparams, pool_workers: Optional[int] = None) -> PosteriorSample:
    """Population sampler with ``C = hp.workers`` particles.

    Runs ``hp.iterations // C`` rounds and keeps all ``C`` resampled trees
    from every round at or after the burn-in round.
    """
    c = hp.workers
    rounds, burn = sumd_schedule(hp)
    if rounds < 1:
        raise ValueError(f"iterations ({hp.iterations}) must be at least the particle count ({c})")
    if not data.splittable:
        raise DegenerateDatasetError("every feature is constant; no split threshold exists")
    evaluate = sequential_evaluator(data, hp)
    start = [evaluate(initial_tree(data, hp, rng_stream(hp.seed, "init", i))) for i in range(c)]
    ps = ParticleSet([t for t, _ in start], np.full(c, -math.log(c)), True,
                     np.array([j for _, j in start]))
    out = PosteriorSample(method="sumd")
    workers = resolve_workers(cap=c, requested=pool_workers)
    with WorkerPool(workers, context=(data, hp)) as pool:
        for r in range(rounds):
            items = [(t, j, i, r) for i, (t, j) in enumerate(zip(ps.particles, ps.log_joints))]
            moved = pool.map(_advance_particle, items)
            log_w = normalize_weights([w for _, _, w in moved])
            ps = ParticleSet([t for t, _, _ in moved], log_w, True,
                             np.array([j for _, j, _ in moved]))
            ps = multinomial_resample(ps, rng_stream(hp.seed, "resample", 0, r))
            if r >= burn:
                for t, j in zip(ps.particles, ps.log_joints):
                    out.append(t, r, float(j))
    out.steps = rounds
    return out


def run(data: Dataset, hp: Hyperparams, method: str, pool_workers: Optional[int] = None) -> PosteriorSample:
    """Dispatch on ``method`` in ``{"mcmc", "sumd", "dp"}``."""
    if method == "mcmc":
        return run_mcmc(data, hp, "sequential")
    if method == "dp":
        return run_mcmc(data, hp, "partitioned", pool_workers)
    if method == "sumd":
        return run_sumd(data, hp, pool_workers)
    raise ValueError(f"unknown method {method!r}")
