"""
In-process invariant suite behind `forkrl selftest`. Each check raises
AssertionError on failure; the runner collects results instead of stopping.
"""
import heapq
import itertools
import logging
import math
import tempfile
import time
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import PPOHyper, Settings
from .errors import NoPathError, PlannerError, StepOnTerminalError
from .experts import HIERARCHICAL, PolicyNet, PolicyOutput
from .geometry import Pose2D
from .heuristics import SQRT2, OccupancyGrid, astar_plan, path_cost
from .nn import (Adam, Conv1d, Conv2d, Dense, Flatten, Parameter, Sequential, Tanh, bernoulli_logprob,
                 gaussian_logprob, grad_check, param_digest)
from .planner import PlannerPhase, PlannerStatus, SemanticState, active_expert, transition
from .plot_data import error_cdf
from .ppo import (MiniBatch, PPOBatch, ToyActorCritic, compute_gae, lr_schedule, ppo_loss, ppo_update,
                  reach_origin_benchmark, toy_benchmark_passed, toy_oracle_return)
from .rewards import RunningStats, d_target, normalize, place_reward_terms
from .sim import Action, reset, state_from_dict, state_to_dict, step

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ''
    seconds: float = 0.0


CHECKS: list[tuple[str, Callable[[Settings], None], bool]] = []


def check(name: str, slow: bool = False):
    def register(fn):
        CHECKS.append((name, fn, slow))
        return fn
    return register


def expect(condition: bool, message: str) -> None:
    if not condition:
        raise AssertionError(message)


def close(a: float, b: float, tol: float = 1e-6) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(b))


# ------------------------------- numerics ----------------------------------- #

@check('gaussian and bernoulli log-densities')
def _densities(_):
    zero = np.zeros((1, 1))
    expect(close(float(gaussian_logprob(zero, np.zeros(1), zero)[0]), -0.918938533), "N(0|0,1) log-density")
    expect(close(float(gaussian_logprob(zero, np.zeros(1), np.ones((1, 1)))[0]), -1.418938533),
           "N(1|0,1) log-density")
    expect(close(float(bernoulli_logprob(0.0, 1.0)), -0.693147181), "Bernoulli(logit 0) log-mass")


@check('adam first step moves by lr')
def _adam(_):
    p = Parameter(np.array([1.0]))
    p.grad[...] = 0.5
    Adam({'p': p}, lr=1e-3).step()
    expect(close(float(p.value[0]), 1.0 - 1e-3, 1e-6), f"adam first step gave {p.value[0]}")


@check('adam with lr 0 leaves parameters unchanged')
def _adam_frozen(_):
    p = Parameter(np.array([1.0, -2.0]))
    p.grad[...] = [0.3, -4.0]
    Adam({'p': p}, lr=0.0).step()
    expect(np.array_equal(p.value, [1.0, -2.0]), f"lr 0 moved parameters to {p.value}")


@check('analytic gradients match finite differences')
def _grads(_):
    rng = np.random.default_rng(0)
    nets = {
        'dense': (Sequential(Dense(5, 8, rng), Tanh(), Dense(8, 3, rng)), rng.normal(size=(4, 5))),
        'circular conv1d': (Sequential(Conv1d(1, 3, 5, 2, rng), Tanh(), Conv1d(3, 2, 3, 1, rng), Flatten()),
                            rng.normal(size=(2, 1, 24))),
        'conv2d': (Sequential(Conv2d(3, 4, 3, 2, rng), Tanh(), Conv2d(4, 2, 2, 1, rng), Flatten()),
                   rng.normal(size=(2, 3, 9, 9))),
    }
    for name, (net, x) in nets.items():
        err = grad_check(net, x)
        expect(err < 1e-5, f"{name} relative error {err:.2e}")


@check('gae matches the brute-force sum')
def _gae(_):
    adv, _ = compute_gae([1.0, 1.0], [0.0, 0.0], [0, 0], 0.0, 0.99, 1.0)
    expect(close(float(adv[0]), 1.99), f"gae [1,1] gave {adv[0]}")
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        r, v = rng.normal(size=n), rng.normal(size=n)
        boot, g, lam = float(rng.normal()), 0.99, 0.95
        adv, _ = compute_gae(r, v, np.zeros(n), boot, g, lam)
        vals = np.append(v, boot)
        delta = r + g * vals[1:] - vals[:-1]
        oracle = [sum((g * lam) ** l * delta[t + l] for l in range(n - t)) for t in range(n)]
        expect(np.allclose(adv, oracle, atol=1e-10), "gae disagrees with the double-loop oracle")


@check('ppo clipping and learning-rate schedule')
def _ppo_clip(_):
    h = PPOHyper()
    expect(close(lr_schedule(50, 100, 1e-4), 5e-5), "lr midpoint")
    expect(lr_schedule(100, 100, 1e-4) == 0.0, "lr at end")
    for ratio, adv, want in ((1.5, 1.0, -1.2), (0.5, -1.0, 0.8)):
        logp_old = float(gaussian_logprob(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))[0]) - math.log(ratio)
        out = PolicyOutput(np.zeros((1, 1)), None, np.zeros(1))
        mb = MiniBatch(np.zeros((1, 1)), None, np.array([logp_old]), np.array([adv]), np.zeros(1))
        _, diag, _ = ppo_loss(out, np.zeros(1), mb, h)
        expect(close(diag['policy_loss'], want), f"clipped surrogate r={ratio} A={adv} gave {diag['policy_loss']}")


@check('ppo update starts on-policy')
def _ppo_on_policy(_):
    rng = np.random.default_rng(0)
    net = ToyActorCritic(hidden=8, seed=1)
    x = rng.uniform(-1, 1, (64, 1))
    out = net.forward({'vector': x})
    raw = out.mean + np.exp(net.log_std.value) * rng.standard_normal(out.mean.shape)
    batch = PPOBatch({'vector': x}, raw, None, gaussian_logprob(out.mean, net.log_std.value, raw),
                     rng.normal(size=64), rng.normal(size=64))
    h = PPOHyper(batch=64, minibatch=16, epochs=3, n_env=1)
    diag = ppo_update(net, Adam(net.parameters(), lr=1e-3), batch, h, 1e-3, rng)
    expect(abs(diag['first_ratio_mean'] - 1.0) <= 1e-6, f"first minibatch ratio {diag['first_ratio_mean']}")
    expect(diag['first_clip_fraction'] == 0.0, f"first minibatch clip fraction {diag['first_clip_fraction']}")


@check('running reward normalization')
def _normalize(_):
    stats = RunningStats()
    for x in (1.0, 2.0, 3.0):
        stats = stats.update(x)
    expect(close(stats.mean, 2.0) and close(stats.variance, 1.0), "mean 2 and variance 1 over [1,2,3]")
    out, _ = normalize(RunningStats(), 5.0)
    expect(out == 5.0, "a single sample passes through unscaled")


# ------------------------------- rewards / geometry ------------------------- #

@check('reciprocal placement reward')
def _rewards(settings):
    cfg = settings.rewards
    expect(close(place_reward_terms(0.95, False, False, cfg), 1.0), "d=0.95")
    expect(close(place_reward_terms(0.05, False, False, cfg), 10.0), "d=0.05")
    expect(close(place_reward_terms(0.0, True, False, cfg), 70.0), "d=0 with placement bonus")
    expect(close(d_target(Pose2D(3, 4, 0), Pose2D(0, 0, 0), cfg), 5.0), "d_target of a (3,4) offset")


def dijkstra_cost(grid: OccupancyGrid, start, goal) -> float:
    """Uninformed shortest 8-connected cost with the same no-corner-cut rule as A*."""
    occ = grid.occupied
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, (x, y) = heapq.heappop(heap)
        if (x, y) == goal:
            return d
        if d > dist[(x, y)]:
            continue
        for sx in (-1, 0, 1):
            for sy in (-1, 0, 1):
                nb = (x + sx, y + sy)
                if (not sx and not sy) or not grid.is_free(nb):
                    continue
                if sx and sy and (occ[y, x + sx] or occ[y + sy, x]):
                    continue
                nd = d + (SQRT2 if sx and sy else 1.0)
                if nd < dist.get(nb, math.inf):
                    dist[nb] = nd
                    heapq.heappush(heap, (nd, nb))
    return math.inf


@check('a* finds the diagonal on an open grid')
def _astar(_):
    grid = OccupancyGrid(1.0, np.zeros((3, 3), dtype=bool))
    path = astar_plan(grid, (0, 0), (2, 2))
    expect(close(path_cost(path), 2 * math.sqrt(2)), f"path cost {path_cost(path)}")


@check('a* cost equals dijkstra on random grids')
def _astar_dijkstra(_):
    rng = np.random.default_rng(0)
    for i in range(100):
        occ = rng.random((15, 15)) < 0.25
        occ[0, 0] = occ[14, 14] = False
        grid = OccupancyGrid(1.0, occ)
        oracle = dijkstra_cost(grid, (0, 0), (14, 14))
        try:
            cost = path_cost(astar_plan(grid, (0, 0), (14, 14)))
        except NoPathError:
            cost = math.inf
        expect(cost == oracle or close(cost, oracle, 1e-9), f"grid {i}: a* {cost} vs dijkstra {oracle}")


@check('empirical cdf')
def _cdf(_):
    cdf = error_cdf([0.03, 0.01, 0.02])
    expect(np.allclose(cdf['error_m'], [0.01, 0.02, 0.03]), "sorted errors")
    expect(np.allclose(cdf['cumulative_fraction'], [1 / 3, 2 / 3, 1.0]), "cumulative fractions")


# ------------------------------- simulator / planner ------------------------ #

@check('reset is seed-deterministic and states round-trip')
def _reset(settings):
    a, b = reset(settings.env, 7), reset(settings.env, 7)
    expect(state_to_dict(a) == state_to_dict(b), "same seed, different worlds")
    expect(state_to_dict(state_from_dict(state_to_dict(a))) == state_to_dict(a), "state dict round-trip")


@check('zero action keeps the forklift still')
def _zero_action(settings):
    s0 = reset(settings.env, 3)
    s1, _ = step(s0, Action(), settings.env)
    expect(s1.forklift.pose == s0.forklift.pose, "pose moved under a zero command")
    expect(s1.t == s0.t + 1, "time did not advance by one tick")


@check('terminal states and absorbing phases refuse to advance')
def _absorbing(settings):
    for phase in (PlannerPhase.DONE, PlannerPhase.ABORT):
        try:
            transition(PlannerStatus(phase), SemanticState(), 3)
        except PlannerError:
            continue
        raise AssertionError(f"transition accepted absorbing phase {phase}")
    s = reset(settings.env, 0)
    s = replace(s, collided=True)
    try:
        step(s, Action(), settings.env)
    except StepOnTerminalError:
        return
    raise AssertionError("step accepted a terminal state")


@check('collision aborts every active phase')
def _collision_abort(_):
    for phase in (PlannerPhase.DEPARTURE, PlannerPhase.SEARCH_PICK, PlannerPhase.TRANSPORT, PlannerPhase.PLACEMENT):
        nxt, expert = transition(PlannerStatus(phase), SemanticState(collided=True), 3)
        expect(nxt.phase == PlannerPhase.ABORT and expert is None, f"{phase} did not abort on collision")


def all_predicates():
    """Every assignment of the semantic predicates."""
    names = [f.name for f in fields(SemanticState)]
    for bits in itertools.product((False, True), repeat=len(names)):
        yield SemanticState(**dict(zip(names, bits)))


@check('planner transitions are safe for every predicate assignment')
def _predicate_sweep(_):
    P = PlannerPhase
    order = {p: i for i, p in enumerate((P.DEPARTURE, P.SEARCH_PICK, P.TRANSPORT, P.PLACEMENT, P.DONE))}
    for phase in (P.DEPARTURE, P.SEARCH_PICK, P.TRANSPORT, P.PLACEMENT):
        for retries in (0, 2, 3):
            for s in all_predicates():
                nxt, expert = transition(PlannerStatus(phase, retries), s, 3)
                where = f"{phase} retries={retries} {s}"
                if nxt.phase == P.ABORT:
                    expect(expert is None, f"abort kept an expert: {where}")
                    continue
                expect(nxt.retry_count <= 3, f"retry budget exceeded: {where}")
                expect(order[nxt.phase] - order[phase] in (0, 1), f"skipped or reversed a phase: {where}")
                if phase == P.SEARCH_PICK and nxt.phase == P.TRANSPORT:
                    expect(s.cargo_clamped, f"transport without cargo: {where}")
                if nxt.phase == P.DONE:
                    expect(s.placed_ok and phase == P.PLACEMENT, f"done without placement: {where}")
                expect(expert == active_expert(nxt.phase), f"wrong expert: {where}")


# ------------------------------- experts / checkpoints ---------------------- #

@check('expert checkpoints round-trip exactly')
def _checkpoints(settings):
    with tempfile.TemporaryDirectory() as tmp:
        for i, kind in enumerate(HIERARCHICAL):
            net = PolicyNet(kind, settings.experts, settings.env, seed=i)
            path = save_checkpoint(f"{tmp}/{kind}.npz", net.parameters())
            other = PolicyNet(kind, settings.experts, settings.env, seed=i + 100)
            restore(other.parameters(), load_checkpoint(path)[0], str(path))
            expect(param_digest(net.parameters()) == param_digest(other.parameters()), f"{kind} round-trip")


@check('ppo reaches the toy oracle', slow=True)
def _toy(_):
    curve = reach_origin_benchmark(PPOHyper(), 100_000, seed=0)
    oracle = toy_oracle_return()
    expect(toy_benchmark_passed(curve, oracle), f"final {curve[-1][1]:.3f} vs oracle {oracle:.3f}")


def run_selftest(settings: Settings, include_slow: bool = False) -> list[CheckResult]:
    results = []
    for name, fn, slow in CHECKS:
        if slow and not include_slow:
            continue
        t0 = time.perf_counter()
        try:
            fn(settings)
            results.append(CheckResult(name, True, seconds=time.perf_counter() - t0))
        except Exception as e:
            log.debug("check %r failed", name, exc_info=True)
            results.append(CheckResult(name, False, f"{type(e).__name__}: {e}", time.perf_counter() - t0))
    return results
