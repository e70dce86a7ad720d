"""
Phase 2: PPO with GAE.

The loss is written out by hand together with its gradients with respect to the
network outputs (action mean, clamp logit, value) and log_std; the network then
backpropagates those through its own layers.

    L = policy_coef * (-E[min(r A, clip(r, 1-eps, 1+eps) A)] - c2 * H) + c1 * E[(V - R)^2]
"""
import logging
from dataclasses import dataclass

import numpy as np

from .config import PPOHyper
from .errors import NonFiniteLossError, ShapeMismatchError
from .experts import PolicyOutput
from .nn import (Adam, Dense, Parameter, Sequential, Tanh, bernoulli_entropy, bernoulli_entropy_grad,
                 bernoulli_logprob, bernoulli_logprob_grad, clip_grad_norm, gaussian_entropy,
                 gaussian_logprob, gaussian_logprob_grads)

log = logging.getLogger(__name__)


def compute_gae(rewards, values, dones, bootstrap_value: float, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """(advantages, returns); a done at t cuts both the bootstrap and the trace."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not len(rewards) == len(values) == len(dones):
        raise ShapeMismatchError(f"gae: lengths differ ({len(rewards)}, {len(values)}, {len(dones)})")
    adv = np.zeros_like(rewards)
    last = 0.0
    next_value = bootstrap_value
    for t in reversed(range(len(rewards))):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def lr_schedule(step: int, total: int, lr0: float) -> float:
    if total <= 0:
        return lr0
    if not 0 <= step <= total:
        raise ValueError(f"lr_schedule: step {step} outside [0, {total}]")
    return lr0 * (1.0 - step / total)


# ------------------------------- loss --------------------------------------- #

@dataclass
class MiniBatch:
    raw: np.ndarray            # (B, A) pre-clipping normalized samples
    clamp: np.ndarray | None   # (B,) 0/1
    logp_old: np.ndarray       # (B,)
    advantages: np.ndarray     # (B,) already standardized
    returns: np.ndarray        # (B,)


@dataclass
class LossGrads:
    d_mean: np.ndarray
    d_clamp: np.ndarray | None
    d_value: np.ndarray
    d_log_std: np.ndarray


def ppo_loss(out: PolicyOutput, log_std: np.ndarray, mb: MiniBatch, h: PPOHyper) -> tuple[float, dict, LossGrads]:
    n = len(mb.advantages)
    logp = gaussian_logprob(out.mean, log_std, mb.raw)
    entropy = gaussian_entropy(log_std)
    with_clamp = out.clamp_logit is not None and mb.clamp is not None
    if with_clamp:
        logp = logp + bernoulli_logprob(out.clamp_logit, mb.clamp)
        entropy += float(np.mean(bernoulli_entropy(out.clamp_logit)))

    ratio = np.exp(logp - mb.logp_old)
    adv = mb.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - h.clip_eps, 1.0 + h.clip_eps) * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    value_err = out.value - mb.returns
    value_loss = float(np.mean(value_err ** 2))
    loss = h.policy_coef * (policy_loss - h.entropy_coef * entropy) + h.value_coef * value_loss

    diag = {
        'loss': loss, 'policy_loss': policy_loss, 'value_loss': value_loss, 'entropy': entropy,
        'clip_fraction': float(np.mean(np.abs(ratio - 1.0) > h.clip_eps)),
        'approx_kl': float(np.mean(mb.logp_old - logp)),
        'ratio_mean': float(np.mean(ratio)),
    }
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"PPO loss is {loss}", diag)

    # only the unclipped branch of the min carries gradient
    active = (surr1 <= surr2).astype(float)
    g_logp = -h.policy_coef * adv * ratio * active / n
    g_mean, g_log_std = gaussian_logprob_grads(out.mean, log_std, mb.raw)
    d_mean = g_logp[:, None] * g_mean
    d_log_std = (g_logp[:, None] * g_log_std).sum(axis=0) - h.policy_coef * h.entropy_coef
    d_clamp = None
    if with_clamp:
        d_clamp = (g_logp * bernoulli_logprob_grad(out.clamp_logit, mb.clamp)
                   - h.policy_coef * h.entropy_coef * bernoulli_entropy_grad(out.clamp_logit) / n)
    d_value = h.value_coef * 2.0 * value_err / n
    return loss, diag, LossGrads(d_mean, d_clamp, d_value, d_log_std)


# ------------------------------- update ------------------------------------- #

@dataclass
class PPOBatch:
    """A finished on-policy batch for one expert."""
    inputs: dict[str, np.ndarray]
    raw: np.ndarray
    clamp: np.ndarray | None
    logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.logp)


def ppo_update(net, adam: Adam, batch: PPOBatch, h: PPOHyper, lr: float,
               rng: np.random.Generator) -> dict:
    """h.epochs passes of shuffled minibatches; returns diagnostics averaged over minibatches
    plus the ratio / clip fraction seen by the very first minibatch."""
    n = len(batch)
    adv = standardize(batch.advantages)
    params = net.parameters()
    totals: dict[str, float] = {}
    count = 0
    first = None
    for _ in range(h.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, h.minibatch):
            idx = perm[start:start + h.minibatch]
            net.zero_grad()
            out = net.forward({k: v[idx].astype(np.float64) for k, v in batch.inputs.items()})
            mb = MiniBatch(batch.raw[idx], None if batch.clamp is None else batch.clamp[idx],
                           batch.logp[idx], adv[idx], batch.returns[idx])
            _, diag, g = ppo_loss(out, net.log_std.value, mb, h)
            net.backward(g.d_mean, g.d_clamp, g.d_value)
            net.log_std.grad += g.d_log_std
            diag['grad_norm'] = clip_grad_norm(params, h.max_grad_norm)
            adam.step(lr)
            if first is None:
                first = {'first_ratio_mean': diag['ratio_mean'], 'first_clip_fraction': diag['clip_fraction']}
            for k, v in diag.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    out = {k: v / max(count, 1) for k, v in totals.items()}
    out.update(first or {})
    return out


# ------------------------------- sanity benchmark --------------------------- #

class ToyActorCritic:
    """Minimal actor-critic with the PolicyNet training interface, for the 1-D reach task."""

    def __init__(self, hidden: int = 32, seed: int = 0, init_log_std: float = -0.5):
        rng = np.random.default_rng(seed)
        self.kind = 'toy'
        self.actor = Sequential(Dense(1, hidden, rng), Tanh(), Dense(hidden, hidden, rng), Tanh())
        self.mu = Dense(hidden, 1, rng)
        self.mu_act = Tanh()
        self.critic = Sequential(Dense(1, hidden, rng), Tanh(), Dense(hidden, hidden, rng), Tanh(), Dense(hidden, 1, rng))
        self.log_std = Parameter(np.full(1, init_log_std))

    def forward(self, batch: dict[str, np.ndarray]) -> PolicyOutput:
        x = batch['vector']
        mean = self.mu_act.forward(self.mu.forward(self.actor.forward(x)))
        return PolicyOutput(mean, None, self.critic.forward(x)[:, 0])

    def backward(self, d_mean, d_clamp, d_value) -> None:
        self.actor.backward(self.mu.backward(self.mu_act.backward(d_mean)))
        self.critic.backward(d_value[:, None])

    def parameters(self) -> dict[str, Parameter]:
        out = {f"actor.{k}": p for k, p in self.actor.parameters().items()}
        out.update({f"mu.{k}": p for k, p in self.mu.parameters().items()})
        out.update({f"critic.{k}": p for k, p in self.critic.parameters().items()})
        out['log_std'] = self.log_std
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


TOY_HORIZON = 20
TOY_GAIN = 0.2


def _toy_step(x: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.clip(x + TOY_GAIN * np.clip(a, -1.0, 1.0), -2.0, 2.0)
    return x, 1.0 - np.abs(x)


def toy_oracle_return(n: int = 256, seed: int = 0) -> float:
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, n)
    total = np.zeros(n)
    for _ in range(TOY_HORIZON):
        x, r = _toy_step(x, -x / TOY_GAIN)
        total += r
    return float(total.mean())


def reach_origin_benchmark(h: PPOHyper, total_steps: int, seed: int = 0) -> list[tuple[int, float]]:
    """
    PPO on x' = x + 0.2 a, reward 1 - |x'|, 20-step episodes from x0 ~ U(-1, 1),
    with n_env parallel copies. Returns (steps, mean episode return) per iteration.
    """
    rng = np.random.default_rng(seed)
    net = ToyActorCritic(seed=seed)
    adam = Adam(net.parameters(), lr=h.lr)
    n_env, horizon = h.n_env, max(h.batch // h.n_env, 1)
    x = rng.uniform(-1.0, 1.0, n_env)
    t_ep = np.zeros(n_env, dtype=int)
    ep_return = np.zeros(n_env)
    curve, finished, steps = [], [], 0
    while steps < total_steps:
        obs, raws, logps, vals, rews, dones = [], [], [], [], [], []
        for _ in range(horizon):
            out = net.forward({'vector': x[:, None]})
            raw = out.mean + np.exp(net.log_std.value) * rng.standard_normal(out.mean.shape)
            obs.append(x.copy())
            raws.append(raw)
            logps.append(gaussian_logprob(out.mean, net.log_std.value, raw))
            vals.append(out.value)
            x, r = _toy_step(x, raw[:, 0])
            t_ep += 1
            ep_return += r
            done = t_ep >= TOY_HORIZON
            rews.append(r)
            dones.append(done.astype(float))
            for i in np.nonzero(done)[0]:
                finished.append(ep_return[i])
                x[i], t_ep[i], ep_return[i] = rng.uniform(-1.0, 1.0), 0, 0.0
        boot = net.forward({'vector': x[:, None]}).value
        adv = np.empty((horizon, n_env))
        ret = np.empty((horizon, n_env))
        for e in range(n_env):
            adv[:, e], ret[:, e] = compute_gae([r[e] for r in rews], [v[e] for v in vals],
                                               [d[e] for d in dones], boot[e], h.gamma, h.gae_lambda)
        steps += horizon * n_env
        batch = PPOBatch({'vector': np.concatenate(obs)[:, None]}, np.concatenate(raws), None,
                         np.concatenate(logps), adv.reshape(-1), ret.reshape(-1))
        ppo_update(net, adam, batch, h, lr_schedule(min(steps, total_steps), total_steps, h.lr), rng)
        if finished:
            curve.append((steps, float(np.mean(finished[-4 * n_env:]))))
    return curve


def moving_average(values: list[float], window: int = 5) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode='valid')


def toy_benchmark_passed(curve: list[tuple[int, float]], oracle: float, fraction: float = 0.9) -> bool:
    """Smoothed returns end at least `fraction` of the oracle and never fall by more than 5% of it."""
    if not curve:
        return False
    smooth = moving_average([r for _, r in curve])
    drops = np.diff(smooth)
    return bool(smooth[-1] >= fraction * oracle and (len(drops) == 0 or drops.min() > -0.05 * abs(oracle)))
