"""Phase 1: behavioral cloning of the heuristic demonstrations, one expert at a time."""
import logging
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from .config import BCHyper, EnvConfig
from .demos import Demonstration
from .errors import EmptyDatasetError, NonFiniteLossError
from .experts import ExpertKind, PolicyNet, action_dim, action_scale, features, has_clamp
from .nn import Adam, bernoulli_logprob, bernoulli_logprob_grad, gaussian_logprob, gaussian_logprob_grads
from .sensors import observe

log = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """Network inputs and normalized expert actions for one expert kind."""
    kind: ExpertKind
    inputs: dict[str, np.ndarray]  # images kept as uint8, cast per minibatch
    actions: np.ndarray            # (N, A) in [-1, 1]
    clamp: np.ndarray              # (N,) 0/1

    def __len__(self) -> int:
        return len(self.actions)

    def batch(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {k: v[idx].astype(np.float64) for k, v in self.inputs.items()}


def build_samples(demos: list[Demonstration], kind: ExpertKind, env: EnvConfig,
                  max_samples: int | None = None, seed: int = 0) -> SampleSet:
    """Re-render observations for every step the given expert acted in (all steps for flat)."""
    kind = ExpertKind(kind)
    steps = [s for d in demos if d.success
             for s in (d.steps if kind == ExpertKind.FLAT else d.for_expert(kind))]
    if not steps:
        raise EmptyDatasetError(f"no demonstration steps for the {kind} expert")
    if max_samples and len(steps) > max_samples:
        keep = np.sort(np.random.default_rng(seed).choice(len(steps), size=max_samples, replace=False))
        steps = [steps[i] for i in keep]

    scale = action_scale(kind, env)
    adim = action_dim(kind)
    cols: dict[str, list] = {}
    actions = np.empty((len(steps), adim))
    clamp = np.empty(len(steps))
    for i, s in enumerate(steps):
        for name, x in features(kind, observe(s.state, env, s.goal), env).items():
            cols.setdefault(name, []).append(x.astype(np.uint8) if name == 'image' else x)
        a = s.action
        actions[i] = np.clip(np.array([a.v_cmd, a.omega_cmd, a.h_dot][:adim]) / scale, -1.0, 1.0)
        clamp[i] = float(a.clamp_trigger)
    inputs = {k: np.stack(v) for k, v in cols.items()}
    log.info("%s: %d BC samples (%d clamp triggers)", kind, len(steps), int(clamp.sum()))
    return SampleSet(kind, inputs, actions, clamp)


def nll_and_grads(net: PolicyNet, batch: dict[str, np.ndarray], actions: np.ndarray,
                  clamp: np.ndarray) -> tuple[float, np.ndarray, np.ndarray | None, np.ndarray]:
    """Mean negative log-likelihood of the expert actions and its output gradients."""
    n = len(actions)
    out = net.forward(batch)
    log_std = net.log_std.value
    logp = gaussian_logprob(out.mean, log_std, actions)
    g_mean, g_log_std = gaussian_logprob_grads(out.mean, log_std, actions)
    d_clamp = None
    if has_clamp(net.kind):
        logp = logp + bernoulli_logprob(out.clamp_logit, clamp)
        d_clamp = -bernoulli_logprob_grad(out.clamp_logit, clamp) / n
    return float(-np.mean(logp)), -g_mean / n, d_clamp, -g_log_std.sum(axis=0) / n


def bc_train(net: PolicyNet, demos: list[Demonstration] | SampleSet, h: BCHyper, seed: int = 0,
             progress: bool = False) -> tuple[PolicyNet, list[float]]:
    """Adam on minibatch NLL for exactly h.epochs epochs; returns per-epoch mean NLL."""
    samples = demos if isinstance(demos, SampleSet) else build_samples(demos, net.kind, net.env,
                                                                       h.max_samples, seed)
    if len(samples) == 0:
        raise EmptyDatasetError(f"empty BC dataset for the {net.kind} expert")
    rng = np.random.default_rng(seed)
    adam = Adam(net.parameters(), lr=h.lr)
    history = []
    for epoch in tqdm(range(h.epochs), desc=f'bc {net.kind}', disable=not progress):
        perm = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(samples), h.minibatch):
            idx = perm[start:start + h.minibatch]
            net.zero_grad()
            loss, d_mean, d_clamp, d_log_std = nll_and_grads(net, samples.batch(idx),
                                                             samples.actions[idx], samples.clamp[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"BC loss is {loss} at epoch {epoch}",
                                         {'epoch': epoch, 'expert': str(net.kind)})
            net.backward(d_mean, d_clamp, np.zeros(len(idx)))
            net.log_std.grad += d_log_std
            adam.step()
            total += loss * len(idx)
        history.append(total / len(samples))
        log.debug("bc %s epoch %d nll %.4f", net.kind, epoch, history[-1])
    log.info("bc %s: nll %.4f -> %.4f over %d epochs", net.kind, history[0], history[-1], h.epochs)
    return net, history
