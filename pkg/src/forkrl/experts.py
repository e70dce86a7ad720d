"""
Modality-decoupled actor-critic experts.

Each expert owns its whole network; nothing is shared between experts.

  kind        streams read              action dims           clamp head
  navigation  lidar + nav vector        (v, omega)            no
  picking     image + fork height       (v, omega, h_dot)     yes
  placing     pose-error vector (MLP)   (v, omega, h_dot)     yes
  flat        lidar + image + vector    (v, omega, h_dot)     yes

Actions live in a normalized space: the mean head ends in tanh, samples are
drawn there and scaled by the actuator bounds only for execution.
"""
import logging
import math
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str.__str__(self)

        def __format__(self, format_spec: str) -> str:
            return str.__format__(str(self), format_spec)

import numpy as np

from .config import ConvSpec, EnvConfig, ExpertArch
from .errors import NonFiniteInputError, ShapeMismatchError
from .nn import (Conv1d, Conv2d, Dense, Flatten, Module, Parameter, Sequential, Tanh,
                 bernoulli_logprob, gaussian_logprob, sigmoid)
from .sensors import EgoState, LidarScan, Observation, PoseError, SemanticImage
from .sim import Action

log = logging.getLogger(__name__)


class ExpertKind(StrEnum):
    NAVIGATION = 'navigation'
    PICKING = 'picking'
    PLACING = 'placing'
    FLAT = 'flat'


HIERARCHICAL = (ExpertKind.NAVIGATION, ExpertKind.PICKING, ExpertKind.PLACING)

STREAMS = {
    ExpertKind.NAVIGATION: ('lidar', 'vector'),
    ExpertKind.PICKING: ('image', 'vector'),
    ExpertKind.PLACING: ('vector',),
    ExpertKind.FLAT: ('lidar', 'image', 'vector'),
}

VECTOR_DIM = {ExpertKind.NAVIGATION: 4, ExpertKind.PICKING: 1,
              ExpertKind.PLACING: 4, ExpertKind.FLAT: 5}


def action_dim(kind: ExpertKind) -> int:
    return 2 if kind == ExpertKind.NAVIGATION else 3


def has_clamp(kind: ExpertKind) -> bool:
    return kind != ExpertKind.NAVIGATION


def action_scale(kind: ExpertKind, cfg: EnvConfig) -> np.ndarray:
    fk = cfg.forklift
    scale = [fk.v_max, fk.omega_max, fk.h_dot_max]
    return np.array(scale[:action_dim(kind)])


# ------------------------------- features ----------------------------------- #

def _ego_vector(ego: EgoState, cfg: EnvConfig) -> list[float]:
    fk = cfg.forklift
    return [ego.goal_dist / cfg.d_norm, ego.goal_bearing / math.pi, ego.v / fk.v_max, ego.omega / fk.omega_max]


def vector_features(kind: ExpertKind, ego: EgoState, err: PoseError, cfg: EnvConfig) -> np.ndarray:
    h = ego.h / cfg.forklift.h_max
    if kind == ExpertKind.NAVIGATION:
        v = _ego_vector(ego, cfg)
    elif kind == ExpertKind.PICKING:
        v = [h]
    elif kind == ExpertKind.PLACING:
        v = [err.dx, err.dy, err.dtheta, err.h]
    else:
        v = _ego_vector(ego, cfg) + [h]
    out = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteInputError(f"{kind} expert received non-finite input {out}")
    return out


def features(kind: ExpertKind, obs: Observation, cfg: EnvConfig) -> dict[str, np.ndarray]:
    """Unbatched network inputs for one observation; only this expert's streams."""
    out = {'vector': vector_features(kind, obs.ego, obs.pose_error, cfg)}
    if 'lidar' in STREAMS[kind]:
        out['lidar'] = (obs.lidar.ranges / cfg.sensors.r_max)[None, :]
    if 'image' in STREAMS[kind]:
        out['image'] = obs.image.pixels
    return out


def stack_features(items: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    return {k: np.stack([it[k] for it in items]) for k in items[0]}


# ------------------------------- network ------------------------------------ #

def _conv_stack(spec: ConvSpec, c_in: int, rng, two_d: bool) -> Sequential:
    layers: list[Module] = []
    for c_out, k, s in zip(spec.channels, spec.kernels, spec.strides):
        layers.append(Conv2d(c_in, c_out, k, s, rng) if two_d else Conv1d(c_in, c_out, k, s, rng))
        layers.append(Tanh())
        c_in = c_out
    layers.append(Flatten())
    return Sequential(*layers)


def _mlp(sizes: list[int], rng, final_tanh: bool = True) -> Sequential:
    layers: list[Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, rng))
        if final_tanh or i < len(sizes) - 2:
            layers.append(Tanh())
    return Sequential(*layers)


@dataclass
class PolicyOutput:
    mean: np.ndarray                # (B, A) normalized
    clamp_logit: np.ndarray | None  # (B,)
    value: np.ndarray               # (B,)


class PolicyNet:
    def __init__(self, kind: ExpertKind, arch: ExpertArch, env: EnvConfig, seed: int = 0):
        self.kind = ExpertKind(kind)
        self.arch = arch
        self.env = env
        rng = np.random.default_rng(seed)
        self.encoders: dict[str, Sequential] = {}
        if 'lidar' in STREAMS[self.kind]:
            self.encoders['lidar'] = _conv_stack(arch.nav, 1, rng, two_d=False)
        if 'image' in STREAMS[self.kind]:
            self.encoders['image'] = _conv_stack(arch.pick, 3, rng, two_d=True)
        if self.kind == ExpertKind.PLACING:
            self.encoders['vector'] = _mlp([VECTOR_DIM[self.kind], *arch.place_encoder], rng)
        self.feature_dim = self._infer_feature_dim()

        hidden = list(arch.hidden)
        self.adim = action_dim(self.kind)
        self.actor = _mlp([self.feature_dim, *hidden], rng)
        self.mu = Dense(hidden[-1], self.adim, rng)
        self.mu_act = Tanh()
        self.clamp = Dense(hidden[-1], 1, rng) if has_clamp(self.kind) else None
        if self.clamp is not None:
            self.clamp.b.value[...] = arch.clamp_bias
        self.critic = _mlp([self.feature_dim, *hidden, 1], rng, final_tanh=False)
        self.log_std = Parameter(np.full(self.adim, arch.init_log_std))
        self._splits: list[tuple[str, int]] = []

    # ---- shapes

    def input_shapes(self) -> dict[str, tuple]:
        s = self.env.sensors
        shapes = {'vector': (VECTOR_DIM[self.kind],)}
        if 'lidar' in STREAMS[self.kind]:
            shapes['lidar'] = (1, s.n_scan)
        if 'image' in STREAMS[self.kind]:
            shapes['image'] = (3, s.image_size, s.image_size)
        return shapes

    def _infer_feature_dim(self) -> int:
        dummy = {k: np.zeros((1, *shape)) for k, shape in self.input_shapes().items()}
        return self._encode(dummy).shape[1]

    # ---- forward / backward

    def _encode(self, batch: dict[str, np.ndarray]) -> np.ndarray:
        parts, self._splits = [], []
        for name in STREAMS[self.kind]:
            if name not in batch:
                raise ShapeMismatchError(f"{self.kind} expert needs input stream {name!r}")
            x = batch[name]
            want = self.input_shapes()[name]
            if x.shape[1:] != want:
                raise ShapeMismatchError(f"{self.kind}/{name}: expected (B, {want}), got {x.shape}")
            y = self.encoders[name].forward(x) if name in self.encoders else x
            parts.append(y)
            self._splits.append((name, y.shape[1]))
        return np.concatenate(parts, axis=1)

    def forward(self, batch: dict[str, np.ndarray]) -> PolicyOutput:
        feat = self._encode(batch)
        h = self.actor.forward(feat)
        mean = self.mu_act.forward(self.mu.forward(h))
        logit = self.clamp.forward(h)[:, 0] if self.clamp is not None else None
        value = self.critic.forward(feat)[:, 0]
        return PolicyOutput(mean, logit, value)

    def backward(self, d_mean: np.ndarray, d_clamp: np.ndarray | None, d_value: np.ndarray) -> None:
        """Accumulate parameter grads for the loss gradients w.r.t. the last forward's outputs."""
        dh = self.mu.backward(self.mu_act.backward(d_mean))
        if self.clamp is not None and d_clamp is not None:
            dh = dh + self.clamp.backward(d_clamp[:, None])
        dfeat = self.actor.backward(dh) + self.critic.backward(d_value[:, None])
        start = 0
        for name, width in self._splits:
            g = dfeat[:, start:start + width]
            if name in self.encoders:
                self.encoders[name].backward(g)
            start += width

    # ---- parameters

    def parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, enc in self.encoders.items():
            out.update({f"enc.{name}.{k}": p for k, p in enc.parameters().items()})
        out.update({f"actor.{k}": p for k, p in self.actor.parameters().items()})
        out.update({f"mu.{k}": p for k, p in self.mu.parameters().items()})
        if self.clamp is not None:
            out.update({f"clamp.{k}": p for k, p in self.clamp.parameters().items()})
        out.update({f"critic.{k}": p for k, p in self.critic.parameters().items()})
        out['log_std'] = self.log_std
        return out

    def actor_parameter_names(self) -> list[str]:
        return [n for n in self.parameters() if n.startswith(('actor.', 'mu.', 'clamp.', 'log_std'))]

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


# ------------------------------- single-observation entry points ----------- #

def _one(x: np.ndarray) -> np.ndarray:
    return x[None, ...]


def nav_forward(net: PolicyNet, scan: LidarScan, ego: EgoState) -> tuple[np.ndarray, float]:
    cfg = net.env
    if scan.ranges.shape != (cfg.sensors.n_scan,):
        raise ShapeMismatchError(f"scan length {scan.ranges.shape} != {cfg.sensors.n_scan}")
    vec = vector_features(ExpertKind.NAVIGATION, ego, PoseError(0, 0, 0, ego.h), cfg)
    out = net.forward({'lidar': _one((scan.ranges / cfg.sensors.r_max)[None, :]), 'vector': _one(vec)})
    return out.mean[0], float(out.value[0])


def pick_forward(net: PolicyNet, img: SemanticImage, ego: EgoState) -> tuple[np.ndarray, float, float]:
    vec = vector_features(ExpertKind.PICKING, ego, PoseError(0, 0, 0, ego.h), net.env)
    out = net.forward({'image': _one(img.pixels), 'vector': _one(vec)})
    return out.mean[0], float(out.clamp_logit[0]), float(out.value[0])


def place_forward(net: PolicyNet, err: PoseError) -> tuple[np.ndarray, float, float]:
    vec = err.as_array()
    if not np.all(np.isfinite(vec)):
        raise NonFiniteInputError(f"pose error must be finite, got {vec}")
    out = net.forward({'vector': _one(vec)})
    return out.mean[0], float(out.clamp_logit[0]), float(out.value[0])


def flat_forward(net: PolicyNet, scan: LidarScan, img: SemanticImage, ego: EgoState) -> tuple[np.ndarray, float, float]:
    cfg = net.env
    vec = vector_features(ExpertKind.FLAT, ego, PoseError(0, 0, 0, ego.h), cfg)
    out = net.forward({'lidar': _one((scan.ranges / cfg.sensors.r_max)[None, :]),
                       'image': _one(img.pixels), 'vector': _one(vec)})
    return out.mean[0], float(out.clamp_logit[0]), float(out.value[0])


# ------------------------------- sampling ----------------------------------- #

def to_action(kind: ExpertKind, raw: np.ndarray, clamp: bool, cfg: EnvConfig) -> Action:
    """Normalized continuous sample -> executable Action (clipped to the bounds)."""
    u = np.clip(raw, -1.0, 1.0) * action_scale(kind, cfg)
    h_dot = float(u[2]) if len(u) > 2 else 0.0
    return Action(float(u[0]), float(u[1]), h_dot, bool(clamp) and has_clamp(kind))


def sample_action(mean: np.ndarray, log_std: np.ndarray, clamp_logit: float | None,
                  rng: np.random.Generator, kind: ExpertKind, cfg: EnvConfig) -> tuple[Action, float, np.ndarray, bool]:
    """Returns (action, joint log-prob, raw normalized sample, clamp outcome); log-prob is pre-clipping."""
    raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    logp = float(gaussian_logprob(mean, log_std, raw))
    clamp = False
    if clamp_logit is not None:
        clamp = bool(rng.random() < float(sigmoid(np.float64(clamp_logit))))
        logp += float(bernoulli_logprob(clamp_logit, clamp))
    return to_action(kind, raw, clamp, cfg), logp, raw, clamp


def mean_action(mean: np.ndarray, clamp_logit: float | None, kind: ExpertKind, cfg: EnvConfig) -> Action:
    return to_action(kind, mean, clamp_logit is not None and clamp_logit > 0.0, cfg)


@dataclass
class Decision:
    action: Action
    raw: np.ndarray
    clamp: bool
    logp: float
    value: float


class NeuralPolicy:
    """A PolicyNet bound to the env config, acting on Observation bundles."""

    def __init__(self, net: PolicyNet):
        self.net = net
        self.kind = net.kind

    def decide_batch(self, observations: list[Observation], rng: np.random.Generator | None,
                     deterministic: bool = False) -> list[Decision]:
        cfg = self.net.env
        batch = stack_features([features(self.kind, o, cfg) for o in observations])
        out = self.net.forward(batch)
        log_std = self.net.log_std.value
        decisions = []
        for i in range(len(observations)):
            logit = None if out.clamp_logit is None else float(out.clamp_logit[i])
            if deterministic:
                act = mean_action(out.mean[i], logit, self.kind, cfg)
                clamp = act.clamp_trigger
                raw = out.mean[i].copy()
                logp = float(gaussian_logprob(out.mean[i], log_std, raw))
                if logit is not None:
                    logp += float(bernoulli_logprob(logit, clamp))
            else:
                act, logp, raw, clamp = sample_action(out.mean[i], log_std, logit, rng, self.kind, cfg)
            decisions.append(Decision(act, raw, clamp, logp, float(out.value[i])))
        return decisions

    def act(self, obs: Observation, rng: np.random.Generator | None = None, deterministic: bool = True) -> Action:
        return self.decide_batch([obs], rng, deterministic)[0].action
