import hashlib
import json
import math
import os
import pathlib
from dataclasses import dataclass, field, replace

import yaml
from dotenv import load_dotenv

from .errors import ConfigError

ENV_VAR = "FORKRL_CONFIG"


def load_config(path: str | None = None) -> dict:
    load_dotenv()
    cfg_path = pathlib.Path(path or os.environ.get(ENV_VAR) or 'config.yaml')
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    with cfg_path.open('r') as f:
        return yaml.safe_load(f)


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canon.encode()).hexdigest()[:12]


def _pair(v, name: str) -> tuple[float, float]:
    lo, hi = (float(x) for x in v)
    if lo > hi:
        raise ConfigError(f"{name}: inverted range [{lo}, {hi}]")
    return lo, hi


def _pose(v, name: str) -> tuple[float, float, float]:
    if len(v) != 3:
        raise ConfigError(f"{name}: expected [x, y, theta]")
    return tuple(float(x) for x in v)


# ------------------------------- env ---------------------------------------- #

DEFAULT_RACKS = (
    (5.0, 6.5, 13.0, 7.5),
    (3.0, 12.0, 7.5, 13.0),
    (12.5, 12.0, 17.0, 13.0),
    (8.8, 15.2, 9.3, 17.0),
    (10.7, 15.2, 11.2, 17.0),
    (8.8, 17.0, 11.2, 17.3),
)


@dataclass(frozen=True)
class ForkliftSpec:
    length: float = 1.2
    width: float = 0.8
    fork_reach: float = 1.1
    v_max: float = 1.0
    omega_max: float = 1.0
    h_dot_max: float = 0.2
    h_max: float = 1.0


@dataclass(frozen=True)
class ClampSpec:
    d_clamp: float = 0.15
    theta_clamp: float = 0.15
    h_band: float = 0.05


@dataclass(frozen=True)
class SensorSpec:
    n_scan: int = 360
    r_max: float = 10.0
    image_size: int = 32
    image_window: float = 8.0


@dataclass(frozen=True)
class ObstacleSpec:
    count: int = 2
    radius: float = 0.3
    speed: tuple[float, float] = (0.1, 0.4)
    region: tuple[float, float, float, float] = (1.0, 17.8, 19.0, 19.6)


@dataclass(frozen=True)
class RandomizationSpec:
    cargo_mass: tuple[float, float] = (200.0, 800.0)
    friction: tuple[float, float] = (0.4, 0.9)
    start_jitter: tuple[float, float] = (0.3, 0.3)
    cargo_jitter: tuple[float, float] = (0.3, 0.15)


@dataclass(frozen=True)
class EnvConfig:
    arena: tuple[float, float] = (20.0, 20.0)
    walls: bool = True
    dt: float = 0.1
    t_max: int = 2000
    racks: tuple[tuple[float, float, float, float], ...] = DEFAULT_RACKS
    start_zone: tuple[float, float, float] = (2.0, 2.0, 0.0)
    cargo_spawn: tuple[float, float, float] = (15.5, 4.0, 0.0)
    pick_offset: float = 1.5
    goal_slot: tuple[float, float, float] = (10.0, 15.5, math.pi / 2)
    approach_offset: float = 2.0
    zone_tol: float = 0.5
    place_tol: float = 0.08
    forklift: ForkliftSpec = field(default_factory=ForkliftSpec)
    cargo_size: float = 0.6
    pick_height: float = 0.1
    slot_height: float = 0.4
    clamp: ClampSpec = field(default_factory=ClampSpec)
    sensors: SensorSpec = field(default_factory=SensorSpec)
    obstacles: ObstacleSpec = field(default_factory=ObstacleSpec)
    randomization: RandomizationSpec = field(default_factory=RandomizationSpec)
    nominal_mass: float = 400.0
    nominal_friction: float = 0.6
    clamp_fault_prob: float = 0.0
    d_norm: float = 20.0
    w_ang: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        fk = d.get('forklift', {})
        cl = d.get('clamp', {})
        se = d.get('sensors', {})
        ob = d.get('obstacles', {})
        rnd = d.get('randomization', {})
        racks = []
        for i, r in enumerate(d.get('racks', DEFAULT_RACKS)):
            xmin, ymin, xmax, ymax = (float(x) for x in r)
            if xmin >= xmax or ymin >= ymax:
                raise ConfigError(f"env.racks[{i}]: empty rectangle {r}")
            racks.append((xmin, ymin, xmax, ymax))
        region = tuple(float(x) for x in ob.get('region', ObstacleSpec.region))
        if region[0] > region[2] or region[1] > region[3]:
            raise ConfigError(f"env.obstacles.region: inverted {region}")
        cfg = cls(
            arena=tuple(float(x) for x in d.get('arena', (20.0, 20.0))),
            walls=bool(d.get('walls', True)),
            dt=float(d.get('dt', 0.1)),
            t_max=int(d.get('t_max', 2000)),
            racks=tuple(racks),
            start_zone=_pose(d.get('start_zone', cls.start_zone), 'env.start_zone'),
            cargo_spawn=_pose(d.get('cargo_spawn', cls.cargo_spawn), 'env.cargo_spawn'),
            pick_offset=float(d.get('pick_offset', 1.5)),
            goal_slot=_pose(d.get('goal_slot', cls.goal_slot), 'env.goal_slot'),
            approach_offset=float(d.get('approach_offset', 2.0)),
            zone_tol=float(d.get('zone_tol', 0.5)),
            place_tol=float(d.get('place_tol', 0.08)),
            forklift=ForkliftSpec(**{k: float(v) for k, v in fk.items()}),
            cargo_size=float(d.get('cargo', {}).get('size', 0.6)),
            pick_height=float(d.get('cargo', {}).get('pick_height', 0.1)),
            slot_height=float(d.get('slot_height', 0.4)),
            clamp=ClampSpec(**{k: float(v) for k, v in cl.items()}),
            sensors=SensorSpec(
                n_scan=int(se.get('n_scan', 360)),
                r_max=float(se.get('r_max', 10.0)),
                image_size=int(se.get('image_size', 32)),
                image_window=float(se.get('image_window', 8.0)),
            ),
            obstacles=ObstacleSpec(
                count=int(ob.get('count', 2)),
                radius=float(ob.get('radius', 0.3)),
                speed=_pair(ob.get('speed', (0.1, 0.4)), 'env.obstacles.speed'),
                region=region,
            ),
            randomization=RandomizationSpec(
                cargo_mass=_pair(rnd.get('cargo_mass', (200.0, 800.0)), 'env.randomization.cargo_mass'),
                friction=_pair(rnd.get('friction', (0.4, 0.9)), 'env.randomization.friction'),
                start_jitter=tuple(float(x) for x in rnd.get('start_jitter', (0.3, 0.3))),
                cargo_jitter=tuple(float(x) for x in rnd.get('cargo_jitter', (0.3, 0.15))),
            ),
            nominal_mass=float(d.get('nominal_mass', 400.0)),
            nominal_friction=float(d.get('nominal_friction', 0.6)),
            clamp_fault_prob=float(d.get('clamp_fault_prob', 0.0)),
            d_norm=float(d.get('d_norm', 20.0)),
            w_ang=float(d.get('w_ang', 0.5)),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("env.dt must be positive")
        if self.t_max < 1:
            raise ConfigError("env.t_max must be >= 1")
        if any(j < 0 for j in self.randomization.start_jitter + self.randomization.cargo_jitter):
            raise ConfigError("env.randomization: jitter half-widths must be >= 0")
        for name, (lo, hi) in (('cargo_mass', self.randomization.cargo_mass),
                               ('friction', self.randomization.friction),
                               ('obstacles.speed', self.obstacles.speed)):
            if lo > hi:
                raise ConfigError(f"env.{name}: inverted range [{lo}, {hi}]")
        if not 0.0 <= self.clamp_fault_prob <= 1.0:
            raise ConfigError("env.clamp_fault_prob must lie in [0, 1]")
        if self.sensors.n_scan < 1 or self.sensors.image_size < 1:
            raise ConfigError("env.sensors: n_scan and image_size must be positive")


# ------------------------------- rewards / planner --------------------------- #

@dataclass(frozen=True)
class RewardConfig:
    lambda_prec: float = 1.0
    eps_stab: float = 0.05
    r_success: float = 50.0
    w_ang: float = 0.5
    w_prog: float = 10.0
    w_smooth: float = 0.1
    w_coll: float = 100.0
    w_time: float = 0.01
    w_dist: float = 1.0
    w_align: float = 0.5
    pick_bonus: float = 50.0
    pick_fail_penalty: float = 5.0
    norm_mode: str = 'variance'
    norm_clip: float = 10.0

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        kw = {k: (v if k == 'norm_mode' else float(v)) for k, v in d.items()}
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.eps_stab <= 0 or self.lambda_prec <= 0:
            raise ConfigError("rewards: eps_stab and lambda_prec must be positive")
        weights = [v for k, v in self.__dict__.items() if k != 'norm_mode']
        if not all(math.isfinite(w) for w in weights):
            raise ConfigError("rewards: all weights must be finite")
        if self.norm_mode not in ('variance', 'mean_variance'):
            raise ConfigError(f"rewards.norm_mode: unknown mode {self.norm_mode!r}")


@dataclass(frozen=True)
class PlannerConfig:
    max_retries: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        n = int(d.get('max_retries', 3))
        if n < 0:
            raise ConfigError("planner.max_retries must be >= 0")
        return cls(max_retries=n)


@dataclass(frozen=True)
class HeuristicGains:
    grid_resolution: float = 0.1
    inflation: float = 1.2
    loaded_inflation: float = 2.0
    lookahead: float = 0.8
    servo_lookahead: float = 0.4
    k_omega: float = 2.0
    k_v: float = 1.0
    k_theta: float = 2.0
    k_h: float = 1.0
    servo_v_max: float = 0.5
    clamp_margin: float = 0.7
    release_tol: float = 0.05

    @classmethod
    def from_dict(cls, d: dict) -> "HeuristicGains":
        return cls(**{k: float(v) for k, v in d.items()})


# ------------------------------- networks / training ------------------------- #

@dataclass(frozen=True)
class ConvSpec:
    channels: tuple[int, ...]
    kernels: tuple[int, ...]
    strides: tuple[int, ...]

    @classmethod
    def from_dict(cls, d: dict, default: "ConvSpec") -> "ConvSpec":
        spec = cls(
            channels=tuple(int(x) for x in d.get('conv_channels', default.channels)),
            kernels=tuple(int(x) for x in d.get('conv_kernels', default.kernels)),
            strides=tuple(int(x) for x in d.get('conv_strides', default.strides)),
        )
        if not len(spec.channels) == len(spec.kernels) == len(spec.strides):
            raise ConfigError("conv spec: channels, kernels and strides must align")
        return spec


NAV_CONV = ConvSpec((16, 32, 32), (8, 4, 3), (4, 2, 1))
PICK_CONV = ConvSpec((32, 64, 64), (4, 3, 3), (2, 2, 1))
NATURE_CONV = ConvSpec((32, 64, 64), (8, 4, 3), (4, 2, 1))


@dataclass(frozen=True)
class ExpertArch:
    hidden: tuple[int, ...] = (256, 256)
    nav: ConvSpec = NAV_CONV
    pick: ConvSpec = PICK_CONV
    place_encoder: tuple[int, ...] = (256, 256)
    init_log_std: float = -0.5
    clamp_bias: float = -2.0

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertArch":
        return cls(
            hidden=tuple(int(x) for x in d.get('hidden', (256, 256))),
            nav=ConvSpec.from_dict(d.get('nav', {}), NAV_CONV),
            pick=ConvSpec.from_dict(d.get('pick', {}), PICK_CONV),
            place_encoder=tuple(int(x) for x in d.get('place', {}).get('encoder', (256, 256))),
            init_log_std=float(d.get('init_log_std', -0.5)),
            clamp_bias=float(d.get('clamp_bias', -2.0)),
        )


@dataclass(frozen=True)
class BCHyper:
    lr: float = 1e-3
    epochs: int = 50
    minibatch: int = 256
    max_samples: int = 50000

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("bc.epochs must be >= 1")
        if self.minibatch < 1:
            raise ConfigError("bc.minibatch must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BCHyper":
        return cls(lr=float(d.get('lr', 1e-3)), epochs=int(d.get('epochs', 50)),
                   minibatch=int(d.get('minibatch', 256)),
                   max_samples=int(d.get('max_samples', 50000)))


@dataclass(frozen=True)
class PPOHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    policy_coef: float = 1.0
    batch: int = 2048
    minibatch: int = 256
    epochs: int = 10
    lr: float = 1e-4
    n_env: int = 8
    total_steps: int = 500_000
    max_grad_norm: float = 0.5
    eval_interval: int = 10
    eval_episodes: int = 20

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("ppo.gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("ppo.gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("ppo.clip_eps must be positive")
        if self.n_env < 1 or self.batch < self.n_env:
            raise ConfigError("ppo: need n_env >= 1 and batch >= n_env")

    @property
    def steps_per_env(self) -> int:
        return self.batch // self.n_env

    @classmethod
    def from_dict(cls, d: dict) -> "PPOHyper":
        ints = {'batch', 'minibatch', 'epochs', 'n_env', 'total_steps', 'eval_interval', 'eval_episodes'}
        return cls(**{k: (int(v) if k in ints else float(v)) for k, v in d.items()})


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 200
    precision_tol: float = 0.02
    bootstrap_resamples: int = 1000
    demo_episodes: int = 2000
    reference_demo_episodes: int = 10000

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        return cls(
            episodes=int(d.get('episodes', 200)),
            precision_tol=float(d.get('precision_tol', 0.02)),
            bootstrap_resamples=int(d.get('bootstrap_resamples', 1000)),
            demo_episodes=int(d.get('demo_episodes', 2000)),
            reference_demo_episodes=int(d.get('reference_demo_episodes', 10000)),
        )


# ------------------------------- bundle -------------------------------------- #

@dataclass(frozen=True)
class Settings:
    env: EnvConfig = field(default_factory=EnvConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    heuristics: HeuristicGains = field(default_factory=HeuristicGains)
    experts: ExpertArch = field(default_factory=ExpertArch)
    bc: BCHyper = field(default_factory=BCHyper)
    ppo: PPOHyper = field(default_factory=PPOHyper)
    eval: EvalConfig = field(default_factory=EvalConfig)
    digest: str = ''

    @classmethod
    def from_dict(cls, cfg: dict) -> "Settings":
        rewards = RewardConfig.from_dict(cfg.get('rewards', {}))
        # placement success is judged with the same angular weight as the reward
        env = replace(EnvConfig.from_dict(cfg.get('env', {})), w_ang=rewards.w_ang)
        return cls(
            env=env,
            rewards=rewards,
            planner=PlannerConfig.from_dict(cfg.get('planner', {})),
            heuristics=HeuristicGains.from_dict(cfg.get('heuristics', {})),
            experts=ExpertArch.from_dict(cfg.get('experts', {})),
            bc=BCHyper.from_dict(cfg.get('bc', {})),
            ppo=PPOHyper.from_dict(cfg.get('ppo', {})),
            eval=EvalConfig.from_dict(cfg.get('eval', {})),
            digest=config_hash(cfg),
        )


def load_settings(path: str | None = None) -> Settings:
    return Settings.from_dict(load_config(path))
