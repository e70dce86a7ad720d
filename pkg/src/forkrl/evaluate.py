"""
Evaluation harness: seeded deterministic episodes per method, aggregate metrics
with bootstrap confidence intervals, and the paired multi-method comparison.
"""
import hashlib
import json
import logging
import pathlib
from dataclasses import dataclass, field
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
import pandas as pd
from scipy import stats
from tqdm import tqdm

from .checkpoint import load_checkpoint, read_manifest, restore
from .config import Settings
from .errors import MissingCheckpointError
from .experts import HIERARCHICAL, ExpertKind, PolicyNet
from .heuristics import HeuristicExperts
from .planner import EpisodeTrace, ExpertSet, run_episode, subtask_bounds
from .policies import ExpertPolicies
from .sim import state_to_dict

log = logging.getLogger(__name__)

FLOAT_FORMAT = '%.6f'


class Method(StrEnum):
    FLAT_BC = 'flat-bc'
    RULE_BASED = 'rule-based'
    HBC = 'hbc'
    HRL = 'hrl'
    SEQ_HYBRID = 'seq-hybrid'
    HMER = 'hmer'


@dataclass(frozen=True)
class MethodSpec:
    method: Method
    manifest: str | None = None
    subtask: str = 'full'

    @property
    def exec_mode(self) -> str:
        return 'fixed-sequence' if self.method == Method.SEQ_HYBRID else 'planner'

    @property
    def needs_checkpoint(self) -> bool:
        return self.method != Method.RULE_BASED

    def required_kinds(self) -> tuple[ExpertKind, ...]:
        if self.method == Method.FLAT_BC:
            return (ExpertKind.FLAT,)
        return {'full': HIERARCHICAL, 'pick': (ExpertKind.PICKING,),
                'place': (ExpertKind.PLACING,)}[self.subtask]


# ------------------------------- metrics ------------------------------------ #

@dataclass
class EvalMetrics:
    method: str
    n_episodes: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    aborted_rate: float
    mean_cycle_time: float | None
    mean_placement_error: float | None
    median_placement_error: float | None
    precision_rate: float | None  # successes at or under eval.precision_tol
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)
    seeds_hash: str = ''
    episodes: list[EpisodeTrace] = field(default_factory=list)

    def row(self) -> dict:
        r = {'method': self.method, 'n_episodes': self.n_episodes, 'success_rate': self.success_rate,
             'collision_rate': self.collision_rate, 'timeout_rate': self.timeout_rate,
             'aborted_rate': self.aborted_rate,
             'mean_cycle_time_s': self.mean_cycle_time, 'mean_placement_error_m': self.mean_placement_error,
             'median_placement_error_m': self.median_placement_error, 'precision_rate': self.precision_rate}
        for name, (lo, hi) in sorted(self.ci.items()):
            r[f'{name}_ci_low'], r[f'{name}_ci_high'] = lo, hi
        r['seeds_hash'] = self.seeds_hash
        return r

    def placement_errors(self) -> list[float]:
        return [tr.place_error for tr in self.episodes if tr.success and tr.place_error is not None]


def bootstrap_ci(data, n_resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """95% percentile bootstrap CI of the mean; degenerate samples collapse to the point value."""
    x = np.asarray(data, dtype=float)
    if len(x) == 0:
        return float('nan'), float('nan')
    if len(x) < 2 or np.all(x == x[0]):
        return float(x.mean()), float(x.mean())
    res = stats.bootstrap((x,), np.mean, confidence_level=0.95, n_resamples=n_resamples,
                          method='percentile', random_state=seed)
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


def _mean(xs) -> float | None:
    return float(np.mean(xs)) if len(xs) else None


def summarize(method: str, traces: list[EpisodeTrace], settings: Settings, seeds_hash: str = '',
              seed: int = 0) -> EvalMetrics:
    n = len(traces)
    success = np.array([tr.success for tr in traces], dtype=float)
    collision = np.array([tr.outcome == 'collision' for tr in traces], dtype=float)
    aborted = np.array([tr.outcome == 'aborted' for tr in traces], dtype=float)
    wins = [tr for tr in traces if tr.success]
    cycle = [tr.cycle_time for tr in wins]
    errors = [tr.place_error for tr in wins if tr.place_error is not None]
    resamples = settings.eval.bootstrap_resamples
    ci = {'success_rate': bootstrap_ci(success, resamples, seed),
          'collision_rate': bootstrap_ci(collision, resamples, seed)}
    if cycle:
        ci['mean_cycle_time_s'] = bootstrap_ci(cycle, resamples, seed)
    if errors:
        ci['mean_placement_error_m'] = bootstrap_ci(errors, resamples, seed)
    return EvalMetrics(
        method=method, n_episodes=n,
        success_rate=float(success.mean()), collision_rate=float(collision.mean()),
        timeout_rate=float(1.0 - success.mean() - collision.mean() - aborted.mean()),
        aborted_rate=float(aborted.mean()),
        mean_cycle_time=_mean(cycle), mean_placement_error=_mean(errors),
        median_placement_error=float(np.median(errors)) if errors else None,
        precision_rate=float(np.mean(np.asarray(errors) <= settings.eval.precision_tol)) if errors else None,
        ci=ci, seeds_hash=seeds_hash, episodes=traces,
    )


# ------------------------------- seeds / metadata --------------------------- #

def episode_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31, size=n)]


def seeds_digest(seeds: list[int]) -> str:
    return hashlib.sha1(','.join(map(str, seeds)).encode()).hexdigest()[:12]


def source_revision() -> str:
    """sha1 over the package sources, standing in for a VCS revision."""
    h = hashlib.sha1()
    for p in sorted(pathlib.Path(__file__).parent.glob('*.py')):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def write_run_metadata(out_path, settings: Settings, seeds: list[int], extra: dict | None = None) -> pathlib.Path:
    out = pathlib.Path(out_path)
    meta_path = out.with_name(out.stem + '.meta.json')
    body = {'config_hash': settings.digest, 'revision': source_revision(),
            'seeds': seeds, 'seeds_hash': seeds_digest(seeds), **(extra or {})}
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps(body, indent=2, sort_keys=True))
    return meta_path


# ------------------------------- method loading ----------------------------- #

def load_nets(manifest, settings: Settings, kinds=None) -> dict[ExpertKind, PolicyNet]:
    entries = read_manifest(manifest)
    wanted = [ExpertKind(k) for k in (kinds or entries)]
    missing = [str(k) for k in wanted if str(k) not in entries]
    if missing:
        raise MissingCheckpointError(f"manifest {manifest} has no checkpoint for {', '.join(missing)}")
    nets = {}
    for kind in wanted:
        path = entries[str(kind)]
        params, _, _ = load_checkpoint(path)
        net = PolicyNet(kind, settings.experts, settings.env)
        restore(net.parameters(), params, path)
        nets[kind] = net
    return nets


def build_expert_set(spec: MethodSpec, settings: Settings) -> ExpertSet:
    if not spec.needs_checkpoint:
        return HeuristicExperts(settings)
    if spec.manifest is None:
        raise MissingCheckpointError(f"method {spec.method} needs a checkpoint manifest (--checkpoint)")
    nets = load_nets(spec.manifest, settings, spec.required_kinds())
    return ExpertPolicies(nets, settings, flat=spec.method == Method.FLAT_BC)


# ------------------------------- evaluation --------------------------------- #

def run_seeds(experts: ExpertSet, settings: Settings, seeds: list[int], mode: str = 'planner',
              subtask: str = 'full', progress: bool = False, desc: str = 'eval',
              dump: list | None = None, dump_episodes: int = 1) -> list[EpisodeTrace]:
    start, stop = subtask_bounds(subtask)
    traces = []
    for i, s in enumerate(tqdm(seeds, desc=desc, disable=not progress)):
        on_step = None
        if dump is not None and i < dump_episodes:
            def on_step(state, _seed=s):
                dump.append({'seed': _seed, 'state': state_to_dict(state)})
        traces.append(run_episode(experts, settings, mode, s, start, stop, deterministic=True, on_step=on_step))
    return traces


def evaluate(spec: MethodSpec, settings: Settings, n_episodes: int, seed: int = 42,
             progress: bool = False, dump_trajectory=None) -> EvalMetrics:
    if n_episodes <= 0:
        raise ValueError(f"n_episodes must be positive, got {n_episodes}")
    experts = build_expert_set(spec, settings)
    seeds = episode_seeds(seed, n_episodes)
    dump = [] if dump_trajectory else None
    traces = run_seeds(experts, settings, seeds, spec.exec_mode, spec.subtask, progress,
                       desc=str(spec.method), dump=dump)
    if dump_trajectory:
        path = pathlib.Path(dump_trajectory)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w') as f:
            f.writelines(json.dumps(rec) + '\n' for rec in dump)
        log.info("wrote %d trajectory snapshots to %s", len(dump), path)
    m = summarize(str(spec.method), traces, settings, seeds_digest(seeds), seed)
    log.info("%s: success %.3f collision %.3f over %d episodes", spec.method, m.success_rate,
             m.collision_rate, n_episodes)
    return m


def ordering_checks(rows: dict[str, EvalMetrics]) -> dict:
    """Directional comparisons between methods present in one comparison run."""
    out = {}
    if Method.HBC in rows and Method.FLAT_BC in rows:
        gap = 100.0 * (rows[Method.HBC].success_rate - rows[Method.FLAT_BC].success_rate)
        out['hbc_minus_flat_bc_pp'] = gap
        out['decoupling_gap_ok'] = gap >= 20.0
    if Method.HMER in rows and Method.RULE_BASED in rows:
        a, b = rows[Method.HMER].mean_placement_error, rows[Method.RULE_BASED].mean_placement_error
        out['hmer_more_precise_than_rule_based'] = None if a is None or b is None else a < b
    if Method.HMER in rows and Method.SEQ_HYBRID in rows:
        out['hmer_beats_seq_hybrid'] = rows[Method.HMER].success_rate > rows[Method.SEQ_HYBRID].success_rate
    if Method.RULE_BASED in rows:
        out['rule_based_competent'] = rows[Method.RULE_BASED].success_rate >= 0.8
    return out


def compare(specs: list[MethodSpec], settings: Settings, n_episodes: int, seed: int = 42,
            out=None, progress: bool = False) -> pd.DataFrame:
    """One row per method, every method on the same seed list."""
    results = {str(s.method): evaluate(s, settings, n_episodes, seed, progress) for s in specs}
    df = pd.DataFrame([m.row() for m in results.values()])
    if out is not None:
        out = pathlib.Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        write_run_metadata(out, settings, episode_seeds(seed, n_episodes),
                           {'methods': list(results), 'ordering': ordering_checks(results)})
        log.info("wrote comparison of %d methods to %s", len(df), out)
    return df
