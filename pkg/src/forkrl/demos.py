"""
Demonstration datasets: successful heuristic episodes recorded step by step.

File layout (JSON lines):

    {"type": "header", "schema": 1, "config_hash": ..., "seed": ..., "episodes": n, "scale": ...}
    {"type": "episode", "index": i, "seed": ..., "success": true, "steps": k, "static": {...}}
    {"type": "step", "episode": i, "t": ..., "phase": ..., "expert": ..., "goal": [...], "action": [...], "state": {...}}
    ...
    {"type": "summary", "attempts": ..., "stored": ..., "yield": ...}

Static world parts (racks, zones, randomized parameters) are stored once per
episode; every step line carries the dynamic remainder of the WorldState, from
which observations are re-rendered at training time.
"""
import json
import logging
import pathlib
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from .config import Settings
from .errors import CorruptLineError, DemoSchemaError, DemoYieldError
from .geometry import Pose2D
from .heuristics import HeuristicExperts
from .planner import Episode
from .sim import Action, WorldState, state_from_dict, state_to_dict

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STATIC_KEYS = ('racks', 'zones', 'params')
MIN_ATTEMPTS = 10
MIN_YIELD = 0.2


@dataclass(frozen=True)
class DemoStep:
    t: int
    phase: str
    expert: str
    goal: Pose2D | None
    action: Action
    state: WorldState


@dataclass
class Demonstration:
    index: int
    seed: int
    success: bool
    place_error: float | None = None
    cycle_time: float = 0.0
    steps: list[DemoStep] = field(default_factory=list)

    def for_expert(self, kind: str) -> list[DemoStep]:
        return [s for s in self.steps if s.expert == str(kind)]


# ------------------------------- recording ---------------------------------- #

def record_episode(settings: Settings, seed: int, experts: HeuristicExperts, index: int = 0) -> Demonstration:
    ep = Episode(settings, seed)
    steps = []
    while not ep.done:
        status, state = ep.status, ep.state
        action = experts.act(status, state)
        steps.append(DemoStep(state.t, status.phase.value, str(ep.expert), status.goal, action, state))
        ep.advance(action)
    tr = ep.trace
    return Demonstration(index, seed, tr.success, tr.place_error, tr.cycle_time, steps)


def generate_demonstrations(settings: Settings, n: int, seed: int, out,
                            min_yield: float = MIN_YIELD, progress: bool = True) -> pathlib.Path:
    """Run heuristic episodes on seeds drawn from `seed` until n successes are stored."""
    path = pathlib.Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    experts = HeuristicExperts(settings)
    header = {'type': 'header', 'schema': SCHEMA_VERSION, 'config_hash': settings.digest, 'seed': seed,
              'episodes': n, 'scale': n / settings.eval.reference_demo_episodes}

    stored = attempts = 0
    with path.open('w') as f, tqdm(total=n, desc='demos', disable=not progress) as bar:
        f.write(json.dumps(header) + '\n')
        while stored < n:
            ep_seed = int(rng.integers(0, 2**31))
            attempts += 1
            demo = record_episode(settings, ep_seed, experts, index=stored)
            if demo.success:
                f.writelines(line + '\n' for line in episode_lines(demo))
                stored += 1
                bar.update(1)
            else:
                log.debug("demo seed=%d failed after %d steps", ep_seed, len(demo.steps))
            if attempts >= MIN_ATTEMPTS and stored / attempts < min_yield:
                raise DemoYieldError(f"heuristic yield {stored}/{attempts} is below {min_yield:.0%}; "
                                     "check the layout and heuristic gains")
        f.write(json.dumps({'type': 'summary', 'attempts': attempts, 'stored': stored,
                            'yield': stored / attempts if attempts else None}) + '\n')
    log.info("wrote %d demonstrations (%d attempts) to %s", stored, attempts, path)
    return path


# ------------------------------- serialization ------------------------------ #

def episode_lines(demo: Demonstration) -> list[str]:
    static = {}
    lines = []
    for s in demo.steps:
        d = state_to_dict(s.state)
        if not static:
            static = {k: d[k] for k in STATIC_KEYS}
        lines.append(json.dumps({
            'type': 'step', 'episode': demo.index, 't': s.t, 'phase': s.phase, 'expert': s.expert,
            'goal': s.goal.as_list() if s.goal is not None else None,
            'action': s.action.as_list(),
            'state': {k: v for k, v in d.items() if k not in STATIC_KEYS},
        }))
    head = {'type': 'episode', 'index': demo.index, 'seed': demo.seed, 'success': demo.success,
            'place_error': demo.place_error, 'cycle_time': demo.cycle_time,
            'steps': len(demo.steps), 'static': static}
    return [json.dumps(head)] + lines


def write_demonstrations(path, demos: list[Demonstration], header: dict | None = None) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {'type': 'header', 'schema': SCHEMA_VERSION, **(header or {})}
    with path.open('w') as f:
        f.write(json.dumps(head) + '\n')
        for demo in demos:
            f.writelines(line + '\n' for line in episode_lines(demo))
    return path


def read_header(path) -> dict:
    with pathlib.Path(path).open('r') as f:
        first = f.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError as e:
        raise CorruptLineError(1, f"header is not JSON ({e.msg})") from e
    if head.get('type') != 'header':
        raise CorruptLineError(1, "first line is not a header")
    if head.get('schema') != SCHEMA_VERSION:
        raise DemoSchemaError(f"{path}: schema {head.get('schema')} != supported {SCHEMA_VERSION}")
    return head


def _parse_step(rec: dict, static: dict) -> DemoStep:
    goal = rec['goal']
    return DemoStep(
        t=int(rec['t']), phase=rec['phase'], expert=rec['expert'],
        goal=Pose2D.from_seq(goal) if goal is not None else None,
        action=Action.from_seq(rec['action']),
        state=state_from_dict({**rec['state'], **static}),
    )


def read_demonstrations(path, expected_hash: str | None = None) -> list[Demonstration]:
    path = pathlib.Path(path)
    head = read_header(path)
    if expected_hash is not None and head.get('config_hash') != expected_hash:
        log.warning("%s was recorded under config %s, current config is %s",
                    path, head.get('config_hash'), expected_hash)

    demos: list[Demonstration] = []
    current: Demonstration | None = None
    declared = static = None
    line_no = 1

    def close(at: int):
        if current is not None and len(current.steps) != declared:
            raise CorruptLineError(at, f"episode {current.index} declares {declared} steps, "
                                       f"found {len(current.steps)}")

    with path.open('r') as f:
        next(f)
        for line_no, line in enumerate(f, start=2):
            try:
                rec = json.loads(line)
                kind = rec['type']
                if kind == 'episode':
                    close(line_no)
                    current = Demonstration(int(rec['index']), int(rec['seed']), bool(rec['success']),
                                            rec.get('place_error'), float(rec.get('cycle_time', 0.0)))
                    declared, static = int(rec['steps']), rec['static']
                    demos.append(current)
                elif kind == 'step':
                    if current is None or rec['episode'] != current.index:
                        raise CorruptLineError(line_no, "step record outside its episode")
                    current.steps.append(_parse_step(rec, static))
                elif kind != 'summary':
                    raise CorruptLineError(line_no, f"unknown record type {kind!r}")
            except json.JSONDecodeError as e:
                raise CorruptLineError(line_no, f"invalid JSON ({e.msg})") from e
            except (KeyError, TypeError, ValueError, IndexError) as e:
                if isinstance(e, CorruptLineError):
                    raise
                raise CorruptLineError(line_no, f"malformed record ({e!r})") from e
    close(line_no + 1)
    return demos
