"""
Long-running acceptance experiments on the desk-scale world.

    python scripts/acceptance.py --experiments heuristic,decoupling --episodes 200

Each experiment appends one row (name, measured values, passed) to
<out>/acceptance.csv; the table is printed at the end.
"""
import argparse
import filecmp
import logging
import pathlib
from dataclasses import replace

import pandas as pd

from forkrl.config import load_settings
from forkrl.demos import generate_demonstrations
from forkrl.evaluate import Method, MethodSpec, compare, evaluate
from forkrl.plot_data import read_log, steps_to_reach, warm_start_ratio
from forkrl.train import train_bc, train_hmer, train_ppo

log = logging.getLogger('acceptance')

EXPERIMENTS = ('heuristic', 'precision', 'warm-start', 'decoupling', 'robustness', 'determinism')


def demos_for(settings, args) -> pathlib.Path:
    path = args.out / 'demos.jsonl'
    if not path.exists():
        generate_demonstrations(settings, args.demos, args.seed, path)
    return path


def heuristic(settings, args) -> dict:
    m = evaluate(MethodSpec(Method.RULE_BASED), settings, args.episodes, args.seed, progress=True)
    return {'rule_based_success': m.success_rate, 'passed': m.success_rate >= 0.8}


def precision(settings, args) -> dict:
    manifest = train_hmer(settings, 'hmer', args.out / 'place', demos_for(settings, args), steps=args.steps,
                          seed=args.seed, subtask='place', progress=True)
    learned = evaluate(MethodSpec(Method.HMER, str(manifest), 'place'), settings, args.episodes, args.seed)
    rule = evaluate(MethodSpec(Method.RULE_BASED, subtask='place'), settings, args.episodes, args.seed)
    a, b = learned.mean_placement_error, rule.mean_placement_error
    ok = a is not None and b is not None and a < b and (learned.precision_rate or 0.0) >= 0.7
    return {'hmer_error_m': a, 'rule_based_error_m': b, 'hmer_precision_rate': learned.precision_rate,
            'passed': ok}


def warm_start(settings, args) -> dict:
    bc_dir = args.out / 'pick_bc'
    train_bc(settings, 'hbc', demos_for(settings, args), bc_dir, args.seed, 'pick', progress=True)
    warm = train_ppo(settings, 'hmer', args.out / 'pick_hmer', bc_dir, args.steps, args.seed, 'pick', True)
    cold = train_ppo(settings, 'hrl', args.out / 'pick_hrl', None, args.steps, args.seed, 'pick', True)
    warm, cold = read_log(warm), read_log(cold)
    level = float(cold['success_rate'].iloc[-1])
    s_warm, s_cold = steps_to_reach(warm, level), steps_to_reach(cold, level)
    ratio = warm_start_ratio(s_warm, s_cold)
    ok = (warm['success_rate'].iloc[-1] >= level) and ratio is not None and ratio <= 0.75
    return {'warm_final': float(warm['success_rate'].iloc[-1]), 'scratch_final': level,
            'sample_ratio': ratio, 'passed': bool(ok)}


def decoupling(settings, args) -> dict:
    demos = demos_for(settings, args)
    train_bc(settings, 'hbc', demos, args.out / 'hbc', args.seed, progress=True)
    train_bc(settings, 'flat-bc', demos, args.out / 'flat-bc', args.seed, progress=True)
    hbc = evaluate(MethodSpec(Method.HBC, str(args.out / 'hbc')), settings, args.episodes, args.seed)
    flat = evaluate(MethodSpec(Method.FLAT_BC, str(args.out / 'flat-bc')), settings, args.episodes, args.seed)
    gap = 100.0 * (hbc.success_rate - flat.success_rate)
    return {'hbc_success': hbc.success_rate, 'flat_bc_success': flat.success_rate, 'gap_pp': gap,
            'passed': gap >= 20.0}


def robustness(settings, args) -> dict:
    demos = demos_for(settings, args)
    hmer = train_hmer(settings, 'hmer', args.out / 'hmer', demos, steps=args.steps, seed=args.seed, progress=True)
    seq = train_hmer(settings, 'seq-hybrid', args.out / 'seq-hybrid', init=args.out / 'hmer' / 'bc',
                     steps=args.steps, seed=args.seed, progress=True)
    faulty = replace(settings, env=replace(settings.env, clamp_fault_prob=0.5))
    a = evaluate(MethodSpec(Method.HMER, str(hmer)), faulty, args.episodes, args.seed)
    b = evaluate(MethodSpec(Method.SEQ_HYBRID, str(seq)), faulty, args.episodes, args.seed)
    return {'hmer_success': a.success_rate, 'seq_hybrid_success': b.success_rate,
            'seq_hybrid_failure': 1.0 - b.success_rate,
            'passed': a.success_rate > b.success_rate and (1.0 - b.success_rate) > (1.0 - a.success_rate)}


def determinism(settings, args) -> dict:
    specs = [MethodSpec(Method.RULE_BASED)]
    for method in (Method.HBC, Method.HMER):
        if (args.out / str(method) / 'manifest.json').exists():
            specs.append(MethodSpec(method, str(args.out / str(method))))
    paths = [args.out / f'determinism_{i}.csv' for i in (1, 2)]
    for p in paths:
        compare(specs, settings, args.episodes, 42, p)
    return {'methods': len(specs), 'passed': filecmp.cmp(*paths, shallow=False)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument('--config', default=None)
    ap.add_argument('--experiments', default=','.join(EXPERIMENTS))
    ap.add_argument('--episodes', type=int, default=200)
    ap.add_argument('--demos', type=int, default=2000)
    ap.add_argument('--steps', type=int, default=200_000)
    ap.add_argument('--seed', type=int, default=42)
    ap.add_argument('--out', default='runs/acceptance')
    args = ap.parse_args()
    args.out = pathlib.Path(args.out)
    args.out.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(name)s %(message)s')

    settings = load_settings(args.config)
    runners = {'heuristic': heuristic, 'precision': precision, 'warm-start': warm_start,
               'decoupling': decoupling, 'robustness': robustness, 'determinism': determinism}
    rows = []
    for name in (s.strip() for s in args.experiments.split(',') if s.strip()):
        if name not in runners:
            ap.error(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
        log.info("running %s", name)
        rows.append({'experiment': name, **runners[name](settings, args)})
        pd.DataFrame(rows).to_csv(args.out / 'acceptance.csv', index=False)

    df = pd.DataFrame(rows)
    print(df)
    print('\nPassed: %d / %d' % (int(df['passed'].sum()), len(df)))


if __name__ == '__main__':
    main()
