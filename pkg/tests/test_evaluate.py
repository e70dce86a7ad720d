import json
import math

import pandas as pd
import pytest

from forkrl.errors import MissingCheckpointError
from forkrl.evaluate import (Method, MethodSpec, bootstrap_ci, compare, episode_seeds, evaluate, load_nets,
                             ordering_checks, seeds_digest, summarize, write_run_metadata)
from forkrl.experts import HIERARCHICAL, ExpertKind
from forkrl.planner import EpisodeTrace
from forkrl.train import fresh_nets, save_nets


@pytest.fixture
def manifest(tmp_path, short_settings):
    nets = fresh_nets(short_settings, HIERARCHICAL, seed=0)
    return save_nets(tmp_path / 'hbc', nets, short_settings, {'method': 'hbc'})


def trace(outcome, cycle=0.0, err=None, seed=0):
    return EpisodeTrace(seed=seed, mode='planner', outcome=outcome, cycle_time=cycle, place_error=err)


def test_summarize_rates_and_success_only_means(settings):
    traces = [trace('success', 60.0, 0.01), trace('success', 80.0, 0.03), trace('collision'), trace('timeout')]
    m = summarize('hmer', traces, settings)
    assert m.n_episodes == 4
    assert m.success_rate == 0.5 and m.collision_rate == 0.25 and m.timeout_rate == 0.25
    assert m.aborted_rate == 0.0
    assert m.mean_cycle_time == pytest.approx(70.0)
    assert m.mean_placement_error == pytest.approx(0.02)
    assert m.precision_rate == 0.5
    assert m.placement_errors() == [0.01, 0.03]
    lo, hi = m.ci['success_rate']
    assert 0.0 <= lo <= 0.5 <= hi <= 1.0
    row = m.row()
    assert row['method'] == 'hmer' and 'success_rate_ci_low' in row


def test_summarize_without_successes(settings):
    m = summarize('flat-bc', [trace('timeout'), trace('collision')], settings)
    assert m.success_rate == 0.0
    assert m.mean_cycle_time is None and m.mean_placement_error is None and m.precision_rate is None
    assert 'mean_cycle_time_s' not in m.ci


def test_bootstrap_ci():
    assert bootstrap_ci([1.0, 1.0, 1.0]) == (1.0, 1.0)
    assert bootstrap_ci([0.5]) == (0.5, 0.5)
    assert all(math.isnan(v) for v in bootstrap_ci([]))
    lo, hi = bootstrap_ci([0.0, 1.0] * 50, n_resamples=500)
    assert lo < 0.5 < hi


def test_seeds():
    assert episode_seeds(42, 5) == episode_seeds(42, 5)
    assert episode_seeds(42, 5) != episode_seeds(43, 5)
    assert episode_seeds(42, 3) == episode_seeds(42, 5)[:3]
    assert seeds_digest([1, 2]) != seeds_digest([2, 1])


def test_run_metadata(tmp_path, settings):
    path = write_run_metadata(tmp_path / 'comparison.csv', settings, [1, 2, 3], {'method': 'hmer'})
    assert path.name == 'comparison.meta.json'
    meta = json.loads(path.read_text())
    assert meta['config_hash'] == settings.digest
    assert meta['seeds'] == [1, 2, 3] and meta['method'] == 'hmer'
    assert len(meta['revision']) == 12


def test_method_specs():
    assert MethodSpec(Method.SEQ_HYBRID).exec_mode == 'fixed-sequence'
    assert MethodSpec(Method.HMER).exec_mode == 'planner'
    assert not MethodSpec(Method.RULE_BASED).needs_checkpoint
    assert MethodSpec(Method.FLAT_BC).required_kinds() == (ExpertKind.FLAT,)
    assert MethodSpec(Method.HMER, subtask='place').required_kinds() == (ExpertKind.PLACING,)


def test_learned_method_needs_a_checkpoint(short_settings):
    with pytest.raises(MissingCheckpointError):
        evaluate(MethodSpec(Method.HMER), short_settings, 1)


def test_episode_count_must_be_positive(short_settings):
    with pytest.raises(ValueError):
        evaluate(MethodSpec(Method.RULE_BASED), short_settings, 0)


def test_manifest_must_hold_every_expert(tmp_path, short_settings):
    path = save_nets(tmp_path / 'pick', fresh_nets(short_settings, (ExpertKind.PICKING,), 0), short_settings, {})
    with pytest.raises(MissingCheckpointError):
        load_nets(path, short_settings, HIERARCHICAL)
    assert set(load_nets(path, short_settings)) == {ExpertKind.PICKING}


def test_rule_based_short_episodes_time_out(short_settings):
    m = evaluate(MethodSpec(Method.RULE_BASED), short_settings, 2)
    assert m.n_episodes == 2
    assert m.success_rate == 0.0
    assert [tr.outcome for tr in m.episodes] == ['timeout', 'timeout']


def test_evaluation_is_deterministic(manifest, short_settings):
    a = evaluate(MethodSpec(Method.HBC, str(manifest)), short_settings, 2, seed=7)
    b = evaluate(MethodSpec(Method.HBC, str(manifest)), short_settings, 2, seed=7)
    assert [t.summary() for t in a.episodes] == [t.summary() for t in b.episodes]
    assert a.seeds_hash == b.seeds_hash == seeds_digest(episode_seeds(7, 2))


def test_trajectory_dump(tmp_path, manifest, short_settings):
    out = tmp_path / 'traj.jsonl'
    m = evaluate(MethodSpec(Method.HBC, str(manifest)), short_settings, 2, dump_trajectory=out)
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    first = m.episodes[0]
    assert len(lines) == first.steps + 1
    assert {rec['seed'] for rec in lines} == {first.seed}
    assert lines[0]['state']['t'] == 0


def test_compare_shares_seeds(tmp_path, manifest, short_settings):
    out = tmp_path / 'comparison.csv'
    df = compare([MethodSpec(Method.RULE_BASED), MethodSpec(Method.HBC, str(manifest))], short_settings, 2,
                 out=out)
    assert list(df['method']) == ['rule-based', 'hbc']
    assert df['seeds_hash'].nunique() == 1
    assert len(pd.read_csv(out)) == 2
    meta = json.loads((tmp_path / 'comparison.meta.json').read_text())
    assert meta['methods'] == ['rule-based', 'hbc']
    assert meta['ordering']['rule_based_competent'] is False


def test_ordering_checks(settings):
    good = summarize('x', [trace('success', 50.0, 0.01)] * 4, settings)
    poor = summarize('x', [trace('success', 50.0, 0.05), trace('timeout'), trace('timeout'), trace('timeout')],
                     settings)
    checks = ordering_checks({Method.HBC: good, Method.FLAT_BC: poor, Method.HMER: good,
                              Method.RULE_BASED: poor, Method.SEQ_HYBRID: poor})
    assert checks['hbc_minus_flat_bc_pp'] == pytest.approx(75.0)
    assert checks['decoupling_gap_ok']
    assert checks['hmer_more_precise_than_rule_based']
    assert checks['hmer_beats_seq_hybrid']
    assert not checks['rule_based_competent']


def test_ordering_requires_hmer_to_strictly_beat_seq_hybrid(settings):
    same = summarize('x', [trace('success', 50.0, 0.01), trace('timeout')], settings)
    checks = ordering_checks({Method.HMER: same, Method.SEQ_HYBRID: same})
    assert checks['hmer_beats_seq_hybrid'] is False


def test_aborts_are_counted_apart_from_timeouts(settings):
    m = summarize('hmer', [trace('success', 50.0, 0.01), trace('aborted'), trace('timeout'), trace('timeout')],
                  settings)
    assert m.aborted_rate == 0.25 and m.timeout_rate == 0.5
    assert m.success_rate + m.collision_rate + m.timeout_rate + m.aborted_rate == pytest.approx(1.0)
    assert m.row()['aborted_rate'] == 0.25
