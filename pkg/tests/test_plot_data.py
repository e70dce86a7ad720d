import json

import numpy as np
import pandas as pd
import pytest

from forkrl.errors import EmptyLogError, NoSuccessesError
from forkrl.planner import EpisodeTrace, write_traces
from forkrl.plot_data import (curve_auc, emit_error_cdf, emit_training_curve, error_cdf, read_log,
                              read_trace_errors, steps_to_reach, warm_start_ratio)


def test_cdf_is_sorted_and_ends_at_one():
    cdf = error_cdf([0.03, 0.01, 0.02, 0.02])
    assert list(cdf['error_m']) == [0.01, 0.02, 0.02, 0.03]
    assert list(cdf['cumulative_fraction']) == pytest.approx([0.25, 0.5, 0.75, 1.0])


def test_cdf_needs_a_success():
    with pytest.raises(NoSuccessesError):
        error_cdf([])


def test_emit_error_cdf_summary(tmp_path):
    out = tmp_path / 'error_cdf.csv'
    _, summary = emit_error_cdf([0.01, 0.015, 0.03, 0.05], out, precision_tol=0.02)
    assert summary['n_successes'] == 4
    assert summary['fraction_within_tol'] == 0.5
    assert summary['max_error_m'] == 0.05
    assert len(pd.read_csv(out)) == 4
    assert json.loads((tmp_path / 'error_cdf.summary.json').read_text()) == summary


def test_trace_errors_keep_successes_only(tmp_path):
    traces = [EpisodeTrace(1, 'planner', 'success', place_error=0.012),
              EpisodeTrace(2, 'planner', 'collision'),
              EpisodeTrace(3, 'planner', 'success', place_error=0.004)]
    path = write_traces(tmp_path / 'eval.episodes.jsonl', traces)
    assert read_trace_errors(path) == [0.012, 0.004]


def test_read_log_keeps_evaluation_points():
    df = pd.DataFrame({'step': [0, 10, 20, 30], 'success_rate': [0.0, np.nan, 0.5, np.nan]})
    curve = read_log(df)
    assert list(curve['step']) == [0, 20]
    with pytest.raises(EmptyLogError):
        read_log(pd.DataFrame({'step': [1], 'success_rate': [np.nan]}))
    with pytest.raises(EmptyLogError):
        read_log(pd.DataFrame({'step': [1]}))


def test_steps_to_reach_and_auc():
    curve = pd.DataFrame({'step': [0, 100, 200], 'success_rate': [0.0, 0.9, 1.0]})
    assert steps_to_reach(curve, 0.8) == 100.0
    assert steps_to_reach(curve, 1.1) is None
    assert curve_auc(np.array([0.0, 100.0]), np.array([0.0, 1.0])) == pytest.approx(0.5)
    assert curve_auc(np.array([5.0]), np.array([0.7])) == 0.7


def test_training_curves_on_a_shared_grid(tmp_path):
    hmer = pd.DataFrame({'step': [0, 100, 200], 'success_rate': [0.5, 0.85, 0.95]})
    hrl = tmp_path / 'hrl.csv'
    pd.DataFrame({'step': [0, 200, 400], 'success_rate': [0.0, 0.4, 0.8]}).to_csv(hrl, index=False)
    frame, summary = emit_training_curve({'hmer': hmer, 'hrl': hrl}, tmp_path / 'curves.csv', grid_points=5)
    assert list(frame.columns) == ['step', 'hmer', 'hrl']
    assert list(frame['step']) == pytest.approx([0, 100, 200, 300, 400])
    # held at the last value past its own range
    assert frame['hmer'].iloc[-1] == pytest.approx(0.95)
    assert frame['hrl'].iloc[1] == pytest.approx(0.2)
    m = summary['methods']
    assert m['hmer']['steps_to_level'] == 100.0 and m['hrl']['steps_to_level'] == 400.0
    assert summary['level'] == pytest.approx(0.8)
    assert summary['warm_start_sample_ratio'] == pytest.approx(0.25)
    assert summary['hmer_minus_hrl_auc'] > 0
    assert (tmp_path / 'curves.summary.json').exists()


def test_warm_start_already_at_the_scratch_level():
    hmer = pd.DataFrame({'step': [0, 1000], 'success_rate': [0.85, 0.9]})
    hrl = pd.DataFrame({'step': [0, 1000], 'success_rate': [0.0, 0.85]})
    _, summary = emit_training_curve({'hmer': hmer, 'hrl': hrl})
    assert summary['level'] == pytest.approx(0.85)
    assert summary['methods']['hmer']['steps_to_level'] == 0.0
    assert summary['warm_start_sample_ratio'] == 0.0


def test_explicit_level_overrides_the_scratch_final():
    hmer = pd.DataFrame({'step': [0, 1000], 'success_rate': [0.85, 0.9]})
    hrl = pd.DataFrame({'step': [0, 1000], 'success_rate': [0.0, 0.85]})
    _, summary = emit_training_curve({'hmer': hmer, 'hrl': hrl}, level=0.95)
    assert summary['warm_start_sample_ratio'] is None


def test_single_log_uses_the_default_level():
    _, summary = emit_training_curve({'hmer': pd.DataFrame({'step': [0, 10], 'success_rate': [0.1, 0.9]})})
    assert summary['level'] == pytest.approx(0.8)
    assert 'warm_start_sample_ratio' not in summary


@pytest.mark.parametrize('warm, scratch, want', [(0.0, 1000.0, 0.0), (250.0, 1000.0, 0.25),
                                                 (None, 1000.0, None), (100.0, None, None), (0.0, 0.0, None)])
def test_warm_start_ratio(warm, scratch, want):
    assert warm_start_ratio(warm, scratch) == want


def test_training_curves_need_logs():
    with pytest.raises(EmptyLogError):
        emit_training_curve({})
