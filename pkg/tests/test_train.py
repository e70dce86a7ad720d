import json

import numpy as np
import pandas as pd
import pytest

from forkrl.errors import MissingDemosError
from forkrl.evaluate import load_nets
from forkrl.experts import HIERARCHICAL, ExpertKind
from forkrl.nn import param_digest
from forkrl.train import exec_mode_for, load_init, train_bc, train_hmer, train_ppo, trained_kinds


def manifest_meta(out_dir) -> dict:
    return json.loads((out_dir / 'manifest.json').read_text())


def test_trained_kinds():
    assert trained_kinds('hmer') == HIERARCHICAL
    assert trained_kinds('flat-bc') == (ExpertKind.FLAT,)
    assert trained_kinds('hrl', 'pick') == (ExpertKind.PICKING,)
    assert trained_kinds('seq-hybrid', 'place') == (ExpertKind.PLACING,)
    with pytest.raises(ValueError):
        trained_kinds('rule-based')
    with pytest.raises(ValueError):
        trained_kinds('hmer', 'lunch')
    assert exec_mode_for('seq-hybrid') == 'fixed-sequence'
    assert exec_mode_for('hmer') == 'planner'


def test_train_bc_writes_log_and_manifest(tmp_path, settings, demo_file):
    out = tmp_path / 'hbc'
    nets, history = train_bc(settings, 'hbc', demo_file, out)
    assert set(nets) == set(HIERARCHICAL)
    assert list(history.columns) == ['epoch', 'navigation_nll', 'picking_nll', 'placing_nll']
    assert list(history['epoch']) == [1, 2]
    assert pd.read_csv(out / 'bc_metrics.csv').shape == history.shape
    meta = manifest_meta(out)
    assert meta['method'] == 'hbc' and meta['ppo_steps'] == 0
    assert set(meta['experts']) == {'navigation', 'picking', 'placing'}
    loaded = load_nets(out, settings)
    for kind, net in nets.items():
        assert param_digest(loaded[kind].parameters()) == param_digest(net.parameters())


def test_flat_bc_trains_one_network(tmp_path, settings, demo_file):
    nets, history = train_bc(settings, 'flat-bc', demo_file, tmp_path / 'flat')
    assert list(nets) == [ExpertKind.FLAT]
    assert list(history.columns) == ['epoch', 'flat_nll']
    assert manifest_meta(tmp_path / 'flat')['method'] == 'flat-bc'


def test_train_bc_needs_demonstrations(tmp_path, settings):
    with pytest.raises(MissingDemosError):
        train_bc(settings, 'hbc', tmp_path / 'nothing.jsonl', tmp_path / 'out')


def test_warm_start_modes_need_init(tmp_path, settings):
    with pytest.raises(MissingDemosError):
        train_ppo(settings, 'hmer', tmp_path / 'out')
    with pytest.raises(ValueError):
        train_ppo(settings, 'hrl', tmp_path / 'out', steps=0)
    with pytest.raises(ValueError):
        train_ppo(settings, 'hbc', tmp_path / 'out')


def test_hrl_from_scratch(tmp_path, short_settings):
    out = tmp_path / 'hrl'
    metrics = train_ppo(short_settings, 'hrl', out, steps=64, seed=0)
    assert list(metrics['step']) == [0, 32, 64]
    assert list(metrics['iteration']) == [0, 1, 2]
    assert metrics['success_rate'].notna().all()
    assert metrics['lr'].iloc[1] == pytest.approx(short_settings.ppo.lr)
    assert metrics['lr'].iloc[2] == pytest.approx(short_settings.ppo.lr / 2)
    assert metrics['navigation_samples'].iloc[1:].sum() == 64
    assert np.isfinite(metrics['navigation_policy_loss'].iloc[1])
    assert (out / 'metrics.csv').exists()
    assert sorted(p.name for p in (out / 'snapshots').iterdir()) == ['step_000000032', 'step_000000064']
    meta = manifest_meta(out)
    assert meta['method'] == 'hrl' and meta['ppo_steps'] == 64 and meta['init'] is None


def test_ppo_refines_the_bc_weights(tmp_path, short_settings, demo_file):
    bc_nets, _ = train_bc(short_settings, 'hbc', demo_file, tmp_path / 'bc')
    init = load_init(tmp_path / 'bc', short_settings, HIERARCHICAL)
    for kind in HIERARCHICAL:
        assert param_digest(init[kind].parameters()) == param_digest(bc_nets[kind].parameters())
    out = tmp_path / 'hmer'
    train_ppo(short_settings, 'hmer', out, tmp_path / 'bc', steps=32, seed=0)
    after = load_nets(out, short_settings)
    # only navigation acts in 40-step episodes from the start zone
    assert param_digest(after[ExpertKind.NAVIGATION].parameters()) != \
        param_digest(bc_nets[ExpertKind.NAVIGATION].parameters())
    assert param_digest(after[ExpertKind.PLACING].parameters()) == \
        param_digest(bc_nets[ExpertKind.PLACING].parameters())
    assert manifest_meta(out)['exec_mode'] == 'planner'


def test_pick_subtask_training(tmp_path, short_settings):
    metrics = train_ppo(short_settings, 'hrl', tmp_path / 'pick', steps=32, seed=1, subtask='pick')
    assert metrics['picking_samples'].iloc[1] == 32
    assert 'navigation_samples' not in metrics
    assert manifest_meta(tmp_path / 'pick')['subtask'] == 'pick'


def test_train_hmer_runs_both_phases(tmp_path, short_settings, demo_file):
    manifest = train_hmer(short_settings, 'seq-hybrid', tmp_path / 'seq', demos=demo_file, steps=32)
    assert manifest == tmp_path / 'seq' / 'manifest.json'
    assert (tmp_path / 'seq' / 'bc' / 'manifest.json').exists()
    meta = manifest_meta(tmp_path / 'seq')
    assert meta['exec_mode'] == 'fixed-sequence'
    assert meta['init'].endswith('bc')
