import numpy as np
import pytest

from conftest import short_demos, small_config
from forkrl.bc import bc_train, build_samples, nll_and_grads
from forkrl.config import BCHyper, Settings
from forkrl.errors import EmptyDatasetError
from forkrl.experts import ExpertKind, PolicyNet, action_dim
from forkrl.nn import param_digest


@pytest.fixture(scope='module')
def demos():
    return short_demos(Settings.from_dict(small_config()))


@pytest.mark.parametrize('kind', list(ExpertKind))
def test_samples_per_expert(settings, demos, kind):
    samples = build_samples(demos, kind, settings.env)
    steps = sum(len(d.steps if kind == ExpertKind.FLAT else d.for_expert(kind)) for d in demos)
    assert len(samples) == steps
    assert samples.actions.shape == (steps, action_dim(kind))
    assert np.all(np.abs(samples.actions) <= 1.0)
    assert set(np.unique(samples.clamp)) <= {0.0, 1.0}
    if 'image' in samples.inputs:
        assert samples.inputs['image'].dtype == np.uint8


def test_max_samples_subsamples(settings, demos):
    samples = build_samples(demos, ExpertKind.FLAT, settings.env, max_samples=10, seed=3)
    assert len(samples) == 10


def test_failed_demonstrations_are_ignored(settings, demos):
    failed = [type(d)(d.index, d.seed, False, None, 0.0, d.steps) for d in demos]
    with pytest.raises(EmptyDatasetError):
        build_samples(failed, ExpertKind.NAVIGATION, settings.env)


def test_nll_gradients_match_finite_differences(settings, demos):
    net = PolicyNet(ExpertKind.PLACING, settings.experts, settings.env, seed=0)
    samples = build_samples(demos, ExpertKind.PLACING, settings.env)
    idx = np.arange(min(6, len(samples)))
    batch = samples.batch(idx)
    loss, d_mean, d_clamp, d_log_std = nll_and_grads(net, batch, samples.actions[idx], samples.clamp[idx])
    assert np.isfinite(loss)
    # d NLL / d log_std, checked numerically
    eps = 1e-6
    log_std = net.log_std.value
    for j in range(len(log_std)):
        log_std[j] += eps
        up = nll_and_grads(net, batch, samples.actions[idx], samples.clamp[idx])[0]
        log_std[j] -= 2 * eps
        down = nll_and_grads(net, batch, samples.actions[idx], samples.clamp[idx])[0]
        log_std[j] += eps
        assert d_log_std[j] == pytest.approx((up - down) / (2 * eps), abs=1e-6)
    assert d_mean.shape == samples.actions[idx].shape
    assert d_clamp.shape == (len(idx),)


@pytest.mark.parametrize('kind', [ExpertKind.NAVIGATION, ExpertKind.PLACING])
def test_bc_lowers_the_nll(settings, demos, kind):
    net = PolicyNet(kind, settings.experts, settings.env, seed=0)
    _, history = bc_train(net, demos, BCHyper(lr=1e-2, epochs=15, minibatch=8, max_samples=0), seed=0)
    assert len(history) == 15
    assert history[-1] < history[0]


def test_bc_is_seed_deterministic(settings, demos):
    h = BCHyper(lr=1e-3, epochs=2, minibatch=8)
    runs = []
    for _ in range(2):
        net = PolicyNet(ExpertKind.PICKING, settings.experts, settings.env, seed=0)
        bc_train(net, demos, h, seed=5)
        runs.append(param_digest(net.parameters()))
    assert runs[0] == runs[1]
