'''
Tests the dense network, losses and optimizer defined within "network.py".
'''

import math
import numpy
import pytest

from hypothesis import given
from hypothesis import strategies as st

from spsim import DenseNet, LossSpec, ScoreDistribution
from spsim.errors import ConfigError, DimensionError, NumericalError, StatisticsError
from spsim.network import (
    LOSS_KINDS,
    AdamConfig,
    AdamState,
    Layer,
    adam_step,
    batch_loss,
    loss_mahalanobis,
    loss_mahalanobis_single,
    loss_mse,
    loss_weighted_mse
)


def small_net(seed: int = 0, dropout_rate: float = 0.0, dims: list = None) -> DenseNet:
    return DenseNet.create(
        dims         = dims or [6, 5, 1],
        activations  = ['leaky_relu', 'identity'],
        rng          = numpy.random.default_rng(seed),
        dropout_rate = dropout_rate
    )


def test_forward_by_hand():
    '''
    Tests a forward pass against a hand computation.
    '''
    net = DenseNet(layers=[
        Layer(weight=[[1.0, -1.0], [2.0, 0.5]], bias=[0.0, -1.0], activation='leaky_relu', slope=0.1),
        Layer(weight=[[1.0, 2.0]], bias=[0.5])
    ])
    out, _ = net.forward([1.0, 2.0])
    # hidden pre-activations: [-1, 2] -> [-0.1, 2]
    assert out.tolist() == pytest.approx([-0.1 + 4.0 + 0.5])
    batch, _ = net.forward([[1.0, 2.0], [0.0, 0.0]])
    assert batch.shape == (2, 1)
    assert batch[:, 0].tolist() == pytest.approx([4.4, 0.5 + 2.0 * -0.1])

def test_forward_matches_matrix_product():
    '''
    Tests inference mode against an independent matrix computation.
    '''
    net = small_net(seed=3)
    rng = numpy.random.default_rng(4)
    x = rng.normal(size=(10, 6))
    w1, b1 = net.layers[0].weight, net.layers[0].bias
    w2, b2 = net.layers[1].weight, net.layers[1].bias
    z = x @ w1.T + b1
    h = numpy.where(z > 0, z, 0.01 * z)
    expected = h @ w2.T + b2
    out, _ = net.forward(x)
    assert numpy.allclose(out, expected, rtol=0.0, atol=1e-12)

def test_forward_errors():
    '''
    Tests the dimension and finiteness checks of the forward pass.
    '''
    net = small_net()
    with pytest.raises(DimensionError):
        net.forward(numpy.zeros(5))
    net.layers[1].bias[0] = math.nan
    with pytest.raises(NumericalError, match='non-finite parameter'):
        net.forward(numpy.zeros(6))
    with pytest.raises(DimensionError):
        DenseNet(layers=[Layer(weight=numpy.zeros((3, 2)), bias=numpy.zeros(3)), Layer(weight=numpy.zeros((1, 4)), bias=numpy.zeros(1))])
    with pytest.raises(ConfigError, match='unknown activation'):
        Layer(weight=numpy.zeros((1, 2)), bias=numpy.zeros(1), activation='gelu')

def test_inference_is_deterministic():
    '''
    Tests that inference mode applies no dropout.
    '''
    net = small_net(dropout_rate=0.5)
    x = numpy.ones(6)
    a, _ = net.forward(x)
    b, _ = net.forward(x)
    assert numpy.array_equal(a, b)

def test_dropout_preserves_expectation():
    '''
    Tests that inverted dropout leaves the expected output unchanged.
    '''
    net = small_net(seed=1, dropout_rate=0.5, dims=[3, 8, 1])
    x = numpy.array([0.5, -1.0, 2.0])
    reference, _ = net.forward(x)
    samples, _ = net.forward(numpy.tile(x, (10000, 1)), numpy.random.default_rng(2))
    se = samples[:, 0].std() / math.sqrt(samples.shape[0])
    assert abs(samples[:, 0].mean() - reference[0]) <= 3.0 * se + 1e-12
    assert samples[:, 0].std() > 0.0

def test_backward_by_hand():
    '''
    Tests the backward pass of a single linear layer.
    '''
    net = DenseNet(layers=[Layer(weight=[[2.0, 3.0]], bias=[1.0])])
    _, cache = net.forward([4.0, 5.0])
    grads = net.backward(cache, [1.0])
    assert grads.weights[0].tolist() == [[4.0, 5.0]]
    assert grads.biases[0].tolist() == [1.0]
    assert grads.inputs.tolist() == [2.0, 3.0]
    assert set(grads.as_dict()) == {'layers.0.weight', 'layers.0.bias'}

def test_backward_rejects_stale_cache():
    '''
    Tests that a cache from a different network is rejected.
    '''
    a = small_net(dims=[2, 3, 1])
    b = small_net(dims=[3, 3, 1])
    _, cache = b.forward(numpy.ones(3))
    with pytest.raises(DimensionError, match='stale cache'):
        a.backward(cache, [1.0])

def test_losses_by_hand():
    '''
    Tests every loss on hand-computed examples.
    '''
    dist = ScoreDistribution.from_scores('a', [50, 70])
    assert loss_mse(70.0, 60.0) == 100.0
    assert loss_weighted_mse(70.0, 60.0, 0.5) == 50.0
    assert loss_mahalanobis(75.0, dist) == 1.5
    assert loss_mahalanobis(60.0, dist) == 0.0
    flat = ScoreDistribution.from_scores('b', [40, 40])
    assert loss_mahalanobis(43.0, flat) == 3.0
    assert loss_mahalanobis(43.0, flat, epsilon_sd=2.0) == 1.5
    # scores [50, 70] around a prediction of 65: 15 / 10 + 5 / 10
    assert loss_mahalanobis_single(65.0, 50.0, dist) + loss_mahalanobis_single(65.0, 70.0, dist) == pytest.approx(2.0)
    with pytest.raises(StatisticsError, match='does not belong'):
        loss_mahalanobis_single(65.0, 55.0, dist)

def test_batch_loss_matches_scalar_losses():
    '''
    Tests that batch losses average the scalar losses.
    '''
    preds = numpy.array([65.0, 65.0])
    value, _ = batch_loss('mahalanobis-single', preds, numpy.array([50.0, 70.0]), numpy.array([10.0, 10.0]))
    assert value * 2 == pytest.approx(2.0)
    value, grad = batch_loss('mse', numpy.array([1.0, 3.0]), numpy.array([0.0, 0.0]), numpy.zeros(2))
    assert value == 5.0
    assert grad.tolist() == [1.0, 3.0]
    value, _ = batch_loss('wmse', numpy.array([1.0, 3.0]), numpy.zeros(2), numpy.zeros(2), numpy.array([2.0, 0.0]))
    assert value == 1.0
    with pytest.raises(ConfigError):
        batch_loss('huber', preds, preds, preds)

@given(st.floats(min_value=0.0, max_value=100.0), st.floats(min_value=0.0, max_value=100.0), st.floats(min_value=0.1, max_value=20.0))
def test_mahalanobis_scale_equivariance(pred, mean, sd):
    '''
    Tests that scaling every score and the prediction leaves the loss
    unchanged as long as the standard deviation floor does not apply.
    '''
    a = abs(mean - pred) / max(sd, 1e-6)
    dist = ScoreDistribution(example_id='a', raw=numpy.array([mean]), mean=mean, sd=sd)
    scaled = ScoreDistribution(example_id='a', raw=numpy.array([2 * mean]), mean=2 * mean, sd=2 * sd)
    assert loss_mahalanobis(pred, dist, epsilon_sd=0.05) == pytest.approx(a)
    assert loss_mahalanobis(2 * pred, scaled, epsilon_sd=0.05) == pytest.approx(a)

def test_loss_spec_validation():
    '''
    Tests the validation of loss descriptions.
    '''
    assert LossSpec().kind == 'mahalanobis'
    assert LossSpec(kind='mahalanobis-single').is_single()
    assert LossSpec(kind='wmse').is_squared()
    with pytest.raises(ConfigError, match='valid values: mse, wmse, mahalanobis, mahalanobis-single'):
        LossSpec(kind='l1')
    with pytest.raises(ConfigError, match='epsilon_sd'):
        LossSpec(epsilon_sd=0.0)
    with pytest.raises(ConfigError, match='only valid for the wmse'):
        LossSpec(kind='mse', weights={'a': 1.0})
    bound = LossSpec(kind='wmse').bind({'a': 2.0})
    assert bound.weights == {'a': 2.0}
    assert not 'weights' in bound.to_dict()

def finite_difference_case(seed: int, kind: str) -> float:
    '''
    Returns the largest relative error between the analytic and the numerical
    gradient of a loss composed with a small network. Inputs are drawn so that
    no unit sits near a kink.
    '''
    rng = numpy.random.default_rng(seed)
    while True:
        net = small_net(seed=int(rng.integers(1 << 30)))
        x = rng.normal(size=(4, 6))
        targets = rng.uniform(0.0, 2.0, size=4)
        sds = rng.uniform(0.5, 2.0, size=4)
        weights = rng.uniform(0.5, 2.0, size=4) if kind == 'wmse' else None
        out, cache = net.forward(x)
        if numpy.min(numpy.abs(cache.pre[0])) > 1e-3 and numpy.min(numpy.abs(out[:, 0] - targets)) > 1e-3:
            break
    def objective(params):
        net.assign(params)
        value, _ = batch_loss(kind, net.forward(x)[0][:, 0], targets, sds, weights)
        return value
    params = {k: v.copy() for k, v in net.params().items()}
    net.assign(params)
    out, cache = net.forward(x)
    _, upstream = batch_loss(kind, out[:, 0], targets, sds, weights)
    analytic = net.backward(cache, upstream[:, None]).as_dict()
    worst = 0.0
    h = 1e-5
    for path, value in params.items():
        for index in numpy.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[path][index] += h
            minus[path][index] -= h
            numeric = (objective(plus) - objective(minus)) / (2 * h)
            exact = analytic[path][index]
            worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6))
    return worst

@pytest.mark.parametrize('kind', LOSS_KINDS)
def test_gradients_match_finite_differences(kind):
    '''
    Tests the backward pass composed with every loss against central finite
    differences over randomly drawn networks and batches.
    '''
    for seed in range(13):
        assert finite_difference_case(seed, kind) <= 1e-4

def test_adam_step_by_hand():
    '''
    Tests a first Adam step against a hand computation.
    '''
    params = {'p': numpy.array([1.0])}
    grads = {'p': numpy.array([0.5])}
    new, state = adam_step(params, grads, AdamState(), AdamConfig(lr=0.1))
    assert new['p'][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), rel=1e-12)
    assert state.step == 1
    assert state.m['p'][0] == pytest.approx(0.05)
    assert state.v['p'][0] == pytest.approx(0.00025)
    assert params['p'][0] == 1.0

def test_adam_is_deterministic():
    '''
    Tests that identical inputs give identical updates.
    '''
    rng = numpy.random.default_rng(0)
    params = {'a': rng.normal(size=(3, 2)), 'b': rng.normal(size=2)}
    grads = {'a': rng.normal(size=(3, 2)), 'b': rng.normal(size=2)}
    first, s1 = adam_step(params, grads, AdamState(), AdamConfig())
    second, s2 = adam_step(params, grads, AdamState(), AdamConfig())
    for k in params:
        assert numpy.array_equal(first[k], second[k])
        assert numpy.array_equal(s1.m[k], s2.m[k])
    again, _ = adam_step(first, grads, AdamState.from_dict(s1.to_dict()), AdamConfig())
    resumed, _ = adam_step(first, grads, s1, AdamConfig())
    for k in params:
        assert numpy.array_equal(again[k], resumed[k])

def test_adam_errors():
    '''
    Tests that mismatched or non-finite gradients are rejected.
    '''
    params = {'layers.0.weight': numpy.zeros((1, 1))}
    with pytest.raises(NumericalError, match='layers.0.weight'):
        adam_step(params, {'layers.0.weight': numpy.array([[math.nan]])}, AdamState(), AdamConfig())
    with pytest.raises(DimensionError):
        adam_step(params, {'layers.0.weight': numpy.zeros((2, 1))}, AdamState(), AdamConfig())
    with pytest.raises(DimensionError):
        adam_step(params, {'other': numpy.zeros((1, 1))}, AdamState(), AdamConfig())

def test_net_round_trip():
    '''
    Tests that a network survives conversion to a dictionary.
    '''
    net = small_net(seed=9, dropout_rate=0.2)
    copy = DenseNet.from_dict(net.to_dict())
    x = numpy.random.default_rng(0).normal(size=(5, 6))
    assert numpy.array_equal(net.forward(x)[0], copy.forward(x)[0])
    assert copy.dropout_rate == 0.2
    rep = net.to_dict()
    rep['layer_dims'] = [6, 4, 1]
    with pytest.raises(DimensionError):
        DenseNet.from_dict(rep)

def test_create_initialization():
    '''
    Tests the initialization scale of newly created networks.
    '''
    net = DenseNet.create([400, 300, 1], ['leaky_relu', 'identity'], numpy.random.default_rng(0))
    assert net.layers[0].weight.std() == pytest.approx(math.sqrt(2.0 / 400), rel=0.05)
    assert numpy.all(net.layers[0].bias == 0.0)
