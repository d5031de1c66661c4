'''
Tests the score statistics defined within "stats.py".
'''

import math
import numpy
import pytest
import scipy.stats

from hypothesis import given, settings
from hypothesis import strategies as st

from spsim import ScoreDistribution, listener_split_upper_bound
from spsim.errors import StatisticsError, ZeroVarianceError
from spsim.stats import (
    accuracy_within_sigma,
    density_weights,
    distribution_of,
    distributions,
    histogram,
    mean_scores,
    metric_report,
    pearson,
    rmse,
    system_pearson
)
from spsim.synthetic import generate_synthetic

from . import ZERO_NOISE_WORLD, make_dataset, world

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
scores = st.floats(min_value=0.0, max_value=100.0, allow_nan=False)


def test_score_distribution():
    '''
    Tests the mean and population standard deviation of score lists.
    '''
    d = ScoreDistribution.from_scores('a', [50, 70])
    assert d.mean == 60.0
    assert d.sd == 10.0
    assert len(d) == 2
    d = ScoreDistribution.from_scores('b', [80])
    assert d.mean == 80.0
    assert d.sd == 0.0
    d = ScoreDistribution.from_scores('c', [10, 20, 30])
    assert d.mean == 20.0
    assert d.sd == pytest.approx(math.sqrt(200.0 / 3.0))
    assert d.contains(20.0)
    assert not d.contains(25.0)
    with pytest.raises(StatisticsError, match='empty score list'):
        ScoreDistribution.from_scores('d', [])

def test_distribution_of_against_two_pass():
    '''
    Tests the mean and standard deviation of an example's scores against a
    two-pass computation.
    '''
    rng = numpy.random.default_rng(23)
    values = rng.uniform(0.0, 100.0, size=20).round(1).tolist()
    dataset = make_dataset([([0, 1], [1, 0])], [values])
    dist = distribution_of(dataset['ex0'])
    mean = math.fsum(values) / len(values)
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))
    assert dist.example_id == 'ex0'
    assert dist.raw.tolist() == values
    assert dist.mean == pytest.approx(mean, rel=1e-12)
    assert dist.sd == pytest.approx(sd, rel=1e-12)

def test_identical_scores_have_exact_mean():
    '''
    Tests that averaging identical scores reproduces the score exactly.
    '''
    for value in [0.1, 33.3, 71.23456789, 99.99]:
        d = ScoreDistribution.from_scores('a', [value] * 17)
        assert d.mean == value
        assert d.sd == 0.0

@given(st.lists(scores, min_size=1, max_size=30))
def test_score_distribution_properties(values):
    '''
    Tests that the mean lies within the score range and the standard
    deviation is non-negative.
    '''
    d = ScoreDistribution.from_scores('a', values)
    assert min(values) - 1e-9 <= d.mean <= max(values) + 1e-9
    assert d.sd >= 0.0

def test_pearson_examples():
    '''
    Tests the Pearson correlation on hand-computed examples.
    '''
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(ZeroVarianceError, match='zero variance in x'):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ZeroVarianceError, match='zero variance in y'):
        pearson([1, 2, 3], [5, 5, 5])
    with pytest.raises(StatisticsError, match='length mismatch'):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(StatisticsError):
        pearson([1], [2])

def test_pearson_against_scipy():
    '''
    Tests the Pearson correlation against an independent implementation.
    '''
    rng = numpy.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(3, 50))
        x = rng.normal(size=n)
        y = 0.5 * x + rng.normal(size=n)
        assert pearson(x, y) == pytest.approx(scipy.stats.pearsonr(x, y)[0], abs=1e-12)

@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=30), st.floats(min_value=0.1, max_value=10.0), finite)
def test_pearson_properties(pairs, scale, shift):
    '''
    Tests the symmetry, range and affine invariance of the Pearson
    correlation.
    '''
    x = numpy.array([p[0] for p in pairs])
    y = numpy.array([p[1] for p in pairs])
    if numpy.ptp(x) < 1e-3 or numpy.ptp(y) < 1e-3:
        return
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    assert pearson(y, x) == pytest.approx(r, abs=1e-9)
    assert pearson(scale * x + shift, y) == pytest.approx(r, abs=1e-6)
    assert pearson(-x, y) == pytest.approx(-r, abs=1e-9)

def test_rmse():
    '''
    Tests the root mean squared error.
    '''
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(StatisticsError):
        rmse([], [])

def test_rmse_against_direct_formula():
    '''
    Tests the root mean squared error against its direct formula on seeded
    random vectors.
    '''
    rng = numpy.random.default_rng(21)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        pred = rng.uniform(0.0, 100.0, size=n)
        target = rng.uniform(0.0, 100.0, size=n)
        expected = math.sqrt(math.fsum((p - t) ** 2 for p, t in zip(pred.tolist(), target.tolist())) / n)
        assert rmse(pred, target) == pytest.approx(expected, rel=1e-12, abs=1e-10)

def test_accuracy_within_sigma():
    '''
    Tests the within-one-standard-deviation accuracy, boundary included.
    '''
    dists = {'a': ScoreDistribution.from_scores('a', [50, 70])}
    assert accuracy_within_sigma({'a': 60.0}, dists) == 1.0
    assert accuracy_within_sigma({'a': 70.0}, dists) == 1.0
    assert accuracy_within_sigma({'a': 71.0}, dists) == 0.0
    dists['b'] = ScoreDistribution.from_scores('b', [40, 40])
    assert accuracy_within_sigma({'a': 65.0, 'b': 41.0}, dists) == 0.5
    assert accuracy_within_sigma({'a': 65.0, 'b': 40.0}, dists) == 1.0
    with pytest.raises(StatisticsError, match='missing score distribution'):
        accuracy_within_sigma({'c': 1.0}, dists)

def test_density_weights():
    '''
    Tests density weights on hand-computed examples.
    '''
    assert list(density_weights([30, 31, 32, 34])) == pytest.approx([1.0] * 4)
    weights = density_weights([10, 10, 10, 90], bin_width=5, epsilon=0)
    assert list(weights) == pytest.approx([2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 2.0])
    assert density_weights([100.0, 0.0]).tolist() == pytest.approx([1.0, 1.0])
    with pytest.raises(StatisticsError):
        density_weights([])
    with pytest.raises(StatisticsError):
        density_weights([101.0])

def test_density_weights_against_bin_counts():
    '''
    Tests density weights against a per-value count of the values sharing its
    bin, on seeded random inputs.
    '''
    rng = numpy.random.default_rng(22)
    for trial in range(100):
        bin_width = [2.5, 5.0, 7.0, 10.0][trial % 4]
        epsilon = [0.0, 0.5, 1.0][trial % 3]
        means = rng.uniform(0.0, 100.0, size=int(rng.integers(1, 80))).tolist()
        if trial % 5 == 0:
            means.append(100.0)
        n_bins = math.ceil(100.0 / bin_width)
        bin_of = lambda v: min(int(math.floor(v / bin_width)), n_bins - 1)
        raw = [1.0 / (sum(1 for u in means if bin_of(u) == bin_of(v)) + epsilon) for v in means]
        scale = math.fsum(raw) / len(raw)
        expected = [r / scale for r in raw]
        weights = density_weights(means, bin_width=bin_width, epsilon=epsilon)
        assert numpy.allclose(weights, expected, rtol=0.0, atol=1e-10)
        assert abs(float(numpy.mean(weights)) - 1.0) <= 1e-12

@given(st.lists(scores, min_size=1, max_size=40), st.floats(min_value=1.0, max_value=25.0))
def test_density_weights_properties(means, bin_width):
    '''
    Tests that density weights average to one, are positive and do not
    depend on the order of the examples.
    '''
    weights = density_weights(means, bin_width=bin_width)
    assert abs(float(numpy.mean(weights)) - 1.0) <= 1e-12
    assert numpy.all(weights > 0)
    order = numpy.argsort(means, kind='stable')
    permuted = density_weights(numpy.array(means)[order], bin_width=bin_width)
    assert permuted.tolist() == pytest.approx(weights[order].tolist())

def test_histogram():
    '''
    Tests the half-open bins, underflow and overflow of histograms.
    '''
    hist = histogram([0, 4.9, 5, 9.99, 10, -1, 12], [0, 5, 10])
    assert hist.counts.tolist() == [2, 2]
    assert hist.underflow == 1
    assert hist.overflow == 2
    assert hist.total() == 7
    with pytest.raises(StatisticsError):
        histogram([1], [0])
    with pytest.raises(StatisticsError):
        histogram([1], [0, 5, 5])

@settings(max_examples=50)
@given(st.lists(st.floats(min_value=-20.0, max_value=120.0, allow_nan=False), max_size=50))
def test_histogram_against_scan(values):
    '''
    Tests histograms against a brute-force scan over the bins.
    '''
    edges = numpy.arange(0.0, 105.0, 5.0)
    hist = histogram(values, edges)
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        assert hist.counts[i] == sum(1 for v in values if lo <= v < hi)
    assert hist.total() == len(values)

def test_metric_report():
    '''
    Tests the report combining every metric.
    '''
    dataset = make_dataset([([0, 1], [1, 0])] * 3, [[10, 30], [50, 50], [80, 100]])
    dists = distributions(dataset)
    report = metric_report({'ex0': 20.0, 'ex1': 55.0, 'ex2': 90.0}, dists)
    assert report.n == 3
    assert report.pearson == pytest.approx(pearson([20, 55, 90], [20, 50, 90]))
    assert report.accuracy == pytest.approx(2.0 / 3.0)
    assert report.rmse == pytest.approx(math.sqrt(25.0 / 3.0))
    assert set(report.to_dict()) == {'pearson', 'avg_pearson_mean', 'avg_pearson_sd', 'accuracy', 'rmse', 'n'}

def test_system_pearson():
    '''
    Tests the correlation of per-system averages.
    '''
    dataset = make_dataset([([0, 1], [1, 0])] * 4, [[10], [20], [60], [90]], systems=['a', 'a', 'b', 'c'])
    r = system_pearson({'ex0': 0.0, 'ex1': 30.0, 'ex2': 50.0, 'ex3': 100.0}, dataset)
    assert r == pytest.approx(pearson([15, 50, 100], [15, 60, 90]))

def test_upper_bound_zero_noise():
    '''
    Tests that listeners who agree perfectly give an upper bound of exactly 1.
    '''
    dataset, _ = generate_synthetic(world(**ZERO_NOISE_WORLD))
    ub = listener_split_upper_bound(dataset, n_trials=10)
    assert ub.pearson_mean == 1.0
    assert ub.pearson_sd == 0.0
    assert ub.rmse == 0.0
    assert ub.accuracy == 1.0

def test_upper_bound_determinism():
    '''
    Tests that trial results depend only on the seed and the trial index.
    '''
    dataset, _ = generate_synthetic(world(n_examples=100))
    a = listener_split_upper_bound(dataset, n_trials=20, rng_seed=4)
    b = listener_split_upper_bound(dataset, n_trials=20, rng_seed=4, jobs=4)
    c = listener_split_upper_bound(dataset, n_trials=1, rng_seed=4)
    assert a.to_dict() == b.to_dict()
    assert a.trials[0] == c.trials[0]
    assert a.trials[:5] == listener_split_upper_bound(dataset, n_trials=5, rng_seed=4).trials

def test_upper_bound_decreases_with_noise():
    '''
    Tests that noisier listeners agree less.
    '''
    bounds = []
    for noise in [5.0, 15.0, 30.0]:
        dataset, _ = generate_synthetic(world(n_examples=300, listener_noise_sd=noise))
        bounds.append(listener_split_upper_bound(dataset, n_trials=20))
    for quieter, noisier in zip(bounds, bounds[1:]):
        assert quieter.pearson_mean - quieter.pearson_sd > noisier.pearson_mean + noisier.pearson_sd

def test_upper_bound_requires_two_listeners():
    '''
    Tests that single-listener examples cannot be split.
    '''
    dataset = make_dataset([([0, 1], [1, 0])] * 2, [[10, 20], [30]])
    with pytest.raises(StatisticsError, match='fewer than 2 listener scores'):
        listener_split_upper_bound(dataset)

def test_upper_bound_matches_simulation():
    '''
    Tests the upper bound against a Monte-Carlo simulation of the same
    listener model, drawing fresh listeners for every realization.
    '''
    config = world(n_examples=500, n_listeners=20, listener_bias_sd=5.0, listener_noise_sd=15.0)
    dataset, truth = generate_synthetic(config)
    ub = listener_split_upper_bound(dataset, n_trials=50)
    latent = numpy.array([truth[i] for i in dataset.ids()])
    rng = numpy.random.default_rng(12345)
    simulated = []
    for _ in range(200):
        biases = rng.normal(0.0, config.listener_bias_sd, size=config.n_listeners)
        noise = rng.normal(0.0, config.listener_noise_sd, size=(latent.shape[0], config.n_listeners))
        values = numpy.clip(latent[:, None] + biases[None, :] + noise, 0.0, 100.0)
        order = numpy.argsort(rng.random(values.shape), axis=1)
        shuffled = numpy.take_along_axis(values, order, axis=1)
        half = config.n_listeners // 2
        simulated.append(numpy.corrcoef(shuffled[:, :half].mean(axis=1), shuffled[:, half:].mean(axis=1))[0, 1])
    assert abs(ub.pearson_mean - numpy.mean(simulated)) <= 2.0 * numpy.std(simulated)

def test_mean_scores():
    '''
    Tests the per-example mean scores of a dataset.
    '''
    dataset = make_dataset([([0, 1], [1, 0])] * 2, [[10, 20], [30]])
    assert mean_scores(dataset).tolist() == [15.0, 30.0]
