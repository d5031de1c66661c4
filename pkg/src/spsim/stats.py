'''
Contains statistics over listener score distributions: aggregation,
correlation and error metrics, density weights, the listener-split upper
bound, and histograms.
'''

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import numpy

from typing import Any, Iterable, Optional

from .errors import StatisticsError, ZeroVarianceError
from .example import EvaluationDataset, EvaluationExample, SCORE_MAX, SCORE_MIN

logger = logging.getLogger(__name__)


@dataclasses.dataclass(eq=False)
class ScoreDistribution:
    '''
    The distribution of listener scores of a single example. The `sd` field is
    the population standard deviation (division by the number of scores).
    '''

    example_id: str
    raw: numpy.ndarray
    mean: float
    sd: float

    def __len__(self) -> int:
        return int(self.raw.shape[0])

    def contains(self, score: float) -> bool:
        '''
        Returns whether the specified score is one of the raw scores.
        '''
        return bool(numpy.any(self.raw == score))

    @staticmethod
    def from_scores(example_id: str, scores: Iterable[float]) -> ScoreDistribution:
        '''
        Creates a new distribution from raw listener scores.
        '''
        raw = numpy.array(list(scores), dtype=numpy.float64)
        if raw.shape[0] < 1:
            raise StatisticsError(f'example "{example_id}" has an empty score list')
        mean = stable_mean(raw)
        sd = math.sqrt(float(numpy.mean((raw - mean) ** 2)))
        raw.setflags(write=False)
        return ScoreDistribution(example_id=example_id, raw=raw, mean=mean, sd=sd)


@dataclasses.dataclass
class MetricReport:
    '''
    The metrics of a set of predictions against averaged listener scores. The
    `pearson` field is `None` when the correlation is undefined (a degenerate
    fold).
    '''

    pearson: Optional[float]
    avg_pearson_mean: Optional[float]
    avg_pearson_sd: Optional[float]
    accuracy: float
    rmse: float
    n: int

    def to_dict(self) -> dict[str, Any]:
        '''
        Converts the report into a dictionary with fixed key names.
        '''
        return {
            'pearson': self.pearson,
            'avg_pearson_mean': self.avg_pearson_mean,
            'avg_pearson_sd': self.avg_pearson_sd,
            'accuracy': self.accuracy,
            'rmse': self.rmse,
            'n': self.n
        }


@dataclasses.dataclass
class UpperBoundConfig:
    '''
    Parameters of the listener-split upper bound procedure.
    '''

    n_trials: int = 100
    rng_seed: int = 0
    jobs: int = 1


@dataclasses.dataclass
class UpperBound:
    '''
    The result of the listener-split upper bound procedure.
    '''

    pearson_mean: float
    pearson_sd: float
    accuracy: float
    rmse: float
    n_trials: int
    trials: list[float] = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            'pearson_mean': self.pearson_mean,
            'pearson_sd': self.pearson_sd,
            'accuracy': self.accuracy,
            'rmse': self.rmse,
            'n_trials': self.n_trials
        }


@dataclasses.dataclass
class Histogram:
    '''
    Counts of values per half-open bin `[edges[i], edges[i + 1])`, with values
    outside the covered range reported separately.
    '''

    edges: numpy.ndarray
    counts: numpy.ndarray
    underflow: int
    overflow: int

    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def stable_mean(values: numpy.ndarray) -> float:
    '''
    Returns the arithmetic mean of the values, computed relative to the first
    value. The mean of identical values is exactly that value.
    '''
    values = numpy.asarray(values, dtype=numpy.float64)
    shift = values[0]
    return float(shift + numpy.mean(values - shift))


def as_vector(values: Any, name: str) -> numpy.ndarray:
    vector = numpy.asarray(values, dtype=numpy.float64)
    if vector.ndim != 1:
        raise StatisticsError(f'{name} must be a one-dimensional vector')
    if not numpy.all(numpy.isfinite(vector)):
        raise StatisticsError(f'{name} contains non-finite values')
    return vector


def distribution_of(example: EvaluationExample) -> ScoreDistribution:
    '''
    Returns the listener score distribution of an example.
    '''
    return ScoreDistribution.from_scores(example.example_id, example.score_values())


def distributions(dataset: EvaluationDataset) -> dict[str, ScoreDistribution]:
    '''
    Returns the score distribution of every example of a dataset, keyed by
    example id in dataset order.
    '''
    return {e.example_id: distribution_of(e) for e in dataset}


def mean_scores(dataset: EvaluationDataset) -> numpy.ndarray:
    '''
    Returns the averaged listener score of every example of a dataset.
    '''
    return numpy.array([distribution_of(e).mean for e in dataset], dtype=numpy.float64)


def discrepancies(dataset: EvaluationDataset) -> numpy.ndarray:
    '''
    Returns the differences between each example's mean score and each of its
    individual listener scores, over the whole dataset.
    '''
    res = []
    for e in dataset:
        dist = distribution_of(e)
        res.append(dist.mean - dist.raw)
    if not res: return numpy.zeros(0)
    return numpy.concatenate(res)


def pearson(x: Any, y: Any) -> float:
    '''
    Returns the product-moment correlation between two vectors. A constant
    vector has no defined correlation and raises a `ZeroVarianceError`.
    '''
    x = as_vector(x, 'x')
    y = as_vector(y, 'y')
    if x.shape[0] != y.shape[0]:
        raise StatisticsError(f'length mismatch: {x.shape[0]} != {y.shape[0]}')
    if x.shape[0] < 2:
        raise StatisticsError('pearson correlation requires at least 2 values')
    dx = x - stable_mean(x)
    dy = y - stable_mean(y)
    sxx = float(numpy.dot(dx, dx))
    syy = float(numpy.dot(dy, dy))
    if sxx == 0.0:
        raise ZeroVarianceError('zero variance in x')
    if syy == 0.0:
        raise ZeroVarianceError('zero variance in y')
    r = float(numpy.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def rmse(pred: Any, target: Any) -> float:
    '''
    Returns the root mean squared error between predictions and targets.
    '''
    pred = as_vector(pred, 'pred')
    target = as_vector(target, 'target')
    if pred.shape[0] != target.shape[0]:
        raise StatisticsError(f'length mismatch: {pred.shape[0]} != {target.shape[0]}')
    if pred.shape[0] == 0:
        raise StatisticsError('rmse requires at least 1 value')
    return math.sqrt(float(numpy.mean((pred - target) ** 2)))


def accuracy_within_sigma(preds: dict[str, float], dists: dict[str, ScoreDistribution]) -> float:
    '''
    Returns the fraction of predictions lying within one standard deviation of
    their example's mean score (boundary included). Examples whose scores are
    all equal only count as correct when predicted exactly.
    '''
    if not preds:
        raise StatisticsError('accuracy requires at least 1 prediction')
    correct = 0
    for example_id, value in preds.items():
        if not example_id in dists:
            raise StatisticsError(f'missing score distribution for prediction "{example_id}"')
        dist = dists[example_id]
        if abs(value - dist.mean) <= dist.sd: correct += 1
    return correct / len(preds)


def density_weights(means: Any, bin_width: float = 5.0, epsilon: float = 1.0) -> numpy.ndarray:
    '''
    Returns per-example weights inversely proportional to the density of the
    target scores: `C / (count(bin of mean) + epsilon)` over bins of width
    `bin_width` covering [0, 100], with `C` chosen so that the weights average
    to 1.
    '''
    means = as_vector(means, 'means')
    if means.shape[0] == 0:
        raise StatisticsError('density weights require at least 1 value')
    if not bin_width > 0:
        raise StatisticsError(f'bin_width must be positive, got {bin_width}')
    if not epsilon >= 0:
        raise StatisticsError(f'epsilon must be non-negative, got {epsilon}')
    if numpy.any(means < SCORE_MIN) or numpy.any(means > SCORE_MAX):
        raise StatisticsError('means must lie within [0, 100]')
    n_bins = int(math.ceil((SCORE_MAX - SCORE_MIN) / bin_width))
    bins = numpy.minimum(numpy.floor((means - SCORE_MIN) / bin_width).astype(int), n_bins - 1)
    counts = numpy.bincount(bins, minlength=n_bins)
    raw = 1.0 / (counts[bins] + epsilon)
    return raw / numpy.mean(raw)


def histogram(values: Any, bin_edges: Any) -> Histogram:
    '''
    Counts values per half-open bin `[e_i, e_{i+1})`. Values below the first
    edge or at/above the last edge are counted as underflow/overflow.
    '''
    values = as_vector(values, 'values')
    edges = as_vector(bin_edges, 'bin_edges')
    if edges.shape[0] < 2:
        raise StatisticsError('histogram requires at least 2 bin edges')
    if numpy.any(numpy.diff(edges) <= 0):
        raise StatisticsError('bin edges must be strictly increasing')
    index = numpy.searchsorted(edges, values, side='right') - 1
    n_bins = edges.shape[0] - 1
    inside = (index >= 0) & (index < n_bins)
    counts = numpy.bincount(index[inside], minlength=n_bins)
    return Histogram(
        edges     = edges,
        counts    = counts,
        underflow = int(numpy.sum(index < 0)),
        overflow  = int(numpy.sum(index >= n_bins))
    )


def metric_report(preds: dict[str, float], dists: dict[str, ScoreDistribution]) -> MetricReport:
    '''
    Computes the Pearson correlation, accuracy and RMSE of predictions against
    the mean scores of their distributions.
    '''
    ids = list(preds)
    for i in ids:
        if not i in dists:
            raise StatisticsError(f'missing score distribution for prediction "{i}"')
    values = [preds[i] for i in ids]
    means = [dists[i].mean for i in ids]
    r = pearson(values, means)
    return MetricReport(
        pearson          = r,
        avg_pearson_mean = r,
        avg_pearson_sd   = 0.0,
        accuracy         = accuracy_within_sigma(preds, dists),
        rmse             = rmse(values, means),
        n                = len(ids)
    )


def system_pearson(preds: dict[str, float], dataset: EvaluationDataset) -> float:
    '''
    Returns the Pearson correlation between per-system averaged predictions and
    per-system averaged mean scores.
    '''
    by_system = {}
    for example_id, value in preds.items():
        e = dataset.example(example_id)
        by_system.setdefault(e.system_id, []).append((value, distribution_of(e).mean))
    systems = sorted(by_system)
    pred_means = [numpy.mean([p for p, _ in by_system[s]]) for s in systems]
    score_means = [numpy.mean([m for _, m in by_system[s]]) for s in systems]
    return pearson(pred_means, score_means)


def trial_seed(rng_seed: int, index: int) -> numpy.random.Generator:
    '''
    Returns the generator of the `index`-th trial (or fold) derived from a base
    seed. The generator depends only on the pair, never on the trial count.
    '''
    return numpy.random.default_rng(numpy.random.SeedSequence([rng_seed, index]))


def split_half_trial(score_lists: list[numpy.ndarray], ids: list[str], rng: numpy.random.Generator) -> tuple[float, float, float]:
    '''
    Runs a single listener-split trial, returning its `(pearson, accuracy,
    rmse)`. Each example's listeners are shuffled and split in two groups,
    the first of which gets the extra listener when the count is odd.
    '''
    means_a = []
    means_b = []
    dists_b = {}
    for example_id, scores in zip(ids, score_lists):
        perm = rng.permutation(scores.shape[0])
        half = (scores.shape[0] + 1) // 2
        group_a = scores[perm[:half]]
        group_b = ScoreDistribution.from_scores(example_id, scores[perm[half:]])
        means_a.append(stable_mean(group_a))
        means_b.append(group_b.mean)
        dists_b[example_id] = group_b
    preds = dict(zip(ids, means_a))
    return pearson(means_a, means_b), accuracy_within_sigma(preds, dists_b), rmse(means_a, means_b)


def listener_split_upper_bound(dataset: EvaluationDataset, n_trials: int = 100, rng_seed: int = 0, jobs: int = 1) -> UpperBound:
    '''
    Estimates how well listeners agree with each other: in each trial every
    example's listeners are randomly split into two groups, and the group-A
    mean scores are compared with the group-B mean scores (Pearson), used as
    predictions against the group-B distributions (accuracy), and compared by
    RMSE. Returns the mean and standard deviation of the Pearson correlation
    over trials, and the mean accuracy and RMSE.

    Trial `t` always uses the generator derived from `(rng_seed, t)`, so its
    result does not depend on `n_trials` or on `jobs`.
    '''
    if not isinstance(n_trials, int) or n_trials < 1:
        raise StatisticsError(f'n_trials must be at least 1, got {n_trials!r}')
    ids = dataset.ids()
    score_lists = [e.score_values() for e in dataset]
    for example_id, scores in zip(ids, score_lists):
        if scores.shape[0] < 2:
            raise StatisticsError(f'example "{example_id}" has fewer than 2 listener scores')
    run = lambda t: split_half_trial(score_lists, ids, trial_seed(rng_seed, t))
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(n_trials)))
    else:
        results = [run(t) for t in range(n_trials)]
    pearsons = numpy.array([r[0] for r in results])
    logger.debug('listener split: %d trials, pearson %.4f', n_trials, float(numpy.mean(pearsons)))
    return UpperBound(
        pearson_mean = float(numpy.mean(pearsons)),
        pearson_sd   = float(numpy.std(pearsons)),
        accuracy     = float(numpy.mean([r[1] for r in results])),
        rmse         = float(numpy.mean([r[2] for r in results])),
        n_trials     = n_trials,
        trials       = [float(p) for p in pearsons]
    )
