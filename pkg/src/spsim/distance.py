'''
Contains distance metrics between speaker embeddings and the baseline
analysis correlating embedding distances with averaged listener scores.
'''

from __future__ import annotations

import enum
import numpy

from typing import Any

from .errors import ConfigError, DimensionError, StatisticsError
from .example import EvaluationDataset
from .stats import mean_scores, pearson


class DistanceMetric(enum.Enum):
    '''
    The supported distances between two embeddings.
    '''
    EUCLIDEAN = 'euclidean'
    COSINE = 'cosine'

    @staticmethod
    def parse(name: str) -> DistanceMetric:
        '''
        Returns the metric with the specified (case-insensitive) name.
        '''
        for metric in DistanceMetric:
            if metric.value == str(name).lower():
                return metric
        valid = ', '.join(m.value for m in DistanceMetric)
        raise ConfigError(f'unknown metric "{name}" (valid values: {valid})')


def check_pair(a: Any, b: Any) -> tuple[numpy.ndarray, numpy.ndarray]:
    a = numpy.asarray(a, dtype=numpy.float64)
    b = numpy.asarray(b, dtype=numpy.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f'dimension mismatch: {a.shape} != {b.shape}')
    return a, b


def euclidean(a: Any, b: Any) -> float:
    '''
    Returns the L2 norm of `a - b`.
    '''
    a, b = check_pair(a, b)
    return float(numpy.linalg.norm(a - b))


def cosine_distance(a: Any, b: Any) -> float:
    '''
    Returns `1 - cos(a, b)`, within [0, 2]. Zero-norm vectors are rejected.
    '''
    a, b = check_pair(a, b)
    na = float(numpy.linalg.norm(a))
    nb = float(numpy.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise StatisticsError('cosine distance is undefined for zero-norm vectors')
    cos = float(numpy.dot(a / na, b / nb))
    return min(2.0, max(0.0, 1.0 - cos))


def distance(metric: DistanceMetric, a: Any, b: Any) -> float:
    '''
    Returns the distance between two vectors under the specified metric.
    '''
    if metric is DistanceMetric.EUCLIDEAN:
        return euclidean(a, b)
    return cosine_distance(a, b)


def normalized(v: numpy.ndarray) -> numpy.ndarray:
    norm = float(numpy.linalg.norm(v))
    if norm == 0.0:
        raise StatisticsError('cannot length-normalize a zero-norm vector')
    return v / norm


def distances(dataset: EvaluationDataset, metric: DistanceMetric, normalize: bool = False) -> numpy.ndarray:
    '''
    Returns the source/reference distance of every example of the dataset. If
    `normalize` is set, embeddings are length-normalized first.
    '''
    res = []
    for example_id in dataset.ids():
        source, reference = dataset.pair(example_id)
        if normalize:
            source, reference = normalized(source), normalized(reference)
        res.append(distance(metric, source, reference))
    return numpy.array(res, dtype=numpy.float64)


def baseline_correlation(dataset: EvaluationDataset, metric: DistanceMetric, normalize: bool = False) -> float:
    '''
    Returns the Pearson correlation between per-example embedding distances and
    per-example averaged listener scores. Distances decrease as similarity
    grows, so useful embeddings yield negative values.
    '''
    if len(dataset) < 2:
        raise StatisticsError('baseline correlation requires at least 2 examples')
    return pearson(distances(dataset, metric, normalize), mean_scores(dataset))
