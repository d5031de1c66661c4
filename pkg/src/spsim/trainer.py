'''
Contains the regression model predicting averaged listener scores from a pair
of speaker embeddings, its training loop, the cross-validation driver and the
comparison tables built on top of it.
'''

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import logging
import math
import numpy
import os
import pandas

from typing import Any, Callable, Iterable, Optional, Protocol, Union

from .distance import DistanceMetric, baseline_correlation
from .errors import ConfigError, DatasetError, DimensionError, NumericalError, StatisticsError, ZeroVarianceError
from .example import EvaluationDataset, SCORE_MAX, SCORE_MIN
from .network import AdamConfig, AdamState, DenseNet, LossSpec, adam_step, batch_loss
from .stats import (
    MetricReport,
    ScoreDistribution,
    UpperBoundConfig,
    accuracy_within_sigma,
    density_weights,
    distributions,
    listener_split_upper_bound,
    pearson,
    rmse,
    system_pearson
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FEATURES = ('concat', 'absdiff', 'sqdiff', 'product')
GROUPINGS = ('example', 'system')


@dataclasses.dataclass
class NetConfig:
    '''
    The architecture of the regressor: two fully connected layers, the first
    followed by a leaky ReLU and dropout. The input is built from the source
    and reference embeddings by the listed `features`:
      * concat
        Both embeddings, source first.
      * absdiff
        The elementwise absolute difference.
      * sqdiff
        The elementwise squared difference.
      * product
        The elementwise product.
    '''

    hidden: int = 128
    slope: float = 0.01
    dropout: float = 0.2
    features: list[str] = dataclasses.field(default_factory=lambda: ['concat', 'absdiff'])

    def __post_init__(self):
        if not isinstance(self.hidden, int) or self.hidden < 1:
            raise ConfigError(f'hidden must be an integer of at least 1, got {self.hidden!r}')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f'dropout must lie in [0, 1), got {self.dropout!r}')
        if not self.features:
            raise ConfigError('at least one input feature is required')
        for f in self.features:
            if not f in FEATURES:
                raise ConfigError(f'unknown feature "{f}" (valid values: {", ".join(FEATURES)})')

    def input_dim(self, embedding_dim: int) -> int:
        '''
        Returns the network input dimension for embeddings of the specified
        dimension.
        '''
        return sum(2 * embedding_dim if f == 'concat' else embedding_dim for f in self.features)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class TrainConfig:
    '''
    Optimization parameters. Early stopping holds out `validation_fraction`
    of the training examples and stops once the validation loss has not
    improved for `patience` epochs; the best parameters are then restored.
    '''

    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f'lr must be positive, got {self.lr!r}')
        for name in ['batch_size', 'patience']:
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f'{name} must be an integer of at least 1, got {getattr(self, name)!r}')
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f'epochs must be a non-negative integer, got {self.epochs!r}')
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f'validation_fraction must lie in [0, 1), got {self.validation_fraction!r}')

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class CvConfig:
    '''
    Parameters of cross-validation. `grouping` is either `example` (folds of
    individual examples) or `system` (all examples of a system share a fold).
    '''

    n_folds: int = 10
    grouping: str = 'example'
    rng_seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if not isinstance(self.n_folds, int) or self.n_folds < 2:
            raise ConfigError(f'n_folds must be an integer of at least 2, got {self.n_folds!r}')
        if not self.grouping in GROUPINGS:
            raise ConfigError(f'unknown grouping "{self.grouping}" (valid values: {", ".join(GROUPINGS)})')


@dataclasses.dataclass
class CurvePoint:
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None


@dataclasses.dataclass
class Prediction:
    '''
    A predicted similarity score. `piece` is the piece index for predictions
    made in sub-utterance mode, and `fold` the cross-validation fold the
    prediction was made in.
    '''

    example_id: str
    value: float
    fold: Optional[int] = None
    piece: Optional[int] = None

    def key(self) -> str:
        '''
        Returns the identifier of the predicted unit.
        '''
        if self.piece is None: return self.example_id
        return f'{self.example_id}/piece{self.piece:03d}'


class Predictor(Protocol):
    def predict(self, dataset: EvaluationDataset, ids: Iterable[str], pieces: bool = False) -> list[Prediction]: ...


@dataclasses.dataclass
class Rows:
    '''
    The training rows of a set of examples: one row per unit (utterance or
    piece), or one row per unit and listener score for single-score losses.
    '''

    example_ids: list[str]
    inputs: numpy.ndarray
    targets: numpy.ndarray
    sds: numpy.ndarray
    weights: Optional[numpy.ndarray] = None

    def __len__(self) -> int:
        return len(self.example_ids)

    def take(self, index: numpy.ndarray) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray, Optional[numpy.ndarray]]:
        weights = None if self.weights is None else self.weights[index]
        return self.inputs[index], self.targets[index], self.sds[index], weights


def featurize(source: Any, reference: Any, features: list[str]) -> numpy.ndarray:
    '''
    Builds the regressor input from a source and a reference embedding (or
    from batches of them, one per row).
    '''
    s = numpy.asarray(source, dtype=numpy.float64)
    r = numpy.asarray(reference, dtype=numpy.float64)
    if s.shape != r.shape:
        raise DimensionError(f'dimension mismatch: {s.shape} != {r.shape}')
    parts = []
    for f in features:
        if f == 'concat':
            parts.extend([s, r])
        elif f == 'absdiff':
            parts.append(numpy.abs(s - r))
        elif f == 'sqdiff':
            parts.append((s - r) ** 2)
        elif f == 'product':
            parts.append(s * r)
        else:
            raise ConfigError(f'unknown feature "{f}" (valid values: {", ".join(FEATURES)})')
    return numpy.concatenate(parts, axis=-1)


def unit_pairs(dataset: EvaluationDataset, example_id: str, pieces: bool) -> list[tuple[Optional[int], numpy.ndarray, numpy.ndarray]]:
    '''
    Returns the `(piece index, source, reference)` units of an example: the
    utterance pair itself, or every piece pair when `pieces` is set.
    '''
    if not pieces:
        source, reference = dataset.pair(example_id)
        return [(None, source, reference)]
    if not dataset.has_pieces():
        raise DatasetError('dataset has no pieces')
    dataset.example(example_id)
    return [(i, p.source.vector, p.reference.vector) for i, p in enumerate(dataset.pieces[example_id])]


def build_rows(
    dataset: EvaluationDataset,
    ids: list[str],
    loss: LossSpec,
    features: list[str],
    dists: dict[str, ScoreDistribution],
    pieces: bool = False) -> Rows:
    '''
    Builds the training rows of the specified examples.
    '''
    example_ids, inputs, targets, sds, weights = [], [], [], [], []
    for example_id in ids:
        dist = dists[example_id]
        if loss.kind == 'wmse':
            if loss.weights is None or not example_id in loss.weights:
                raise StatisticsError(f'missing density weight for example "{example_id}"')
            weight = loss.weights[example_id]
        else:
            weight = 1.0
        for _, source, reference in unit_pairs(dataset, example_id, pieces):
            x = featurize(source, reference, features)
            values = dist.raw if loss.is_single() else [dist.mean]
            for value in values:
                example_ids.append(example_id)
                inputs.append(x)
                targets.append(value)
                sds.append(dist.sd)
                weights.append(weight)
    return Rows(
        example_ids = example_ids,
        inputs      = numpy.array(inputs, dtype=numpy.float64),
        targets     = numpy.array(targets, dtype=numpy.float64),
        sds         = numpy.array(sds, dtype=numpy.float64),
        weights     = numpy.array(weights, dtype=numpy.float64) if loss.kind == 'wmse' else None
    )


@dataclasses.dataclass(eq=False)
class RegressionModel:
    '''
    A trained similarity regressor together with everything needed to
    reproduce or resume it: its configuration, its loss, its training curve,
    the optimizer state and the fingerprint of the training dataset.
    '''

    net: DenseNet
    net_config: NetConfig = dataclasses.field(default_factory=NetConfig)
    train_config: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    loss: LossSpec = dataclasses.field(default_factory=LossSpec)
    curve: list[CurvePoint] = dataclasses.field(default_factory=list)
    optimizer_state: AdamState = dataclasses.field(default_factory=AdamState)
    dataset_fingerprint: str = ''
    input_mean: Optional[numpy.ndarray] = None
    input_scale: Optional[numpy.ndarray] = None

    @staticmethod
    def from_dict(rep: dict) -> RegressionModel:
        '''
        Creates a model from its checkpoint representation.
        '''
        if rep.get('version') != CHECKPOINT_VERSION:
            raise DatasetError(f'unsupported checkpoint version {rep.get("version")!r}')
        config = rep['training_config']
        loss = config['loss']
        return RegressionModel(
            net                 = DenseNet.from_dict(rep),
            net_config          = NetConfig(**config['network']),
            train_config        = TrainConfig(**config['training']),
            loss                = LossSpec(**loss),
            optimizer_state     = AdamState.from_dict(rep['optimizer_state']),
            dataset_fingerprint = rep['dataset_fingerprint'],
            input_mean          = None if rep.get('input_mean') is None else numpy.array(rep['input_mean'], dtype=numpy.float64),
            input_scale         = None if rep.get('input_scale') is None else numpy.array(rep['input_scale'], dtype=numpy.float64)
        )

    def predict(self, dataset: EvaluationDataset, ids: Iterable[str], pieces: bool = False) -> list[Prediction]:
        '''
        Predicts the similarity score of every unit of the specified examples,
        in the order given. Outputs are clamped to [0, 100].
        '''
        keys, inputs = [], []
        for example_id in ids:
            for piece, source, reference in unit_pairs(dataset, example_id, pieces):
                keys.append((example_id, piece))
                inputs.append(featurize(source, reference, self.net_config.features))
        if not keys: return []
        values = self.raw_outputs(numpy.array(inputs))
        values = numpy.clip(values, SCORE_MIN, SCORE_MAX)
        return [Prediction(example_id=e, value=float(v), piece=p) for (e, p), v in zip(keys, values)]

    def raw_outputs(self, inputs: numpy.ndarray) -> numpy.ndarray:
        '''
        Returns the unclamped inference-mode outputs for a batch of inputs,
        standardized with the training statistics when the model has them.
        '''
        if inputs.shape[-1] != self.net.input_dim:
            raise DimensionError(f'dimension mismatch: model expects {self.net.input_dim} inputs, got {inputs.shape[-1]}')
        if not self.input_mean is None:
            inputs = (inputs - self.input_mean) / self.input_scale
        out, _ = self.net.forward(inputs)
        return out[:, 0]

    def to_dict(self) -> dict:
        '''
        Converts the model into its JSON checkpoint representation.
        '''
        rep = {'version': CHECKPOINT_VERSION}
        rep.update(self.net.to_dict())
        rep['optimizer_state'] = self.optimizer_state.to_dict()
        rep['training_config'] = {
            'network': self.net_config.to_dict(),
            'training': self.train_config.to_dict(),
            'loss': self.loss.to_dict()
        }
        rep['dataset_fingerprint'] = self.dataset_fingerprint
        rep['input_mean'] = None if self.input_mean is None else self.input_mean.tolist()
        rep['input_scale'] = None if self.input_scale is None else self.input_scale.tolist()
        return rep


@dataclasses.dataclass
class MeanPredictor:
    '''
    Predicts the same score for every unit.
    '''

    value: float

    def predict(self, dataset: EvaluationDataset, ids: Iterable[str], pieces: bool = False) -> list[Prediction]:
        res = []
        for example_id in ids:
            for piece, _, _ in unit_pairs(dataset, example_id, pieces):
                res.append(Prediction(example_id=example_id, value=float(self.value), piece=piece))
        return res


def save_checkpoint(model: RegressionModel, path: str):
    '''
    Saves a model to the specified JSON checkpoint file.
    '''
    with open(os.path.expanduser(path), 'w') as f:
        f.write(json.dumps(model.to_dict(), sort_keys=True))


def load_checkpoint(path: str) -> RegressionModel:
    '''
    Loads a model from the specified JSON checkpoint file.
    '''
    full_path = os.path.expanduser(path)
    if not os.path.isfile(full_path):
        raise DatasetError(f'specified path "{path}" does not exist')
    try:
        with open(full_path, 'r', encoding='utf-8') as f:
            rep = json.loads(f.read())
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise DatasetError(f'unable to parse checkpoint "{path}" - {err}')
    try:
        return RegressionModel.from_dict(rep)
    except (AttributeError, KeyError, TypeError, ValueError) as err:
        raise DatasetError(f'malformed checkpoint "{path}" - {err!r}')


def fold_seed(rng_seed: int, index: int) -> int:
    '''
    Derives the model initialization seed of a fold from the plan seed.
    '''
    return int(numpy.random.SeedSequence([rng_seed, index]).generate_state(1)[0])


def bind_loss(loss: LossSpec, dists: dict[str, ScoreDistribution], ids: list[str]) -> LossSpec:
    '''
    Returns the loss with density weights computed from the specified
    (training) examples, if the loss is weighted and not yet bound.
    '''
    if loss.kind != 'wmse' or not loss.weights is None:
        return loss
    means = [dists[i].mean for i in ids]
    weights = density_weights(means, bin_width=loss.bin_width, epsilon=loss.weight_epsilon)
    return loss.bind(dict(zip(ids, (float(w) for w in weights))))


def rows_loss(net: DenseNet, rows: Rows, loss: LossSpec) -> float:
    out, _ = net.forward(rows.inputs)
    value, _ = batch_loss(loss.kind, out[:, 0], rows.targets, rows.sds, rows.weights, loss.epsilon_sd)
    return value


def train(
    dataset: EvaluationDataset,
    train_ids: Iterable[str],
    loss: LossSpec,
    net_config: NetConfig,
    train_config: TrainConfig,
    seed: int,
    pieces: bool = False) -> RegressionModel:
    '''
    Trains a regressor on the specified examples (or on their pieces) and
    returns it. Inputs are standardized with statistics of the fitted rows
    and the output bias starts at the mean training target. For the
    `mahalanobis-single` loss every epoch visits each unit once per listener
    score. Training is deterministic for a given seed.
    '''
    ids = list(train_ids)
    if not ids:
        raise DatasetError('cannot train on an empty set of examples')
    dists = {i: ScoreDistribution.from_scores(i, dataset.example(i).score_values()) for i in ids}
    loss = bind_loss(loss, dists, ids)
    rng = numpy.random.default_rng(seed)
    n_val = min(int(math.floor(train_config.validation_fraction * len(ids))), len(ids) - 1)
    perm = rng.permutation(len(ids))
    val_index = set(int(i) for i in perm[:n_val])
    fit_ids = [i for k, i in enumerate(ids) if not k in val_index]
    val_ids = [i for k, i in enumerate(ids) if k in val_index]
    fit_rows = build_rows(dataset, fit_ids, loss, net_config.features, dists, pieces)
    val_rows = build_rows(dataset, val_ids, loss, net_config.features, dists, pieces) if val_ids else None
    input_mean = fit_rows.inputs.mean(axis=0)
    input_scale = fit_rows.inputs.std(axis=0)
    input_scale[input_scale == 0.0] = 1.0
    fit_rows.inputs = (fit_rows.inputs - input_mean) / input_scale
    if not val_rows is None:
        val_rows.inputs = (val_rows.inputs - input_mean) / input_scale
    net = DenseNet.create(
        dims         = [net_config.input_dim(dataset.dimension()), net_config.hidden, 1],
        activations  = ['leaky_relu', 'identity'],
        rng          = rng,
        dropout_rate = net_config.dropout,
        slope        = net_config.slope
    )
    net.layers[-1].bias[:] = float(numpy.mean(fit_rows.targets))
    adam = train_config.adam()
    state = AdamState()
    curve = []
    best = (math.inf, net.params(), state)
    wait = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(fit_rows))
        total = 0.0
        for start in range(0, len(fit_rows), train_config.batch_size):
            index = order[start:start + train_config.batch_size]
            inputs, targets, sds, weights = fit_rows.take(index)
            out, cache = net.forward(inputs, rng)
            value, grad = batch_loss(loss.kind, out[:, 0], targets, sds, weights, loss.epsilon_sd)
            if not math.isfinite(value):
                bad = numpy.flatnonzero(~numpy.isfinite(out[:, 0]))
                culprit = fit_rows.example_ids[index[bad[0] if bad.size else 0]]
                raise NumericalError(f'non-finite loss at epoch {epoch} (example "{culprit}")')
            grads = net.backward(cache, grad[:, None]).as_dict()
            params, state = adam_step(net.params(), grads, state, adam)
            net.assign(params)
            total += value * index.shape[0]
        train_loss = total / len(fit_rows)
        val_loss = rows_loss(net, val_rows, loss) if not val_rows is None else None
        curve.append(CurvePoint(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        logger.debug('epoch %d: train loss %.6f, validation loss %s', epoch, train_loss, val_loss)
        if val_loss is None: continue
        if val_loss < best[0]:
            best = (val_loss, net.params(), state)
            wait = 0
        else:
            wait += 1
            if wait >= train_config.patience:
                logger.info('early stopping at epoch %d (best validation loss %.6f)', epoch, best[0])
                break
    if not val_rows is None and math.isfinite(best[0]):
        net.assign(best[1])
        state = best[2]
    return RegressionModel(
        net                 = net,
        net_config          = net_config,
        train_config        = train_config,
        loss                = loss,
        curve               = curve,
        optimizer_state     = state,
        dataset_fingerprint = dataset.fingerprint(),
        input_mean          = input_mean,
        input_scale         = input_scale
    )


def predict(model: Predictor, dataset: EvaluationDataset, ids: Iterable[str], pieces: bool = False) -> list[Prediction]:
    '''
    Returns the predictions of a model for the specified examples, in the
    order given.
    '''
    return model.predict(dataset, list(ids), pieces=pieces)


def predict_pair(model: RegressionModel, source: Any, reference: Any) -> float:
    '''
    Returns the clamped predicted similarity score of a single embedding
    pair.
    '''
    x = featurize(source, reference, model.net_config.features)
    value = float(model.raw_outputs(x[None, :])[0])
    return min(SCORE_MAX, max(SCORE_MIN, value))


@dataclasses.dataclass
class CvPlan:
    '''
    An assignment of every example to one of `n_folds` folds.
    '''

    n_folds: int
    grouping: str
    rng_seed: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, k in self.assignment.items() if k == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [i for i, k in self.assignment.items() if k != fold]

    def validate(self, dataset: EvaluationDataset):
        '''
        Checks that the plan assigns every example of the dataset to a valid
        fold and nothing else.
        '''
        for e in dataset:
            if not e.example_id in self.assignment:
                raise DatasetError(f'example "{e.example_id}" has no fold assignment')
        for example_id, k in self.assignment.items():
            dataset.example(example_id)
            if not 0 <= k < self.n_folds:
                raise DatasetError(f'example "{example_id}" is assigned to invalid fold {k}')


def make_plan(dataset: EvaluationDataset, n_folds: int = 10, grouping: str = 'example', rng_seed: int = 0) -> CvPlan:
    '''
    Creates a cross-validation plan. Grouping by example deals a random
    permutation of the examples round-robin, so fold sizes differ by at most
    one. Grouping by system shuffles the systems and assigns each, largest
    first, to the currently smallest fold.
    '''
    config = CvConfig(n_folds=n_folds, grouping=grouping, rng_seed=rng_seed)
    rng = numpy.random.default_rng(rng_seed)
    ids = dataset.ids()
    if grouping == 'example':
        if n_folds > len(ids):
            raise ConfigError(f'cannot split {len(ids)} examples into {n_folds} folds')
        perm = rng.permutation(len(ids))
        folds = numpy.empty(len(ids), dtype=int)
        folds[perm] = numpy.arange(len(ids)) % n_folds
        assignment = {i: int(k) for i, k in zip(ids, folds)}
    else:
        groups = {}
        for e in dataset:
            groups.setdefault(e.system_id, []).append(e.example_id)
        systems = sorted(groups)
        if n_folds > len(systems):
            raise ConfigError(f'cannot split {len(systems)} systems into {n_folds} folds')
        shuffled = [systems[i] for i in rng.permutation(len(systems))]
        shuffled.sort(key=lambda s: -len(groups[s]))
        sizes = [0] * n_folds
        system_fold = {}
        for s in shuffled:
            k = sizes.index(min(sizes))
            system_fold[s] = k
            sizes[k] += len(groups[s])
        assignment = {e.example_id: system_fold[e.system_id] for e in dataset}
    return CvPlan(n_folds=config.n_folds, grouping=config.grouping, rng_seed=rng_seed, assignment=assignment)


@dataclasses.dataclass
class FoldResult:
    '''
    The outcome of one cross-validation fold. A `degenerate` fold had training
    targets without variance; its examples were predicted by the training
    mean instead of a trained model.
    '''

    fold: int
    report: MetricReport
    n_train: int
    degenerate: bool = False
    curve: list[CurvePoint] = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict:
        return {'fold': self.fold, 'n_train': self.n_train, 'degenerate': self.degenerate, 'report': self.report.to_dict()}


@dataclasses.dataclass
class CvResult:
    '''
    The outcome of a cross-validation run: per-fold reports, the report
    pooled over all out-of-fold predictions, and the predictions themselves.
    '''

    folds: list[FoldResult]
    pooled: MetricReport
    predictions: list[Prediction]
    dists: dict[str, ScoreDistribution]
    loss: str
    pieces: bool = False
    system_pearson: Optional[float] = None

    @property
    def per_fold(self) -> list[MetricReport]:
        return [f.report for f in self.folds]

    @property
    def degenerate_folds(self) -> list[int]:
        return [f.fold for f in self.folds if f.degenerate]

    def curves_frame(self) -> pandas.DataFrame:
        '''
        Returns the training curves of every fold as a table with the columns
        `fold`, `epoch`, `train_loss` and `val_loss`.
        '''
        rows = [(f.fold, p.epoch, p.train_loss, p.val_loss) for f in self.folds for p in f.curve]
        return pandas.DataFrame(rows, columns=['fold', 'epoch', 'train_loss', 'val_loss'])

    def predictions_frame(self) -> pandas.DataFrame:
        '''
        Returns every out-of-fold prediction together with the score
        distribution of its example.
        '''
        rows = []
        for p in self.predictions:
            dist = self.dists[p.example_id]
            rows.append((p.key(), p.example_id, p.fold, p.value, dist.mean, dist.sd, abs(p.value - dist.mean) <= dist.sd))
        return pandas.DataFrame(rows, columns=['unit_id', 'example_id', 'fold', 'prediction', 'mean', 'sd', 'within_sigma'])

    def to_dict(self) -> dict:
        return {
            'loss': self.loss,
            'pieces': self.pieces,
            'n_folds': len(self.folds),
            'pooled': self.pooled.to_dict(),
            'per_fold': [f.to_dict() for f in self.folds],
            'degenerate_folds': self.degenerate_folds,
            'system_pearson': self.system_pearson
        }


FitFunction = Callable[[EvaluationDataset, list[str], int], Predictor]


def unit_report(predictions: list[Prediction], dists: dict[str, ScoreDistribution]) -> MetricReport:
    '''
    Computes the metrics of a list of (possibly per-piece) predictions. The
    Pearson correlation is `None` when it is undefined.
    '''
    keys = [p.key() for p in predictions]
    values = {p.key(): p.value for p in predictions}
    unit_dists = {p.key(): dists[p.example_id] for p in predictions}
    means = [unit_dists[k].mean for k in keys]
    try:
        r = pearson([values[k] for k in keys], means)
    except StatisticsError:
        r = None
    return MetricReport(
        pearson          = r,
        avg_pearson_mean = r,
        avg_pearson_sd   = None if r is None else 0.0,
        accuracy         = accuracy_within_sigma(values, unit_dists),
        rmse             = rmse([values[k] for k in keys], means),
        n                = len(keys)
    )


def cross_validate(
    dataset: EvaluationDataset,
    loss: LossSpec,
    net_config: NetConfig,
    train_config: TrainConfig,
    plan: CvPlan,
    jobs: int = 1,
    fit: Optional[FitFunction] = None,
    pieces: bool = False) -> CvResult:
    '''
    Runs cross-validation: for every fold a model is fitted on the other folds
    and predicts the fold's examples. Density weights of weighted losses are
    derived from the training folds only. The pooled report covers the union
    of all out-of-fold predictions; a pooled Pearson correlation that is
    undefined raises a `ZeroVarianceError`.

    `fit` replaces model training (it receives the dataset, the training ids
    and the fold seed). Folds may run on `jobs` threads; results are always
    assembled in fold order.
    '''
    plan.validate(dataset)
    dists = distributions(dataset)
    if fit is None:
        fit = lambda ds, ids, seed: train(ds, ids, loss, net_config, train_config, seed, pieces=pieces)

    def run(k: int) -> tuple[FoldResult, list[Prediction]]:
        test_ids = plan.fold_ids(k)
        train_ids = plan.train_ids(k)
        means = numpy.array([dists[i].mean for i in train_ids])
        logger.info('fold %d: training on %d examples, testing on %d', k, len(train_ids), len(test_ids))
        degenerate = means.shape[0] < 2 or bool(numpy.all(means == means[0]))
        if degenerate:
            logger.warning('fold %d has zero-variance training targets, predicting the training mean', k)
            model = MeanPredictor(float(numpy.mean(means)) if means.shape[0] else 0.0)
        else:
            model = fit(dataset, train_ids, fold_seed(plan.rng_seed, k))
        predictions = model.predict(dataset, test_ids, pieces=pieces)
        for p in predictions: p.fold = k
        curve = model.curve if isinstance(model, RegressionModel) else []
        report = unit_report(predictions, dists)
        logger.info('fold %d: pearson %s, rmse %.4f', k, report.pearson, report.rmse)
        return FoldResult(fold=k, report=report, n_train=len(train_ids), degenerate=degenerate, curve=curve), predictions

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, range(plan.n_folds)))
    else:
        outcomes = [run(k) for k in range(plan.n_folds)]
    folds = [o[0] for o in outcomes]
    predictions = [p for o in outcomes for p in o[1]]
    pooled = unit_report(predictions, dists)
    if pooled.pearson is None:
        raise ZeroVarianceError(f'pooled pearson correlation is undefined over {pooled.n} predictions (zero variance)')
    fold_pearsons = [f.report.pearson for f in folds if not f.report.pearson is None]
    pooled.avg_pearson_mean = float(numpy.mean(fold_pearsons)) if fold_pearsons else None
    pooled.avg_pearson_sd = float(numpy.std(fold_pearsons)) if fold_pearsons else None
    by_example = {}
    for p in predictions:
        by_example.setdefault(p.example_id, []).append(p.value)
    try:
        sys_r = system_pearson({k: float(numpy.mean(v)) for k, v in by_example.items()}, dataset)
    except StatisticsError:
        sys_r = None
    return CvResult(
        folds          = folds,
        pooled         = pooled,
        predictions    = predictions,
        dists          = dists,
        loss           = loss.kind,
        pieces         = pieces,
        system_pearson = sys_r
    )


def evaluate_pieces(
    model_or_config: Union[RegressionModel, NetConfig],
    dataset: EvaluationDataset,
    plan: CvPlan,
    loss: Optional[LossSpec] = None,
    train_config: Optional[TrainConfig] = None,
    jobs: int = 1) -> CvResult:
    '''
    Cross-validates in sub-utterance mode: every piece pair is a training and
    prediction unit inheriting the score distribution of its example, and
    metrics are reported per piece. Folds are assigned at the example level,
    so all pieces of an example share a fold. Passing a trained model skips
    training and only evaluates it fold by fold. The default loss is
    `mahalanobis-single`.
    '''
    if not dataset.has_pieces():
        raise DatasetError('dataset has no pieces')
    plan.validate(dataset)
    loss = LossSpec(kind='mahalanobis-single') if loss is None else loss
    train_config = TrainConfig() if train_config is None else train_config
    if isinstance(model_or_config, RegressionModel):
        model = model_or_config
        return cross_validate(dataset, loss, model.net_config, train_config, plan, jobs=jobs,
            fit=lambda ds, ids, seed: model, pieces=True)
    return cross_validate(dataset, loss, model_or_config, train_config, plan, jobs=jobs, pieces=True)


def report_row(name: str, report: MetricReport) -> dict:
    row = {'name': name}
    row.update({k: v for k, v in report.to_dict().items()})
    return row


def compare_losses(
    dataset: EvaluationDataset,
    kinds: list[str],
    net_config: NetConfig,
    train_config: TrainConfig,
    cv_config: CvConfig,
    upper_bound: Optional[UpperBoundConfig] = None,
    epsilon_sd: float = 1.0) -> tuple[pandas.DataFrame, dict[str, CvResult]]:
    '''
    Cross-validates one model per loss kind on a shared plan and tabulates the
    pooled metrics, followed by an `upper-bound` row computed by listener
    splitting (omitted when `upper_bound` is `None`).
    '''
    plan = make_plan(dataset, cv_config.n_folds, cv_config.grouping, cv_config.rng_seed)
    results = {}
    rows = []
    for kind in kinds:
        result = cross_validate(dataset, LossSpec(kind=kind, epsilon_sd=epsilon_sd), net_config, train_config, plan, jobs=cv_config.jobs)
        results[kind] = result
        rows.append(report_row(kind, result.pooled))
    if not upper_bound is None:
        ub = listener_split_upper_bound(dataset, upper_bound.n_trials, upper_bound.rng_seed, upper_bound.jobs)
        rows.append({
            'name': 'upper-bound',
            'pearson': ub.pearson_mean,
            'avg_pearson_mean': ub.pearson_mean,
            'avg_pearson_sd': ub.pearson_sd,
            'accuracy': ub.accuracy,
            'rmse': ub.rmse,
            'n': len(dataset)
        })
    return pandas.DataFrame(rows), results


def compare_embeddings(
    datasets: dict[str, EvaluationDataset],
    loss: LossSpec,
    net_config: NetConfig,
    train_config: TrainConfig,
    cv_config: CvConfig) -> pandas.DataFrame:
    '''
    Compares several embedding sets (one dataset per backbone, keyed by name)
    by their distance baselines and by the cross-validated performance of the
    same regressor trained on each.
    '''
    rows = []
    for name, dataset in datasets.items():
        plan = make_plan(dataset, cv_config.n_folds, cv_config.grouping, cv_config.rng_seed)
        result = cross_validate(dataset, loss, net_config, train_config, plan, jobs=cv_config.jobs)
        row = report_row(name, result.pooled)
        row['cosine_baseline'] = baseline_correlation(dataset, DistanceMetric.COSINE)
        row['euclidean_baseline'] = baseline_correlation(dataset, DistanceMetric.EUCLIDEAN)
        rows.append(row)
    return pandas.DataFrame(rows)
