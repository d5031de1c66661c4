'''
Contains a minimal dense neural network: forward pass with inverted dropout,
exact backward pass, the regression losses, and the Adam optimizer.
'''

from __future__ import annotations

import copy
import dataclasses
import math
import numpy

from typing import Any, Optional

from .errors import ConfigError, DimensionError, NumericalError, StatisticsError
from .stats import ScoreDistribution

ACTIVATIONS = ('identity', 'leaky_relu', 'relu', 'tanh')
LOSS_KINDS = ('mse', 'wmse', 'mahalanobis', 'mahalanobis-single')


@dataclasses.dataclass(eq=False)
class Layer:
    '''
    A fully connected layer `activation(W x + b)`, where `W` has shape
    `[out, in]`. The `slope` only applies to the `leaky_relu` activation.
    '''

    weight: numpy.ndarray
    bias: numpy.ndarray
    activation: str = 'identity'
    slope: float = 0.01

    def __post_init__(self):
        self.weight = numpy.array(self.weight, dtype=numpy.float64)
        self.bias = numpy.array(self.bias, dtype=numpy.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f'layer weight {self.weight.shape} and bias {self.bias.shape} are incompatible')
        if not self.activation in ACTIVATIONS:
            raise ConfigError(f'unknown activation "{self.activation}" (valid values: {", ".join(ACTIVATIONS)})')

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])

    def activate(self, z: numpy.ndarray) -> numpy.ndarray:
        if self.activation == 'leaky_relu':
            return numpy.where(z > 0, z, self.slope * z)
        if self.activation == 'relu':
            return numpy.maximum(z, 0.0)
        if self.activation == 'tanh':
            return numpy.tanh(z)
        return z

    def derivative(self, z: numpy.ndarray, a: numpy.ndarray) -> numpy.ndarray:
        '''
        Returns the derivative of the activation at pre-activation `z` (with
        activation value `a`). Kinks take the left-hand slope.
        '''
        if self.activation == 'leaky_relu':
            return numpy.where(z > 0, 1.0, self.slope)
        if self.activation == 'relu':
            return numpy.where(z > 0, 1.0, 0.0)
        if self.activation == 'tanh':
            return 1.0 - a * a
        return numpy.ones_like(z)


@dataclasses.dataclass
class Cache:
    '''
    The activation record of a forward pass, consumed by `DenseNet.backward()`.
    `masks[i]` is the (already scaled) dropout mask applied to the output of
    layer `i`, or `None`.
    '''

    inputs: list[numpy.ndarray]
    pre: list[numpy.ndarray]
    post: list[numpy.ndarray]
    masks: list[Optional[numpy.ndarray]]
    squeeze: bool


@dataclasses.dataclass
class Gradients:
    '''
    Gradients of a network output with respect to every parameter and to the
    network input.
    '''

    weights: list[numpy.ndarray]
    biases: list[numpy.ndarray]
    inputs: numpy.ndarray

    def as_dict(self) -> dict[str, numpy.ndarray]:
        '''
        Returns the parameter gradients keyed like `DenseNet.params()`.
        '''
        res = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            res[f'layers.{i}.weight'] = w
            res[f'layers.{i}.bias'] = b
        return res


@dataclasses.dataclass(eq=False)
class DenseNet:
    '''
    A stack of fully connected layers with inverted dropout applied to the
    output of every hidden layer in training mode.
    '''

    layers: list[Layer]
    dropout_rate: float = 0.0

    def __post_init__(self):
        if not self.layers:
            raise DimensionError('a network requires at least one layer')
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise DimensionError(f'layer {i} expects {self.layers[i].in_dim} inputs but layer {i - 1} produces {self.layers[i - 1].out_dim}')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f'dropout_rate must lie in [0, 1), got {self.dropout_rate}')

    @staticmethod
    def create(
        dims: list[int],
        activations: list[str],
        rng: numpy.random.Generator,
        dropout_rate: float = 0.0,
        slope: float = 0.01) -> DenseNet:
        '''
        Creates a randomly initialized network. `dims` lists the input
        dimension followed by every layer's output dimension; `activations`
        has one entry per layer. Weights are drawn from a zero-mean normal
        with standard deviation `sqrt(2 / fan_in)`, biases start at zero.
        '''
        if len(dims) != len(activations) + 1:
            raise DimensionError('dims must have exactly one more entry than activations')
        layers = []
        for fan_in, fan_out, activation in zip(dims[:-1], dims[1:], activations):
            layers.append(Layer(
                weight     = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)),
                bias       = numpy.zeros(fan_out),
                activation = activation,
                slope      = slope
            ))
        return DenseNet(layers=layers, dropout_rate=dropout_rate)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def assign(self, params: dict[str, numpy.ndarray]):
        '''
        Replaces the network parameters with the specified ones.
        '''
        for i, layer in enumerate(self.layers):
            weight = numpy.array(params[f'layers.{i}.weight'], dtype=numpy.float64)
            bias = numpy.array(params[f'layers.{i}.bias'], dtype=numpy.float64)
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise DimensionError(f'parameter shapes of layer {i} do not match')
            layer.weight = weight
            layer.bias = bias

    def backward(self, cache: Cache, upstream: Any) -> Gradients:
        '''
        Propagates the gradient of a scalar objective with respect to the
        network output back to every parameter and to the input. Gradients are
        summed over the batch.
        '''
        batch = cache.inputs[0].shape[0] if cache.inputs else 0
        if len(cache.inputs) != len(self.layers) or cache.inputs[0].shape[1] != self.input_dim:
            raise DimensionError('stale cache: it does not match this network')
        g = numpy.asarray(upstream, dtype=numpy.float64)
        g = g.reshape(batch, self.output_dim)
        weights = [None] * len(self.layers)
        biases = [None] * len(self.layers)
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            if cache.pre[i].shape != (batch, layer.out_dim):
                raise DimensionError('stale cache: it does not match this network')
            if not cache.masks[i] is None:
                g = g * cache.masks[i]
            dz = g * layer.derivative(cache.pre[i], cache.post[i])
            weights[i] = dz.T @ cache.inputs[i]
            biases[i] = dz.sum(axis=0)
            g = dz @ layer.weight
        inputs = g[0] if cache.squeeze else g
        return Gradients(weights=weights, biases=biases, inputs=inputs)

    def copy(self) -> DenseNet:
        return copy.deepcopy(self)

    def forward(self, inputs: Any, rng: Optional[numpy.random.Generator] = None) -> tuple[numpy.ndarray, Cache]:
        '''
        Runs the network on a single input vector or a batch (one row per
        input). Passing a generator selects training mode, in which dropout
        masks are drawn and scaled by `1 / (1 - dropout_rate)`; without one the
        pass is deterministic and applies no mask and no scaling.
        '''
        x = numpy.asarray(inputs, dtype=numpy.float64)
        squeeze = x.ndim == 1
        if squeeze: x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f'input dimension {x.shape[-1]} does not match network input {self.input_dim}')
        cache = Cache(inputs=[], pre=[], post=[], masks=[], squeeze=squeeze)
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if not (numpy.all(numpy.isfinite(layer.weight)) and numpy.all(numpy.isfinite(layer.bias))):
                raise NumericalError(f'non-finite parameter in layer {i}')
            z = h @ layer.weight.T + layer.bias
            a = layer.activate(z)
            mask = None
            if i < last and not rng is None and self.dropout_rate > 0.0:
                mask = (rng.random(a.shape) >= self.dropout_rate) / (1.0 - self.dropout_rate)
            cache.inputs.append(h)
            cache.pre.append(z)
            cache.post.append(a)
            cache.masks.append(mask)
            h = a if mask is None else a * mask
        return (h[0] if squeeze else h), cache

    @staticmethod
    def from_dict(rep: dict) -> DenseNet:
        '''
        Creates a network from its dictionary representation.
        '''
        layers = []
        for weight, bias, activation, slope in zip(rep['weights'], rep['biases'], rep['activations'], rep['slopes']):
            layers.append(Layer(weight=weight, bias=bias, activation=activation, slope=slope))
        net = DenseNet(layers=layers, dropout_rate=float(rep['dropout_rate']))
        if [net.input_dim] + [l.out_dim for l in net.layers] != list(rep['layer_dims']):
            raise DimensionError('layer_dims do not match the stored weights')
        return net

    def params(self) -> dict[str, numpy.ndarray]:
        '''
        Returns the network parameters keyed by path (`layers.<i>.weight`,
        `layers.<i>.bias`).
        '''
        res = {}
        for i, layer in enumerate(self.layers):
            res[f'layers.{i}.weight'] = layer.weight
            res[f'layers.{i}.bias'] = layer.bias
        return res

    def to_dict(self) -> dict:
        '''
        Converts the network into a JSON-serializable dictionary with
        row-major weight arrays.
        '''
        return {
            'layer_dims': [self.input_dim] + [l.out_dim for l in self.layers],
            'activations': [l.activation for l in self.layers],
            'slopes': [float(l.slope) for l in self.layers],
            'dropout_rate': float(self.dropout_rate),
            'weights': [l.weight.tolist() for l in self.layers],
            'biases': [l.bias.tolist() for l in self.layers]
        }


@dataclasses.dataclass
class LossSpec:
    '''
    Describes a regression loss. Supported kinds are:
      * mse
        Squared error against the mean score.
      * wmse
        Squared error weighted per example. When `weights` is `None` the
        trainer derives density weights from the training examples only.
      * mahalanobis
        `|mean - pred| / max(sd, epsilon_sd)`.
      * mahalanobis-single
        The same, against every individual listener score in turn.
    '''

    kind: str = 'mahalanobis'
    epsilon_sd: float = 1.0
    weights: Optional[dict[str, float]] = None
    bin_width: float = 5.0
    weight_epsilon: float = 1.0

    def __post_init__(self):
        if not self.kind in LOSS_KINDS:
            raise ConfigError(f'unknown loss "{self.kind}" (valid values: {", ".join(LOSS_KINDS)})')
        if not self.epsilon_sd > 0:
            raise ConfigError(f'epsilon_sd must be positive, got {self.epsilon_sd}')
        if not self.weights is None and self.kind != 'wmse':
            raise ConfigError(f'per-example weights are only valid for the wmse loss, not "{self.kind}"')

    def bind(self, weights: dict[str, float]) -> LossSpec:
        '''
        Returns a copy of this weighted loss with the specified weights.
        '''
        return dataclasses.replace(self, weights=dict(weights))

    def is_single(self) -> bool:
        '''
        Returns whether the loss trains on individual listener scores.
        '''
        return self.kind == 'mahalanobis-single'

    def is_squared(self) -> bool:
        return self.kind in ('mse', 'wmse')

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'epsilon_sd': self.epsilon_sd,
            'bin_width': self.bin_width,
            'weight_epsilon': self.weight_epsilon
        }


def loss_mse(pred: float, target_mean: float) -> float:
    '''
    Returns `(pred - target_mean)^2`.
    '''
    return (pred - target_mean) ** 2


def loss_weighted_mse(pred: float, target_mean: float, weight: float) -> float:
    return weight * (pred - target_mean) ** 2


def loss_mahalanobis(pred: float, dist: ScoreDistribution, epsilon_sd: float = 1.0) -> float:
    '''
    Returns how many standard deviations of the listener score distribution
    separate the prediction from the mean score. The standard deviation is
    floored at `epsilon_sd`.
    '''
    return abs(dist.mean - pred) / max(dist.sd, epsilon_sd)


def loss_mahalanobis_single(pred: float, individual_score: float, dist: ScoreDistribution, epsilon_sd: float = 1.0) -> float:
    '''
    Returns the distance between the prediction and one individual listener
    score of the distribution, in (floored) standard deviations of the
    distribution.
    '''
    if not dist.contains(individual_score):
        raise StatisticsError(f'score {individual_score} does not belong to the distribution of "{dist.example_id}"')
    return abs(individual_score - pred) / max(dist.sd, epsilon_sd)


def batch_loss(
    kind: str,
    preds: numpy.ndarray,
    targets: numpy.ndarray,
    sds: numpy.ndarray,
    weights: Optional[numpy.ndarray] = None,
    epsilon_sd: float = 1.0) -> tuple[float, numpy.ndarray]:
    '''
    Returns the mean loss over a batch and its gradient with respect to every
    prediction. `targets` are mean scores, or individual scores for the
    `mahalanobis-single` kind. The absolute-error subgradient at zero is 0.
    '''
    diff = preds - targets
    n = diff.shape[0]
    if kind in ('mse', 'wmse'):
        w = numpy.ones(n) if weights is None else weights
        return float(numpy.mean(w * diff * diff)), 2.0 * w * diff / n
    if kind in ('mahalanobis', 'mahalanobis-single'):
        scale = numpy.maximum(sds, epsilon_sd)
        return float(numpy.mean(numpy.abs(diff) / scale)), numpy.sign(diff) / scale / n
    raise ConfigError(f'unknown loss "{kind}" (valid values: {", ".join(LOSS_KINDS)})')


@dataclasses.dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclasses.dataclass
class AdamState:
    '''
    The moment estimates and step count of the Adam optimizer, keyed by
    parameter path.
    '''

    step: int = 0
    m: dict[str, numpy.ndarray] = dataclasses.field(default_factory=dict)
    v: dict[str, numpy.ndarray] = dataclasses.field(default_factory=dict)

    @staticmethod
    def from_dict(rep: dict) -> AdamState:
        return AdamState(
            step = int(rep['step']),
            m    = {k: numpy.array(v, dtype=numpy.float64) for k, v in rep['m'].items()},
            v    = {k: numpy.array(v, dtype=numpy.float64) for k, v in rep['v'].items()}
        )

    def to_dict(self) -> dict:
        return {
            'step': self.step,
            'm': {k: v.tolist() for k, v in self.m.items()},
            'v': {k: v.tolist() for k, v in self.v.items()}
        }


def adam_step(
    params: dict[str, numpy.ndarray],
    grads: dict[str, numpy.ndarray],
    state: AdamState,
    config: AdamConfig) -> tuple[dict[str, numpy.ndarray], AdamState]:
    '''
    Performs one Adam update with bias correction, returning new parameter
    arrays and a new optimizer state. Inputs are left untouched.
    '''
    if set(params) != set(grads):
        raise DimensionError('parameters and gradients have different keys')
    for path in params:
        if numpy.shape(params[path]) != numpy.shape(grads[path]):
            raise DimensionError(f'gradient shape of "{path}" does not match its parameter')
        if not numpy.all(numpy.isfinite(grads[path])):
            raise NumericalError(f'non-finite gradient for parameter "{path}"')
    t = state.step + 1
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    new_params = {}
    new_state = AdamState(step=t)
    for path in params:
        g = numpy.asarray(grads[path], dtype=numpy.float64)
        m = state.m.get(path, numpy.zeros_like(g))
        v = state.v.get(path, numpy.zeros_like(g))
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * (g * g)
        new_params[path] = params[path] - config.lr * (m / bc1) / (numpy.sqrt(v / bc2) + config.eps)
        new_state.m[path] = m
        new_state.v[path] = v
    return new_params, new_state
