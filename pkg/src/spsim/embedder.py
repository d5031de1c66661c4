'''
Contains a desk-scale speaker embedder trained on synthetic speaker feature
vectors with either of two objectives: the GE2E centroid softmax loss or a
pairwise same/different-speaker binary cross entropy.
'''

from __future__ import annotations

import dataclasses
import logging
import math
import numpy

from typing import Any, Optional

from .errors import ConfigError, DatasetError, DimensionError, NumericalError, StatisticsError
from .example import EvaluationDataset, EvaluationExample, ListenerScore, SpeakerEmbedding
from .network import AdamState, AdamConfig, DenseNet, adam_step
from .synthetic import SyntheticWorldConfig, listener_ids, score_listeners, similarity_curve

logger = logging.getLogger(__name__)

OBJECTIVES = ('ge2e', 'bce')
PROBABILITY_FLOOR = 1e-12
W_FLOOR = 1e-6


@dataclasses.dataclass
class CorpusConfig:
    '''
    Describes a synthetic multi-speaker corpus. Every speaker has a center
    drawn from a normal distribution with standard deviation
    `speaker_separation`; each utterance is its speaker's center plus normal
    noise with standard deviation `cluster_spread`.
    '''

    n_speakers: int = 8
    utterances_per_speaker: int = 8
    feature_dim: int = 20
    speaker_separation: float = 3.0
    cluster_spread: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ['n_speakers', 'utterances_per_speaker']:
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 2:
                raise ConfigError(f'{name} must be an integer of at least 2, got {getattr(self, name)!r}')
        if not isinstance(self.feature_dim, int) or self.feature_dim < 2:
            raise ConfigError(f'feature_dim must be an integer of at least 2, got {self.feature_dim!r}')
        if not self.speaker_separation > 0 or not self.cluster_spread >= 0:
            raise ConfigError('speaker_separation must be positive and cluster_spread non-negative')


@dataclasses.dataclass
class EncoderConfig:
    '''
    The toy encoder (a two-layer feedforward network with a tanh hidden layer)
    and its training parameters. `pairs_per_batch` and `head_hidden` only
    apply to the pairwise objective.
    '''

    hidden: int = 32
    embedding_dim: int = 16
    epochs: int = 150
    lr: float = 1e-2
    pairs_per_batch: int = 64
    head_hidden: int = 16

    def __post_init__(self):
        for name in ['hidden', 'pairs_per_batch', 'head_hidden']:
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f'{name} must be an integer of at least 1, got {getattr(self, name)!r}')
        if not isinstance(self.embedding_dim, int) or self.embedding_dim < 2:
            raise ConfigError(f'embedding_dim must be an integer of at least 2, got {self.embedding_dim!r}')
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f'epochs must be a non-negative integer, got {self.epochs!r}')
        if not self.lr > 0:
            raise ConfigError(f'lr must be positive, got {self.lr!r}')


@dataclasses.dataclass(eq=False)
class SpeakerBatch:
    '''
    Feature vectors of `N` speakers with `M` utterances each, stored as an
    array of shape `[N, M, F]`.
    '''

    features: numpy.ndarray
    speaker_ids: list[str]
    centers: Optional[numpy.ndarray] = None

    def __post_init__(self):
        self.features = numpy.asarray(self.features, dtype=numpy.float64)
        if self.features.ndim != 3:
            raise DimensionError(f'speaker batch features must have shape [N, M, F], got {self.features.shape}')
        if self.n_speakers < 2 or self.utterances_per_speaker < 2:
            raise DatasetError('a speaker batch requires at least 2 speakers with at least 2 utterances each')
        if len(self.speaker_ids) != self.n_speakers:
            raise DatasetError('speaker_ids must name every speaker of the batch')
        if not self.centers is None:
            self.centers = numpy.asarray(self.centers, dtype=numpy.float64)
            if self.centers.shape != (self.n_speakers, self.feature_dim):
                raise DimensionError(f'speaker centers must have shape {(self.n_speakers, self.feature_dim)}, got {self.centers.shape}')

    @property
    def n_speakers(self) -> int:
        return int(self.features.shape[0])

    @property
    def utterances_per_speaker(self) -> int:
        return int(self.features.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[2])

    def utterance_id(self, speaker: int, index: int) -> str:
        return f'{self.speaker_ids[speaker]}-utt{index:03d}'

    def flat(self) -> numpy.ndarray:
        '''
        Returns the features as a `[N * M, F]` matrix, speaker-major.
        '''
        return self.features.reshape(-1, self.feature_dim)


@dataclasses.dataclass
class Ge2eParams:
    '''
    The scale `w` and offset `b` of the GE2E similarity `w * cos + b`.
    '''

    w: float = 10.0
    b: float = -5.0

    def __post_init__(self):
        if not self.w > 0:
            raise ConfigError(f'w must be positive, got {self.w!r}')

    def clamp(self):
        self.w = max(self.w, W_FLOOR)


@dataclasses.dataclass(eq=False)
class ToyEmbedder:
    '''
    A trained toy encoder. Embeddings are the encoder outputs renormalized to
    unit length; the pairwise head (if any) is only used during training.
    '''

    encoder: DenseNet
    objective: str
    ge2e: Optional[Ge2eParams] = None
    head: Optional[DenseNet] = None

    def embed(self, features: Any) -> numpy.ndarray:
        '''
        Embeds one feature vector or a batch of them (one per row).
        '''
        z, _ = self.encoder.forward(features)
        return unit_normalize(z)

    def export(self, batch: SpeakerBatch) -> dict[str, SpeakerEmbedding]:
        '''
        Returns the embedding of every utterance of the batch, keyed by
        utterance id in speaker-major order.
        '''
        vectors = self.embed(batch.flat()).reshape(batch.n_speakers, batch.utterances_per_speaker, -1)
        res = {}
        for j in range(batch.n_speakers):
            for i in range(batch.utterances_per_speaker):
                uid = batch.utterance_id(j, i)
                res[uid] = SpeakerEmbedding(id=uid, vector=vectors[j, i])
        return res


def unit_normalize(z: numpy.ndarray) -> numpy.ndarray:
    norms = numpy.linalg.norm(z, axis=-1, keepdims=True)
    if numpy.any(norms == 0.0):
        raise StatisticsError('cannot normalize a zero-norm embedding')
    return z / norms


def normalize_backward(z: numpy.ndarray, g: numpy.ndarray) -> numpy.ndarray:
    '''
    Propagates a gradient with respect to `z / |z|` back to `z`.
    '''
    norms = numpy.linalg.norm(z, axis=-1, keepdims=True)
    e = z / norms
    return (g - numpy.sum(g * e, axis=-1, keepdims=True) * e) / norms


def generate_corpus(config: CorpusConfig) -> SpeakerBatch:
    '''
    Generates a synthetic speaker corpus.
    '''
    rng = numpy.random.default_rng(config.rng_seed)
    centers = rng.normal(0.0, config.speaker_separation, size=(config.n_speakers, config.feature_dim))
    noise = rng.normal(0.0, config.cluster_spread, size=(config.n_speakers, config.utterances_per_speaker, config.feature_dim))
    return SpeakerBatch(
        features    = centers[:, None, :] + noise,
        speaker_ids = [f'speaker{j:03d}' for j in range(config.n_speakers)],
        centers     = centers
    )


def centroid_geometry(embeddings: numpy.ndarray) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    '''
    Returns, for every embedding `e[j, i]` and speaker `k`, the centroid it is
    compared with (`Y[j, i, k]`: the mean embedding of speaker `k`, or the
    leave-one-out mean of speaker `j` when `k == j`), the cosines between them
    and the norms of both.
    '''
    e = numpy.asarray(embeddings, dtype=numpy.float64)
    if e.ndim != 3 or e.shape[0] < 2 or e.shape[1] < 2:
        raise DimensionError(f'embeddings must have shape [N >= 2, M >= 2, D], got {e.shape}')
    n, m, _ = e.shape
    totals = e.sum(axis=1)
    centroids = totals / m
    loo = (totals[:, None, :] - e) / (m - 1)
    Y = numpy.broadcast_to(centroids[None, None, :, :], (n, m, n, e.shape[2])).copy()
    for j in range(n):
        Y[j, :, j, :] = loo[j]
    ne = numpy.linalg.norm(e, axis=-1)
    ny = numpy.linalg.norm(Y, axis=-1)
    if numpy.any(ne == 0.0):
        raise StatisticsError('zero-norm embedding in speaker batch')
    if numpy.any(ny == 0.0):
        raise StatisticsError('zero-norm centroid in speaker batch')
    cos = numpy.einsum('jid,jikd->jik', e, Y) / (ne[:, :, None] * ny)
    return Y, cos, ne, ny


def ge2e_similarity_matrix(embeddings: Any, params: Ge2eParams) -> numpy.ndarray:
    '''
    Returns the GE2E similarity tensor `S[j, i, k] = w * cos(e[j, i], c[k]) +
    b` of a `[N, M, D]` batch of embeddings, where the own-speaker centroid
    `c[j]` excludes `e[j, i]` itself.
    '''
    _, cos, _, _ = centroid_geometry(embeddings)
    return params.w * cos + params.b


def own_entries(S: numpy.ndarray) -> numpy.ndarray:
    n, m, _ = S.shape
    return S[numpy.arange(n)[:, None], numpy.arange(m)[None, :], numpy.arange(n)[:, None]]


def ge2e_softmax_loss(S: Any) -> float:
    '''
    Returns the softmax GE2E loss `sum_{j,i} -S[j,i,j] + logsumexp_k
    S[j,i,k]`.
    '''
    S = numpy.asarray(S, dtype=numpy.float64)
    if not numpy.all(numpy.isfinite(S)):
        raise NumericalError('similarity tensor contains non-finite entries')
    top = S.max(axis=2, keepdims=True)
    lse = top[:, :, 0] + numpy.log(numpy.exp(S - top).sum(axis=2))
    return float(numpy.sum(lse - own_entries(S)))


def ge2e_loss_and_gradients(embeddings: Any, params: Ge2eParams) -> tuple[float, numpy.ndarray, float, float]:
    '''
    Returns the GE2E softmax loss of a batch of embeddings and its gradients
    with respect to the embeddings, `w` and `b`.
    '''
    e = numpy.asarray(embeddings, dtype=numpy.float64)
    Y, cos, ne, ny = centroid_geometry(e)
    S = params.w * cos + params.b
    loss = ge2e_softmax_loss(S)
    n, m, _ = S.shape
    soft = numpy.exp(S - S.max(axis=2, keepdims=True))
    soft /= soft.sum(axis=2, keepdims=True)
    own = numpy.zeros_like(S)
    own[numpy.arange(n)[:, None], numpy.arange(m)[None, :], numpy.arange(n)[:, None]] = 1.0
    G = soft - own
    grad_w = float(numpy.sum(G * cos))
    grad_b = float(numpy.sum(G))
    A = params.w * G
    # d cos(x, y) / dx = y / (|x||y|) - cos x / |x|^2, symmetric in y
    scale = A / (ne[:, :, None] * ny)
    grad_e = numpy.einsum('jik,jikd->jid', scale, Y)
    grad_e -= (numpy.sum(A * cos, axis=2) / ne ** 2)[:, :, None] * e
    gY = scale[..., None] * e[:, :, None, :] - (A * cos / ny ** 2)[..., None] * Y
    for k in range(n):
        others = [j for j in range(n) if j != k]
        # full centroid of speaker k, compared with every other speaker's utterances
        grad_e[k] += gY[others, :, k, :].sum(axis=(0, 1)) / m
        # leave-one-out centroids of speaker k
        g_loo = gY[k, :, k, :]
        grad_e[k] += (g_loo.sum(axis=0)[None, :] - g_loo) / (m - 1)
    return loss, grad_e, grad_w, grad_b


def pair_features(emb_a: numpy.ndarray, emb_b: numpy.ndarray) -> numpy.ndarray:
    return numpy.concatenate([numpy.abs(emb_a - emb_b), emb_a * emb_b], axis=-1)


def sigmoid(x: numpy.ndarray) -> numpy.ndarray:
    return 0.5 * (1.0 + numpy.tanh(0.5 * x))


def pairwise_bce_loss(emb_a: Any, emb_b: Any, same_speaker: bool, similarity_head: DenseNet) -> float:
    '''
    Returns the binary cross entropy of the head's same-speaker probability
    for a pair of embeddings. Probabilities are floored at `1e-12`.
    '''
    a = numpy.asarray(emb_a, dtype=numpy.float64)
    b = numpy.asarray(emb_b, dtype=numpy.float64)
    if a.shape != b.shape:
        raise DimensionError(f'dimension mismatch: {a.shape} != {b.shape}')
    out, _ = similarity_head.forward(pair_features(a, b))
    logit = float(out[0])
    if not math.isfinite(logit):
        raise NumericalError('similarity head produced a non-finite output')
    p = float(sigmoid(logit))
    p = min(max(p, PROBABILITY_FLOOR), 1.0 - PROBABILITY_FLOOR)
    y = 1.0 if same_speaker else 0.0
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def equal_error_rate(scores: Any, labels: Any) -> float:
    '''
    Returns the equal error rate of a same/different detector: the error rate
    at the threshold where the false acceptance rate (different-speaker
    trials scoring at least the threshold) and the false rejection rate
    (same-speaker trials scoring below it) are closest.
    '''
    scores = numpy.asarray(scores, dtype=numpy.float64)
    labels = numpy.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise StatisticsError('scores and labels must be vectors of equal length')
    pos = numpy.sort(scores[labels])
    neg = numpy.sort(scores[~labels])
    if pos.size == 0 or neg.size == 0:
        raise StatisticsError('equal error rate requires both same and different trials')
    thresholds = numpy.append(numpy.unique(scores), numpy.inf)
    frr = numpy.searchsorted(pos, thresholds, side='left') / pos.size
    far = (neg.size - numpy.searchsorted(neg, thresholds, side='left')) / neg.size
    best = int(numpy.argmin(numpy.abs(far - frr)))
    return float((far[best] + frr[best]) / 2.0)


def embedding_quality(embeddings: numpy.ndarray) -> dict[str, float]:
    '''
    Returns the mean within-speaker and cross-speaker cosine similarity of a
    `[N, M, D]` batch of unit embeddings and the equal error rate of cosine
    scoring over all utterance pairs.
    '''
    n, m, d = embeddings.shape
    flat = embeddings.reshape(-1, d)
    speakers = numpy.repeat(numpy.arange(n), m)
    upper = numpy.triu_indices(flat.shape[0], k=1)
    cos = (flat @ flat.T)[upper]
    same = speakers[upper[0]] == speakers[upper[1]]
    return {
        'within_cos': float(numpy.mean(cos[same])),
        'cross_cos': float(numpy.mean(cos[~same])),
        'eer': equal_error_rate(cos, same)
    }


def sample_pairs(batch: SpeakerBatch, count: int, rng: numpy.random.Generator) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    '''
    Samples `count` utterance pairs, alternating same-speaker and
    different-speaker pairs, as flat utterance indices and labels.
    '''
    n, m = batch.n_speakers, batch.utterances_per_speaker
    first, second, labels = [], [], []
    for t in range(count):
        j = int(rng.integers(n))
        i = int(rng.integers(m))
        if t % 2 == 0:
            i2 = (i + 1 + int(rng.integers(m - 1))) % m
            first.append(j * m + i)
            second.append(j * m + i2)
            labels.append(1.0)
        else:
            k = (j + 1 + int(rng.integers(n - 1))) % n
            first.append(j * m + i)
            second.append(k * m + int(rng.integers(m)))
            labels.append(0.0)
    return numpy.array(first), numpy.array(second), numpy.array(labels)


def ge2e_epoch(model: ToyEmbedder, batch: SpeakerBatch, state: AdamState, adam: AdamConfig) -> tuple[float, AdamState]:
    z, cache = model.encoder.forward(batch.flat())
    e = unit_normalize(z).reshape(batch.features.shape[0], batch.features.shape[1], -1)
    loss, grad_e, grad_w, grad_b = ge2e_loss_and_gradients(e, model.ge2e)
    grad_z = normalize_backward(z, grad_e.reshape(z.shape))
    grads = model.encoder.backward(cache, grad_z).as_dict()
    grads['ge2e.w'] = numpy.array(grad_w)
    grads['ge2e.b'] = numpy.array(grad_b)
    params = dict(model.encoder.params())
    params['ge2e.w'] = numpy.array(model.ge2e.w)
    params['ge2e.b'] = numpy.array(model.ge2e.b)
    params, state = adam_step(params, grads, state, adam)
    model.ge2e.w = float(params.pop('ge2e.w'))
    model.ge2e.b = float(params.pop('ge2e.b'))
    model.ge2e.clamp()
    model.encoder.assign(params)
    return loss, state


def bce_epoch(
    model: ToyEmbedder,
    batch: SpeakerBatch,
    count: int,
    rng: numpy.random.Generator,
    state: AdamState,
    adam: AdamConfig) -> tuple[float, AdamState]:
    first, second, labels = sample_pairs(batch, count, rng)
    flat = batch.flat()
    z, cache = model.encoder.forward(numpy.concatenate([flat[first], flat[second]]))
    e = unit_normalize(z)
    a, b = e[:count], e[count:]
    out, head_cache = model.head.forward(pair_features(a, b))
    p = numpy.clip(sigmoid(out[:, 0]), PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    loss = float(-numpy.mean(labels * numpy.log(p) + (1.0 - labels) * numpy.log(1.0 - p)))
    head_grads = model.head.backward(head_cache, ((p - labels) / count)[:, None])
    d = a.shape[1]
    g_abs, g_prod = head_grads.inputs[:, :d], head_grads.inputs[:, d:]
    sign = numpy.sign(a - b)
    grad_e = numpy.concatenate([g_abs * sign + g_prod * b, -g_abs * sign + g_prod * a])
    grads = model.encoder.backward(cache, normalize_backward(z, grad_e)).as_dict()
    params = dict(model.encoder.params())
    for path, value in model.head.params().items():
        params[f'head.{path}'] = value
    for path, value in head_grads.as_dict().items():
        grads[f'head.{path}'] = value
    params, state = adam_step(params, grads, state, adam)
    model.head.assign({k[len('head.'):]: v for k, v in params.items() if k.startswith('head.')})
    model.encoder.assign({k: v for k, v in params.items() if not k.startswith('head.')})
    return loss, state


def train_toy_embedder(
    objective: str,
    corpus: CorpusConfig,
    encoder_config: EncoderConfig,
    seed: int) -> tuple[ToyEmbedder, SpeakerBatch, dict]:
    '''
    Trains a toy encoder on a synthetic corpus with the `ge2e` or `bce`
    objective. Returns the trained embedder, the corpus it was trained on and
    a quality report with the within-speaker and cross-speaker mean cosine
    similarities and the equal error rate, both after training and for the
    untrained encoder (`initial`).
    '''
    if not objective in OBJECTIVES:
        raise ConfigError(f'unknown objective "{objective}" (valid values: {", ".join(OBJECTIVES)})')
    if corpus.n_speakers < 4 or corpus.utterances_per_speaker < 4:
        raise DatasetError(
            f'degenerate corpus: at least 4 speakers with 4 utterances each are required, '
            f'got {corpus.n_speakers} x {corpus.utterances_per_speaker}'
        )
    batch = generate_corpus(corpus)
    rng = numpy.random.default_rng(seed)
    encoder = DenseNet.create(
        dims        = [batch.feature_dim, encoder_config.hidden, encoder_config.embedding_dim],
        activations = ['tanh', 'identity'],
        rng         = rng
    )
    model = ToyEmbedder(encoder=encoder, objective=objective)
    if objective == 'ge2e':
        model.ge2e = Ge2eParams()
    else:
        model.head = DenseNet.create(
            dims        = [2 * encoder_config.embedding_dim, encoder_config.head_hidden, 1],
            activations = ['relu', 'identity'],
            rng         = rng
        )
    shape = (batch.n_speakers, batch.utterances_per_speaker, -1)
    initial = embedding_quality(model.embed(batch.flat()).reshape(shape))
    adam = AdamConfig(lr=encoder_config.lr)
    state = AdamState()
    loss = math.nan
    for epoch in range(encoder_config.epochs):
        if objective == 'ge2e':
            loss, state = ge2e_epoch(model, batch, state, adam)
        else:
            loss, state = bce_epoch(model, batch, encoder_config.pairs_per_batch, rng, state, adam)
        logger.debug('embedder epoch %d: %s loss %.6f', epoch, objective, loss)
    report = {'objective': objective, 'epochs': encoder_config.epochs, 'final_loss': loss, 'initial': initial}
    report.update(embedding_quality(model.embed(batch.flat()).reshape(shape)))
    logger.info('trained %s embedder: eer %.4f (initial %.4f)', objective, report['eer'], initial['eer'])
    return model, batch, report


def build_pair_evaluations(batch: SpeakerBatch, embedder: ToyEmbedder, config: SyntheticWorldConfig) -> EvaluationDataset:
    '''
    Builds an evaluation dataset over pairs of distinct corpus utterances,
    half of them from the same speaker. The latent similarity of a pair
    follows the similarity curve over the root-mean-square distance of the
    two utterances' features, and listeners score it as in the synthetic
    world. Examples reference the embedder's utterance embeddings.
    '''
    rng = numpy.random.default_rng(config.rng_seed)
    embeddings = embedder.export(batch)
    flat = batch.flat()
    m = batch.utterances_per_speaker
    biases = rng.normal(0.0, config.listener_bias_sd, size=config.n_listeners)
    listeners = listener_ids(config.n_listeners)
    first, second, _ = sample_pairs(batch, config.n_examples, rng)
    examples = []
    for t, (u, v) in enumerate(zip(first, second)):
        distance = float(numpy.linalg.norm(flat[u] - flat[v])) / math.sqrt(batch.feature_dim)
        latent = similarity_curve(distance, config.similarity_scale)
        scores = score_listeners(latent, biases, config.listener_noise_sd, rng)
        examples.append(EvaluationExample(
            example_id             = f'pair{t:05d}',
            cycle_id               = f'cycle{t % config.n_cycles:03d}',
            system_id              = f'system{t % config.n_systems:03d}',
            target_speaker_id      = batch.speaker_ids[int(v) // m],
            source_embedding_id    = batch.utterance_id(int(u) // m, int(u) % m),
            reference_embedding_id = batch.utterance_id(int(v) // m, int(v) % m),
            scores = [ListenerScore(listener_id=l, score=float(s)) for l, s in zip(listeners, scores)]
        ))
    return EvaluationDataset(embeddings=embeddings, examples=examples)
