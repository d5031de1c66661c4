'''
Contains the synthetic evaluation world: a latent speaker geometry and a
listener noise model used to generate datasets with a known ground truth, as
well as the splitting of utterances into sub-utterance pieces.
'''

from __future__ import annotations

import dataclasses
import logging
import numpy


from .errors import ConfigError, DatasetError
from .example import (
    EvaluationDataset,
    EvaluationExample,
    ListenerScore,
    PiecePair,
    SCORE_MAX,
    SCORE_MIN,
    SpeakerEmbedding
)

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class SyntheticWorldConfig:
    '''
    Describes a synthetic evaluation world. Such a world has the following
    parameters:
      * n_speakers
        The number of target speakers. Each speaker is an anchor point on a
        sphere of radius `speaker_radius` in embedding space.
      * n_systems
        The number of evaluated systems. Each system has a leakage level drawn
        uniformly from [0, 1].
      * n_examples
        The number of evaluation examples.
      * n_listeners
        The number of listeners, each of which scores every example.
      * n_cycles
        The number of evaluation cycles examples are spread over.
      * embedding_dim
        The embedding dimension (at least 2).
      * leakage_strength
        How far source embeddings drift from their target-speaker anchor. An
        example's drift is `leakage_strength * (system level + U(0, 1)) / 2`.
      * listener_bias_sd
        The standard deviation of each listener's additive bias (score units).
      * listener_noise_sd
        The standard deviation of per-score listener noise (score units).
      * noise_spread
        Heteroscedasticity of listener noise: the noise standard deviation of
        an example is `listener_noise_sd * U(1 - noise_spread, 1 + noise_spread)`.
      * similarity_scale
        The scale `s` of the similarity curve `100 * exp(-d^2 / (2 s^2))`.
      * speaker_radius
        The norm of every target-speaker anchor.
      * recording_noise_sd
        Isotropic noise added to reference embeddings.
      * rng_seed
        The seed of the generator. Identical configurations produce identical
        datasets.
    '''

    n_speakers: int = 10
    n_systems: int = 20
    n_examples: int = 500
    n_listeners: int = 20
    n_cycles: int = 1
    embedding_dim: int = 16
    leakage_strength: float = 2.0
    listener_bias_sd: float = 5.0
    listener_noise_sd: float = 15.0
    noise_spread: float = 0.0
    similarity_scale: float = 1.0
    speaker_radius: float = 4.0
    recording_noise_sd: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        '''
        Checks that every parameter is within its allowed range.
        '''
        for name in ['n_speakers', 'n_systems', 'n_examples', 'n_listeners', 'n_cycles']:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f'{name} must be an integer of at least 1, got {value!r}')
        if not isinstance(self.embedding_dim, int) or self.embedding_dim < 2:
            raise ConfigError(f'embedding_dim must be an integer of at least 2, got {self.embedding_dim!r}')
        for name in ['leakage_strength', 'listener_bias_sd', 'listener_noise_sd', 'recording_noise_sd']:
            if not getattr(self, name) >= 0:
                raise ConfigError(f'{name} must be non-negative, got {getattr(self, name)!r}')
        if not 0 <= self.noise_spread < 1:
            raise ConfigError(f'noise_spread must lie in [0, 1), got {self.noise_spread!r}')
        for name in ['similarity_scale', 'speaker_radius']:
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be positive, got {getattr(self, name)!r}')
        if not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ConfigError(f'rng_seed must be an unsigned integer, got {self.rng_seed!r}')


@dataclasses.dataclass
class PieceConfig:
    '''
    Parameters of sub-utterance piece splitting.
    '''

    piece_jitter_sd: float = 0.05
    pieces_per_utterance: int = 3
    rng_seed: int = 0


def similarity_curve(distance: float, scale: float = 1.0) -> float:
    '''
    Maps an embedding distance onto a latent similarity score in [0, 100]. The
    curve is monotonically decreasing and equals 100 at distance 0.
    '''
    return float(SCORE_MAX * numpy.exp(-(distance * distance) / (2.0 * scale * scale)))


def score_listeners(
    latent: float,
    biases: numpy.ndarray,
    noise_sd: float,
    rng: numpy.random.Generator) -> numpy.ndarray:
    '''
    Draws one score per listener for an example with the specified latent
    score: `clip(latent + bias_l + noise, 0, 100)`, where the noise is normal
    with standard deviation `noise_sd`.
    '''
    noise = rng.normal(0.0, noise_sd, size=len(biases))
    return numpy.clip(latent + biases + noise, SCORE_MIN, SCORE_MAX)


def listener_ids(n: int) -> list[str]:
    return [f'listener{i:03d}' for i in range(n)]


def generate_synthetic(config: SyntheticWorldConfig) -> tuple[EvaluationDataset, dict[str, float]]:
    '''
    Generates a synthetic evaluation dataset from the specified world
    configuration, returning the dataset and its latent truth table
    (`example_id` -> pre-noise latent score).

    Each example pairs a reference embedding at (or near) its target-speaker
    anchor with a source embedding drifted away from the anchor in a direction
    orthogonal to it. Every listener scores every example.
    '''
    config.validate()
    rng = numpy.random.default_rng(config.rng_seed)
    dim = config.embedding_dim
    anchors = rng.normal(size=(config.n_speakers, dim))
    anchors = config.speaker_radius * anchors / numpy.linalg.norm(anchors, axis=1, keepdims=True)
    system_levels = rng.uniform(0.0, 1.0, size=config.n_systems)
    biases = rng.normal(0.0, config.listener_bias_sd, size=config.n_listeners)
    listeners = listener_ids(config.n_listeners)
    embeddings = {}
    examples = []
    truth = {}
    for i in range(config.n_examples):
        example_id = f'ex{i:05d}'
        speaker = int(rng.integers(config.n_speakers))
        system = int(rng.integers(config.n_systems))
        anchor = anchors[speaker]
        reference = anchor + rng.normal(0.0, config.recording_noise_sd, size=dim)
        direction = rng.normal(size=dim)
        unit_anchor = anchor / numpy.linalg.norm(anchor)
        direction = direction - direction.dot(unit_anchor) * unit_anchor
        norm = numpy.linalg.norm(direction)
        drift = config.leakage_strength * 0.5 * (system_levels[system] + rng.uniform())
        source = anchor + (drift * direction / norm if norm > 0 else 0.0)
        distance = float(numpy.linalg.norm(source - reference))
        latent = similarity_curve(distance, config.similarity_scale)
        noise_sd = config.listener_noise_sd * rng.uniform(1.0 - config.noise_spread, 1.0 + config.noise_spread)
        scores = score_listeners(latent, biases, noise_sd, rng)
        source_id = f'{example_id}-src'
        reference_id = f'{example_id}-ref'
        embeddings[source_id] = SpeakerEmbedding(id=source_id, vector=source)
        embeddings[reference_id] = SpeakerEmbedding(id=reference_id, vector=reference)
        examples.append(EvaluationExample(
            example_id             = example_id,
            cycle_id               = f'cycle{i % config.n_cycles:03d}',
            system_id              = f'system{system:03d}',
            target_speaker_id      = f'speaker{speaker:03d}',
            source_embedding_id    = source_id,
            reference_embedding_id = reference_id,
            scores = [ListenerScore(listener_id=l, score=float(s)) for l, s in zip(listeners, scores)]
        ))
        truth[example_id] = latent
    logger.info(
        'generated %d synthetic examples (%d speakers, %d systems, %d listeners, seed %d)',
        config.n_examples, config.n_speakers, config.n_systems, config.n_listeners, config.rng_seed
    )
    return EvaluationDataset(embeddings=embeddings, examples=examples), truth


def split_into_pieces(
    dataset: EvaluationDataset,
    piece_jitter_sd: float,
    pieces_per_utterance: int,
    rng_seed: int) -> EvaluationDataset:
    '''
    Returns a copy of the dataset in which every example carries
    `pieces_per_utterance` sub-utterance piece pairs. Each piece embedding is
    its utterance embedding plus zero-mean normal jitter with standard
    deviation `piece_jitter_sd`. Pieces inherit the full score list of their
    example unchanged.
    '''
    if dataset.has_pieces():
        raise DatasetError('dataset already contains pieces')
    if not isinstance(pieces_per_utterance, int) or pieces_per_utterance < 1:
        raise ConfigError(f'pieces_per_utterance must be an integer of at least 1, got {pieces_per_utterance!r}')
    if not piece_jitter_sd >= 0:
        raise ConfigError(f'piece_jitter_sd must be non-negative, got {piece_jitter_sd!r}')
    rng = numpy.random.default_rng(rng_seed)
    dim = dataset.dimension()
    pieces = {}
    for e in dataset:
        source, reference = dataset.pair(e.example_id)
        pairs = []
        for index in range(pieces_per_utterance):
            pairs.append(PiecePair(
                source    = SpeakerEmbedding(
                    id     = f'{e.example_id}-piece{index:03d}-src',
                    vector = source + rng.normal(0.0, piece_jitter_sd, size=dim)
                ),
                reference = SpeakerEmbedding(
                    id     = f'{e.example_id}-piece{index:03d}-ref',
                    vector = reference + rng.normal(0.0, piece_jitter_sd, size=dim)
                )
            ))
        pieces[e.example_id] = pairs
    logger.info('split %d examples into %d pieces each', len(dataset), pieces_per_utterance)
    return EvaluationDataset(embeddings=dict(dataset.embeddings), examples=list(dataset.examples), pieces=pieces)
