'''
Module Unit Tests

For the most part this file just contains common resources leveraged by other
test files.
'''

import numpy

import spsim

from spsim.example import EvaluationDataset, EvaluationExample, ListenerScore, SpeakerEmbedding
from spsim.synthetic import SyntheticWorldConfig


# ----- Pre-Read JSON Lines Content -----

EVALUATIONS_CONTENT = '''
{"example_id": "ex1", "cycle_id": "c1", "system_id": "sysA", "target_speaker_id": "spk1", "source_embedding_id": "ex1-src", "reference_embedding_id": "ex1-ref", "scores": [{"listener_id": "l1", "score": 40}, {"listener_id": "l2", "score": 60}]}
{"example_id": "ex2", "cycle_id": "c1", "system_id": "sysB", "target_speaker_id": "spk2", "source_embedding_id": "ex2-src", "reference_embedding_id": "ex2-ref", "scores": [{"listener_id": "l1", "score": 90}, {"listener_id": "l2", "score": 70}, {"listener_id": "l3", "score": 80}]}
'''.strip()

EMBEDDINGS_CONTENT = '''
{"id": "ex1-src", "vector": [0.0, 0.0, 1.0]}
{"id": "ex1-ref", "vector": [3.0, 4.0, 1.0]}
{"id": "ex2-src", "vector": [1.0, 0.0, 0.0]}
{"id": "ex2-ref", "vector": [0.0, 1.0, 0.0]}
'''.strip()


# ----- Synthetic Worlds -----

# Every listener reports the latent score exactly.
ZERO_NOISE_WORLD = dict(
    n_examples        = 300,
    listener_bias_sd  = 0.0,
    listener_noise_sd = 0.0
)

SMALL_WORLD = dict(
    n_examples        = 60,
    n_listeners       = 6,
    n_systems         = 6,
    embedding_dim     = 4,
    listener_bias_sd  = 3.0,
    listener_noise_sd = 10.0
)


def world(**overrides) -> SyntheticWorldConfig:
    '''
    Returns a synthetic world configuration with the specified overrides.
    '''
    return SyntheticWorldConfig(**overrides)


# ----- Hand-Built Datasets -----

def make_dataset(pairs: list, score_lists: list, systems: list = None) -> EvaluationDataset:
    '''
    Builds a dataset with one example per `(source, reference)` vector pair,
    scored by the listeners `l0`, `l1`, ... with the specified scores.
    '''
    embeddings = {}
    examples = []
    for i, ((source, reference), scores) in enumerate(zip(pairs, score_lists)):
        example_id = f'ex{i}'
        for side, vector in [('src', source), ('ref', reference)]:
            embeddings[f'{example_id}-{side}'] = SpeakerEmbedding(id=f'{example_id}-{side}', vector=numpy.asarray(vector, dtype=float))
        examples.append(EvaluationExample(
            example_id             = example_id,
            cycle_id               = 'c1',
            system_id              = systems[i] if systems else 'sys0',
            target_speaker_id      = 'spk0',
            source_embedding_id    = f'{example_id}-src',
            reference_embedding_id = f'{example_id}-ref',
            scores = [ListenerScore(listener_id=f'l{j}', score=float(s)) for j, s in enumerate(scores)]
        ))
    return EvaluationDataset(embeddings=embeddings, examples=examples)


def fixture_dataset() -> EvaluationDataset:
    '''
    Returns the dataset described by `EVALUATIONS_CONTENT` and
    `EMBEDDINGS_CONTENT`.
    '''
    return spsim.Parser().parse_dataset_content(evaluations=EVALUATIONS_CONTENT, embeddings=EMBEDDINGS_CONTENT)


# ----- Module-Wide Tests -----

def test_module_name():
    '''
    Tests the name and version of the module.
    '''
    assert spsim.__name__ == 'spsim'
    assert spsim.__VERSION__ == '0.1.0'
