'''
Contains the definitions of speaker embeddings, listener scores, and the
evaluation examples and datasets built from them.
'''

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import numpy
import os

from typing import Any, Iterable, Iterator, Optional, Union

from .errors import DatasetError, DimensionError

SCORE_MIN = 0.0
SCORE_MAX = 100.0
SIDES = ('source', 'reference')


@dataclasses.dataclass(eq=False)
class SpeakerEmbedding:
    '''
    Represents the speaker embedding of a single utterance (or of a piece of
    one). Such an embedding has the following fields:
      * id
        An opaque identifier, unique within a dataset.
      * vector
        The embedding coordinates. The vector is stored read-only.
    '''

    id: str
    vector: numpy.ndarray

    def __post_init__(self):
        vector = numpy.array(self.vector, dtype=numpy.float64)
        if vector.ndim != 1:
            raise DimensionError(f'embedding "{self.id}" must be a one-dimensional vector')
        if vector.shape[0] < 2:
            raise DimensionError(f'embedding "{self.id}" has dimension {vector.shape[0]}, expected at least 2')
        if not numpy.all(numpy.isfinite(vector)):
            raise DatasetError(f'embedding "{self.id}" contains non-finite components')
        vector.setflags(write=False)
        self.vector = vector

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, SpeakerEmbedding): return NotImplemented
        return self.id == other.id and numpy.array_equal(self.vector, other.vector)

    def __len__(self) -> int:
        '''
        Returns the dimension of the embedding.
        '''
        return int(self.vector.shape[0])

    @staticmethod
    def from_dict(rep: dict) -> SpeakerEmbedding:
        '''
        Creates a new embedding from its dictionary representation.
        '''
        return SpeakerEmbedding(id=str(rep['id']), vector=rep['vector'])

    def to_dict(self) -> dict:
        '''
        Converts the embedding into a JSON-serializable dictionary. Components
        are written as python floats, whose `repr` round-trips exactly.
        '''
        return {'id': self.id, 'vector': [float(v) for v in self.vector]}


@dataclasses.dataclass(frozen=True)
class ListenerScore:
    '''
    A single score given by a listener to an evaluation example, between 0
    (completely different speakers) and 100 (same speaker).
    '''

    listener_id: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score) or self.score < SCORE_MIN or self.score > SCORE_MAX:
            raise DatasetError(f'score out of range [0, 100]: {self.score} (listener "{self.listener_id}")')

    def to_dict(self) -> dict:
        return {'listener_id': self.listener_id, 'score': float(self.score)}


@dataclasses.dataclass
class EvaluationExample:
    '''
    Represents a single MUSHRA evaluation example: a pair of recordings
    (source and reference) and the scores given to it by each listener. Such an
    example has the following fields:
      * example_id
        The identifier of the example.
      * cycle_id
        The evaluation cycle the example was scored in.
      * system_id
        The system which synthesized the source recording.
      * target_speaker_id
        The speaker the system was asked to mimic.
      * source_embedding_id
        The embedding of the synthesized (source) recording.
      * reference_embedding_id
        The embedding of the reference recording.
      * scores
        The list of listener scores. Listener identifiers are unique.
    '''

    example_id: str
    cycle_id: str
    system_id: str
    target_speaker_id: str
    source_embedding_id: str
    reference_embedding_id: str
    scores: list[ListenerScore]

    def __post_init__(self):
        if not self.scores:
            raise DatasetError(f'example "{self.example_id}" has no listener scores')
        listeners = [s.listener_id for s in self.scores]
        if len(set(listeners)) != len(listeners):
            raise DatasetError(f'example "{self.example_id}" contains duplicate listener ids')

    def __len__(self) -> int:
        '''
        Returns the number of listener scores of this example.
        '''
        return len(self.scores)

    @staticmethod
    def from_dict(rep: dict) -> EvaluationExample:
        '''
        Creates a new example from its dictionary representation.
        '''
        return EvaluationExample(
            example_id             = str(rep['example_id']),
            cycle_id               = str(rep['cycle_id']),
            system_id              = str(rep['system_id']),
            target_speaker_id      = str(rep['target_speaker_id']),
            source_embedding_id    = str(rep['source_embedding_id']),
            reference_embedding_id = str(rep['reference_embedding_id']),
            scores = [ListenerScore(listener_id=str(s['listener_id']), score=float(s['score'])) for s in rep['scores']]
        )

    def listener_ids(self) -> list[str]:
        return [s.listener_id for s in self.scores]

    def score_values(self) -> numpy.ndarray:
        '''
        Returns the raw listener scores as an array, in stored order.
        '''
        return numpy.array([s.score for s in self.scores], dtype=numpy.float64)

    def to_dict(self) -> dict:
        '''
        Converts the example into a JSON-serializable dictionary.
        '''
        return {
            'example_id': self.example_id,
            'cycle_id': self.cycle_id,
            'system_id': self.system_id,
            'target_speaker_id': self.target_speaker_id,
            'source_embedding_id': self.source_embedding_id,
            'reference_embedding_id': self.reference_embedding_id,
            'scores': [s.to_dict() for s in self.scores]
        }


@dataclasses.dataclass(eq=False)
class PiecePair:
    '''
    The embeddings of one sub-utterance piece of an example's source and
    reference recordings.
    '''

    source: SpeakerEmbedding
    reference: SpeakerEmbedding

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, PiecePair): return NotImplemented
        return self.source == other.source and self.reference == other.reference


@dataclasses.dataclass(eq=False)
class EvaluationDataset:
    '''
    Represents a collection of evaluation examples together with the
    embeddings they reference. Optionally, each example may carry a list of
    sub-utterance piece pairs (see `synthetic.split_into_pieces()`).

    Datasets are validated on construction and should be treated as
    immutable afterwards; every transformation returns a new dataset.
    '''

    embeddings: dict[str, SpeakerEmbedding]
    examples: list[EvaluationExample]
    pieces: Optional[dict[str, list[PiecePair]]] = None

    def __post_init__(self):
        self._index = {}
        for i, e in enumerate(self.examples):
            if e.example_id in self._index:
                raise DatasetError(f'duplicate example id "{e.example_id}"')
            self._index[e.example_id] = i
        self.validate()

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, EvaluationDataset): return NotImplemented
        return self.to_jsonl() == other.to_jsonl()

    def __getitem__(self, key: Union[int, str]) -> EvaluationExample:
        '''
        Allows one to access examples by position or by example id.
        '''
        if isinstance(key, str):
            return self.example(key)
        return self.examples[key]

    def __iter__(self) -> Iterator[EvaluationExample]:
        yield from self.examples

    def __len__(self) -> int:
        '''
        Returns the number of examples within this dataset.
        '''
        return len(self.examples)

    def dimension(self) -> int:
        '''
        Returns the embedding dimension shared by every embedding of the
        dataset.
        '''
        if not self.embeddings:
            raise DatasetError('dataset contains no embeddings')
        return len(next(iter(self.embeddings.values())))

    def example(self, example_id: str) -> EvaluationExample:
        '''
        Returns the example with the specified id.
        '''
        if not example_id in self._index:
            raise DatasetError(f'unknown example id "{example_id}"')
        return self.examples[self._index[example_id]]

    def fingerprint(self) -> str:
        '''
        Returns a content hash of the dataset, computed over its canonical
        JSON Lines serialization.
        '''
        evaluations, embeddings = self.to_jsonl()
        digest = hashlib.sha256()
        digest.update(evaluations.encode('utf-8'))
        digest.update(b'\x00')
        digest.update(embeddings.encode('utf-8'))
        return f'sha256:{digest.hexdigest()}'

    def has_pieces(self) -> bool:
        return not self.pieces is None

    def ids(self) -> list[str]:
        '''
        Returns the example ids of the dataset, in stored order.
        '''
        return [e.example_id for e in self.examples]

    def pair(self, example_id: str) -> tuple[numpy.ndarray, numpy.ndarray]:
        '''
        Returns the (source, reference) embedding vectors of an example.
        '''
        e = self.example(example_id)
        return self.embeddings[e.source_embedding_id].vector, self.embeddings[e.reference_embedding_id].vector

    def piece_examples(self) -> Iterator[tuple[EvaluationExample, int, PiecePair]]:
        '''
        Iterates over every piece pair of the dataset as `(parent example,
        piece index, piece pair)` tuples. Each piece inherits the full score
        list of its parent example.
        '''
        if self.pieces is None:
            raise DatasetError('dataset has no pieces')
        for e in self.examples:
            for index, pair in enumerate(self.pieces[e.example_id]):
                yield e, index, pair

    def piece_count(self) -> int:
        '''
        Returns the total number of piece pairs in the dataset.
        '''
        if self.pieces is None: return 0
        return sum(len(p) for p in self.pieces.values())

    def save(self, evaluations_path: str, embeddings_path: str):
        '''
        Saves the dataset to the specified evaluations and embeddings JSON
        Lines files.
        '''
        evaluations, embeddings = self.to_jsonl()
        with open(os.path.expanduser(evaluations_path), 'w') as f:
            f.write(evaluations)
        with open(os.path.expanduser(embeddings_path), 'w') as f:
            f.write(embeddings)

    def subset(self, ids: Iterable[str]) -> EvaluationDataset:
        '''
        Returns a new dataset restricted to the specified example ids (in the
        order given), keeping only the embeddings and pieces they reference.
        '''
        examples = [self.example(i) for i in ids]
        used = set()
        for e in examples:
            used.add(e.source_embedding_id)
            used.add(e.reference_embedding_id)
        embeddings = {k: v for k, v in self.embeddings.items() if k in used}
        pieces = None
        if not self.pieces is None:
            pieces = {e.example_id: self.pieces[e.example_id] for e in examples}
        return EvaluationDataset(embeddings=embeddings, examples=examples, pieces=pieces)

    def systems(self) -> list[str]:
        '''
        Returns the sorted set of system ids within this dataset.
        '''
        return sorted(set(e.system_id for e in self.examples))

    def to_jsonl(self) -> tuple[str, str]:
        '''
        Converts the dataset into the text of its evaluations and embeddings
        JSON Lines files. Piece embeddings follow the utterance embeddings and
        carry their `piece_of`, `side` and `index` keys.
        '''
        evaluations = ''.join(json.dumps(e.to_dict()) + '\n' for e in self.examples)
        lines = [json.dumps(v.to_dict()) for v in self.embeddings.values()]
        if not self.pieces is None:
            for example_id, pairs in self.pieces.items():
                for index, pair in enumerate(pairs):
                    for side, emb in zip(SIDES, (pair.source, pair.reference)):
                        rep = emb.to_dict()
                        rep['piece_of'] = example_id
                        rep['side'] = side
                        rep['index'] = index
                        lines.append(json.dumps(rep))
        return evaluations, ''.join(l + '\n' for l in lines)

    def validate(self):
        '''
        Checks the dataset invariants: a shared embedding dimension, resolvable
        embedding references, and well-formed piece lists.
        '''
        dims = set(len(v) for v in self.embeddings.values())
        if len(dims) > 1:
            raise DimensionError(f'embedding dimensions differ within dataset: {sorted(dims)}')
        for e in self.examples:
            for ref in (e.source_embedding_id, e.reference_embedding_id):
                if not ref in self.embeddings:
                    raise DatasetError(f'example "{e.example_id}" references unknown embedding "{ref}"')
        if self.pieces is None: return
        for e in self.examples:
            if not e.example_id in self.pieces:
                raise DatasetError(f'example "{e.example_id}" has no pieces while others do')
        for example_id, pairs in self.pieces.items():
            if not example_id in self._index:
                raise DatasetError(f'pieces reference unknown example "{example_id}"')
            if not pairs:
                raise DatasetError(f'example "{example_id}" has an empty piece list')
            for pair in pairs:
                for emb in (pair.source, pair.reference):
                    if dims and len(emb) not in dims:
                        raise DimensionError(f'piece embedding "{emb.id}" has dimension {len(emb)}, expected {min(dims)}')
