'''
Contains the definition of the evaluation/embedding JSON Lines parser.
'''

import json
import logging
import os

from .errors import DatasetError, DimensionError, SpsimError
from .example import EvaluationDataset, EvaluationExample, PiecePair, SIDES, SpeakerEmbedding

logger = logging.getLogger(__name__)


class Parser:
    '''
    Parses evaluation and embedding JSON Lines files into evaluation datasets.
    Errors raised while parsing a record report the offending line number.
    '''
    def __init__(self):
        '''
        Creates a new instance of a dataset parser.
        '''

    @staticmethod
    def read_file(path: str) -> str:
        '''
        Reads the full content of the specified file.
        '''
        full_path = os.path.expanduser(path)
        if not os.path.isfile(full_path):
            raise DatasetError(f'specified path "{path}" does not exist')
        try:
            with open(full_path, 'r', encoding='utf-8') as f:
                return f.read()
        except (OSError, UnicodeDecodeError) as err:
            raise DatasetError(f'unable to read file "{path}" - {err}')

    @staticmethod
    def records(content: str, kind: str) -> list[tuple[int, dict]]:
        '''
        Splits JSON Lines content into `(line number, object)` tuples, skipping
        blank lines.
        '''
        res = []
        for n, line in enumerate(content.splitlines(), start=1):
            if not line.strip(): continue
            try:
                rep = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f'{kind} line {n}: malformed record - {err.msg}')
            if not isinstance(rep, dict):
                raise DatasetError(f'{kind} line {n}: malformed record - expected a JSON object')
            res.append((n, rep))
        return res

    def load_dataset(self, evaluations_path: str, embeddings_path: str) -> EvaluationDataset:
        '''
        Loads an evaluation dataset from the specified evaluations and
        embeddings files.
        '''
        dataset = self.parse_dataset_content(
            evaluations = Parser.read_file(evaluations_path),
            embeddings  = Parser.read_file(embeddings_path)
        )
        logger.info(
            'loaded %d examples, %d embeddings (dimension %d) from "%s"',
            len(dataset), len(dataset.embeddings), dataset.dimension(), evaluations_path
        )
        return dataset

    def parse_dataset_content(self, evaluations: str, embeddings: str) -> EvaluationDataset:
        '''
        A sister method of `load_dataset()`, this function parses the string
        content of an evaluations file and an embeddings file.
        '''
        utterances, piece_records = self.parse_embeddings_content(embeddings)
        examples = self.parse_evaluations_content(evaluations)
        known = set(utterances)
        example_ids = set(e.example_id for e in examples)
        for n, e in examples_with_lines(examples, evaluations):
            for ref in (e.source_embedding_id, e.reference_embedding_id):
                if not ref in known:
                    raise DatasetError(f'evaluations line {n}: example "{e.example_id}" references unknown embedding "{ref}"')
        pieces = None
        if piece_records:
            pieces = {}
            for example_id, by_index in piece_records.items():
                if not example_id in example_ids:
                    raise DatasetError(f'embeddings: pieces reference unknown example "{example_id}"')
                pairs = []
                for index in range(len(by_index)):
                    if not index in by_index or len(by_index[index]) != 2:
                        raise DatasetError(f'embeddings: example "{example_id}" has incomplete piece {index}')
                    pairs.append(PiecePair(source=by_index[index]['source'], reference=by_index[index]['reference']))
                pieces[example_id] = pairs
            for e in examples:
                if not e.example_id in pieces:
                    raise DatasetError(f'embeddings: example "{e.example_id}" has no pieces while others do')
        return EvaluationDataset(embeddings=utterances, examples=examples, pieces=pieces)

    def parse_embeddings_content(self, content: str) -> tuple[dict[str, SpeakerEmbedding], dict[str, dict[int, dict[str, SpeakerEmbedding]]]]:
        '''
        Parses the content of an embeddings file into a dictionary of utterance
        embeddings and a nested dictionary of piece embeddings of the form
        `{example_id: {index: {side: embedding}}}`.
        '''
        utterances = {}
        pieces = {}
        seen = set()
        dim = None
        for n, rep in Parser.records(content, 'embeddings'):
            try:
                emb = SpeakerEmbedding.from_dict(rep)
            except KeyError as err:
                raise DatasetError(f'embeddings line {n}: malformed record - missing key {err}')
            except (TypeError, ValueError) as err:
                raise DatasetError(f'embeddings line {n}: malformed record - {err}')
            except SpsimError as err:
                raise type(err)(f'embeddings line {n}: {err}')
            if dim is None:
                dim = len(emb)
            elif len(emb) != dim:
                raise DimensionError(f'embeddings line {n}: dimension mismatch - "{emb.id}" has dimension {len(emb)}, expected {dim}')
            if emb.id in seen:
                raise DatasetError(f'embeddings line {n}: duplicate embedding id "{emb.id}"')
            seen.add(emb.id)
            if 'piece_of' in rep:
                side = rep.get('side')
                index = rep.get('index')
                if not side in SIDES:
                    raise DatasetError(f'embeddings line {n}: piece side must be one of {list(SIDES)}')
                if not isinstance(index, int) or isinstance(index, bool) or index < 0:
                    raise DatasetError(f'embeddings line {n}: piece index must be a non-negative integer')
                slot = pieces.setdefault(str(rep['piece_of']), {}).setdefault(index, {})
                if side in slot:
                    raise DatasetError(f'embeddings line {n}: duplicate {side} piece {index} of "{rep["piece_of"]}"')
                slot[side] = emb
            else:
                utterances[emb.id] = emb
        return utterances, pieces

    def parse_evaluations_content(self, content: str) -> list[EvaluationExample]:
        '''
        Parses the content of an evaluations file into a list of examples.
        '''
        examples = []
        seen = set()
        for n, rep in Parser.records(content, 'evaluations'):
            try:
                e = EvaluationExample.from_dict(rep)
            except KeyError as err:
                raise DatasetError(f'evaluations line {n}: malformed record - missing key {err}')
            except (TypeError, ValueError) as err:
                raise DatasetError(f'evaluations line {n}: malformed record - {err}')
            except SpsimError as err:
                raise type(err)(f'evaluations line {n}: {err}')
            if e.example_id in seen:
                raise DatasetError(f'evaluations line {n}: duplicate example id "{e.example_id}"')
            seen.add(e.example_id)
            examples.append(e)
        return examples

    def parse_truth_content(self, content: str) -> dict[str, float]:
        '''
        Parses the content of a latent truth table file.
        '''
        truth = {}
        for n, rep in Parser.records(content, 'truth'):
            try:
                truth[str(rep['example_id'])] = float(rep['latent_score'])
            except (KeyError, TypeError, ValueError) as err:
                raise DatasetError(f'truth line {n}: malformed record - {err}')
        return truth

    def load_truth(self, path: str) -> dict[str, float]:
        '''
        Loads a latent truth table (`example_id` -> latent score).
        '''
        return self.parse_truth_content(Parser.read_file(path))


def examples_with_lines(examples: list[EvaluationExample], content: str) -> list[tuple[int, EvaluationExample]]:
    '''
    Pairs each parsed example with the line number it was read from.
    '''
    lines = [n for n, line in enumerate(content.splitlines(), start=1) if line.strip()]
    return list(zip(lines, examples))


def load_dataset(evaluations_path: str, embeddings_path: str) -> EvaluationDataset:
    '''
    Loads an evaluation dataset. A convenience wrapper around
    `Parser().load_dataset()`.
    '''
    return Parser().load_dataset(evaluations_path, embeddings_path)


def save_dataset(dataset: EvaluationDataset, evaluations_path: str, embeddings_path: str):
    '''
    Saves an evaluation dataset. A convenience wrapper around
    `EvaluationDataset.save()`.
    '''
    dataset.save(evaluations_path, embeddings_path)


def truth_to_jsonl(truth: dict[str, float]) -> str:
    '''
    Converts a latent truth table into JSON Lines text.
    '''
    return ''.join(json.dumps({'example_id': k, 'latent_score': float(v)}) + '\n' for k, v in truth.items())


def save_truth(truth: dict[str, float], path: str):
    '''
    Saves a latent truth table to the specified path.
    '''
    with open(os.path.expanduser(path), 'w') as f:
        f.write(truth_to_jsonl(truth))
