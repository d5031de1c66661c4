'''
Tests the JSON Lines dataset parser defined within "parser.py".
'''

import pytest

from spsim import Parser, load_dataset, save_dataset
from spsim.errors import DatasetError, DimensionError
from spsim.parser import save_truth, truth_to_jsonl
from spsim.synthetic import generate_synthetic, split_into_pieces

from . import EMBEDDINGS_CONTENT, EVALUATIONS_CONTENT, SMALL_WORLD, world


def test_parse_dataset_content():
    '''
    Tests the ability of the parser to parse evaluation and embedding content.
    '''
    dataset = Parser().parse_dataset_content(evaluations=EVALUATIONS_CONTENT, embeddings=EMBEDDINGS_CONTENT)
    assert len(dataset) == 2
    assert len(dataset.embeddings) == 4
    assert dataset['ex1'].system_id == 'sysA'
    assert [s.score for s in dataset['ex1'].scores] == [40.0, 60.0]
    assert dataset['ex2'].target_speaker_id == 'spk2'

def test_blank_lines_are_skipped():
    '''
    Tests that blank lines do not produce records.
    '''
    dataset = Parser().parse_dataset_content(
        evaluations = '\n' + EVALUATIONS_CONTENT + '\n\n',
        embeddings  = EMBEDDINGS_CONTENT + '\n'
    )
    assert len(dataset) == 2

def test_score_out_of_range_reports_line():
    '''
    Tests that an out-of-range score is reported with its line number.
    '''
    content = EVALUATIONS_CONTENT.replace('"score": 70', '"score": 101')
    with pytest.raises(DatasetError, match='evaluations line 2') as err:
        Parser().parse_dataset_content(evaluations=content, embeddings=EMBEDDINGS_CONTENT)
    assert 'score out of range' in str(err.value)

def test_dimension_mismatch_reports_line():
    '''
    Tests that embeddings of differing dimensions are rejected.
    '''
    content = EMBEDDINGS_CONTENT.replace('[0.0, 1.0, 0.0]', '[0.0, 1.0, 0.0, 2.0]')
    with pytest.raises(DimensionError, match='embeddings line 4: dimension mismatch'):
        Parser().parse_dataset_content(evaluations=EVALUATIONS_CONTENT, embeddings=content)

def test_malformed_records():
    '''
    Tests the errors raised on malformed JSON and missing keys.
    '''
    parser = Parser()
    with pytest.raises(DatasetError, match='embeddings line 2: malformed record'):
        parser.parse_embeddings_content('{"id": "a", "vector": [1, 2]}\n{"id": "b", "vector": [1, 2')
    with pytest.raises(DatasetError, match='embeddings line 1: malformed record'):
        parser.parse_embeddings_content('[1, 2, 3]')
    with pytest.raises(DatasetError, match='evaluations line 1: malformed record - missing key'):
        parser.parse_evaluations_content('{"example_id": "ex1"}')
    with pytest.raises(DatasetError, match='duplicate embedding id'):
        parser.parse_embeddings_content('{"id": "a", "vector": [1, 2]}\n{"id": "a", "vector": [3, 4]}')

def test_dangling_reference():
    '''
    Tests that an example referencing a missing embedding is rejected.
    '''
    content = '\n'.join(l for l in EMBEDDINGS_CONTENT.splitlines() if not 'ex2-src' in l)
    with pytest.raises(DatasetError, match='evaluations line 2: example "ex2" references unknown embedding "ex2-src"'):
        Parser().parse_dataset_content(evaluations=EVALUATIONS_CONTENT, embeddings=content)

def test_missing_file(tmp_path):
    '''
    Tests that loading a missing file raises a dataset error.
    '''
    with pytest.raises(DatasetError, match='does not exist'):
        load_dataset(str(tmp_path / 'missing.jsonl'), str(tmp_path / 'missing-too.jsonl'))

def test_undecodable_file(tmp_path):
    '''
    Tests that a file which is not valid UTF-8 raises a dataset error.
    '''
    evaluations = tmp_path / 'evaluations.jsonl'
    evaluations.write_text(EVALUATIONS_CONTENT)
    embeddings = tmp_path / 'embeddings.jsonl'
    embeddings.write_bytes(b'\xff\xfe' + EMBEDDINGS_CONTENT.encode('utf-8'))
    with pytest.raises(DatasetError, match='unable to read file'):
        Parser.read_file(str(embeddings))
    with pytest.raises(DatasetError, match='unable to read file'):
        load_dataset(str(evaluations), str(embeddings))

def test_save_and_load(tmp_path):
    '''
    Tests that a saved dataset loads back unchanged, pieces included.
    '''
    dataset, _ = generate_synthetic(world(**SMALL_WORLD))
    dataset = split_into_pieces(dataset, piece_jitter_sd=0.1, pieces_per_utterance=2, rng_seed=3)
    evaluations = str(tmp_path / 'evaluations.jsonl')
    embeddings = str(tmp_path / 'embeddings.jsonl')
    save_dataset(dataset, evaluations, embeddings)
    loaded = load_dataset(evaluations, embeddings)
    assert loaded == dataset
    assert loaded.fingerprint() == dataset.fingerprint()
    assert loaded.piece_count() == 2 * len(dataset)
    assert loaded.pieces['ex00003'][1] == dataset.pieces['ex00003'][1]

def test_incomplete_pieces():
    '''
    Tests that a piece without its reference side is rejected.
    '''
    content = EMBEDDINGS_CONTENT + '\n' + '\n'.join([
        '{"id": "p0s", "vector": [0.0, 0.0, 1.1], "piece_of": "ex1", "side": "source", "index": 0}',
        '{"id": "p0r", "vector": [3.0, 4.0, 1.1], "piece_of": "ex1", "side": "reference", "index": 0}',
        '{"id": "p1s", "vector": [1.0, 0.0, 0.1], "piece_of": "ex2", "side": "source", "index": 0}'
    ])
    with pytest.raises(DatasetError, match='incomplete piece 0'):
        Parser().parse_dataset_content(evaluations=EVALUATIONS_CONTENT, embeddings=content)

def test_truth_table(tmp_path):
    '''
    Tests saving and loading latent truth tables.
    '''
    truth = {'ex1': 12.5, 'ex2': 99.0}
    path = str(tmp_path / 'truth.jsonl')
    save_truth(truth, path)
    assert Parser().load_truth(path) == truth
    assert truth_to_jsonl(truth).count('\n') == 2
    with pytest.raises(DatasetError, match='truth line 1'):
        Parser().parse_truth_content('{"example_id": "ex1"}')
