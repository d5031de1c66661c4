'''
Contains the `spsim` command-line interface.
'''

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from typing import Any, Optional

from . import __VERSION__
from .config import Config
from .distance import DistanceMetric, baseline_correlation
from .embedder import build_pair_evaluations, train_toy_embedder
from .errors import DatasetError, SpsimError
from .example import EvaluationDataset
from .graphics import (
    curves_figure,
    discrepancy_histogram,
    histogram_figure,
    histogram_svg,
    mean_score_histogram,
    scatter_figure,
    scatter_svg,
    write_html
)
from .network import LOSS_KINDS, LossSpec
from .parser import Parser, load_dataset, save_truth
from .stats import listener_split_upper_bound
from .synthetic import generate_synthetic, split_into_pieces
from .trainer import (
    CvResult,
    compare_losses,
    cross_validate,
    evaluate_pieces,
    fold_seed,
    load_checkpoint,
    make_plan,
    predict_pair,
    save_checkpoint,
    train
)

logger = logging.getLogger(__name__)


def dumps(obj: Any) -> str:
    '''
    Serializes metric output. Keys are sorted so identical results produce
    identical bytes.
    '''
    return json.dumps(obj, sort_keys=True, indent=2) + '\n'


def write_text(path: str, content: str):
    with open(path, 'w') as f:
        f.write(content)


class Run:
    '''
    The context of a single command: its arguments, resolved configuration
    and output directory. Every run ends by writing `manifest.json`.
    '''

    def __init__(self, command: str, args: argparse.Namespace, config: Config):
        self.command = command
        self.args = args
        self.config = config
        self.started = time.monotonic()
        self.fingerprint: Optional[str] = None
        os.makedirs(args.out, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.args.out, name)

    def dataset(self) -> EvaluationDataset:
        dataset = load_dataset(self.args.evaluations, self.args.embeddings)
        self.fingerprint = dataset.fingerprint()
        return dataset

    def write_json(self, name: str, obj: dict) -> str:
        content = dumps(obj)
        write_text(self.path(name), content)
        return content

    def write_manifest(self):
        arguments = {k: v for k, v in vars(self.args).items() if k != 'func'}
        self.write_json('manifest.json', {
            'command': self.command,
            'config': {'arguments': arguments, 'sections': self.config.to_dict()},
            'dataset_fingerprint': self.fingerprint,
            'version': __VERSION__,
            'wall_time': time.monotonic() - self.started
        })
        logger.info('%s: outputs written to %s', self.command, self.args.out)


def write_cv_outputs(run: Run, name: str, result: CvResult):
    '''
    Writes the report, prediction and curve tables and the figures of a
    cross-validation result.
    '''
    report = result.to_dict()
    report['dataset_fingerprint'] = run.fingerprint
    run.write_json(f'{name}.json', report)
    predictions = result.predictions_frame()
    predictions.to_csv(run.path('predictions.csv'), index=False)
    curves = result.curves_frame()
    curves.to_csv(run.path('curves.csv'), index=False)
    values = predictions['prediction'].to_numpy()
    means = predictions['mean'].to_numpy()
    sds = predictions['sd'].to_numpy()
    write_text(run.path('scatter.svg'), scatter_svg(values, means, sds))
    if run.args.html:
        write_html(scatter_figure(values, means, sds), run.path('scatter.html'))
        write_html(curves_figure(curves), run.path('curves.html'))
    print(dumps(report['pooled']), end='')


def write_distribution_figures(run: Run, dataset: EvaluationDataset):
    figures = [
        ('discrepancies', discrepancy_histogram(dataset), 'Mean minus individual score'),
        ('mean_scores', mean_score_histogram(dataset), 'Mean score')
    ]
    for name, hist, label in figures:
        write_text(run.path(f'{name}.svg'), histogram_svg(hist, x_label=label))
        if run.args.html:
            write_html(histogram_figure(hist, x_label=label), run.path(f'{name}.html'))


def cmd_synth(run: Run):
    '''
    Generates a synthetic evaluation dataset and its latent truth table,
    optionally split into pieces.
    '''
    dataset, truth = generate_synthetic(run.config['synthetic'])
    if run.args.pieces:
        pieces = run.config['pieces']
        dataset = split_into_pieces(dataset, pieces.piece_jitter_sd, pieces.pieces_per_utterance, pieces.rng_seed)
    dataset.save(run.path('evaluations.jsonl'), run.path('embeddings.jsonl'))
    save_truth(truth, run.path('truth.jsonl'))
    run.fingerprint = dataset.fingerprint()


def cmd_baseline(run: Run):
    '''
    Correlates embedding distances with averaged listener scores.
    '''
    metric = DistanceMetric.parse(run.args.metric)
    dataset = run.dataset()
    content = run.write_json('baseline.json', {
        'metric': metric.value,
        'normalize': run.args.normalize,
        'pearson': baseline_correlation(dataset, metric, run.args.normalize),
        'n': len(dataset),
        'dataset_fingerprint': run.fingerprint
    })
    print(content, end='')


def cmd_cv(run: Run):
    '''
    Cross-validates the regressor with the requested loss.
    '''
    loss = LossSpec(kind=run.args.loss, epsilon_sd=run.args.epsilon_sd)
    dataset = run.dataset()
    cv = run.config['cv']
    plan = make_plan(dataset, cv.n_folds, cv.grouping, cv.rng_seed)
    result = cross_validate(dataset, loss, run.config['network'], run.config['training'], plan, jobs=cv.jobs)
    write_cv_outputs(run, 'cv', result)
    write_distribution_figures(run, dataset)
    if run.args.save_model:
        model = train(dataset, dataset.ids(), loss, run.config['network'], run.config['training'], fold_seed(cv.rng_seed, cv.n_folds))
        save_checkpoint(model, run.args.save_model)


def cmd_upper_bound(run: Run):
    '''
    Estimates the listener agreement upper bound.
    '''
    dataset = run.dataset()
    config = run.config['upper_bound']
    n_trials = config.n_trials if run.args.trials is None else run.args.trials
    res = listener_split_upper_bound(dataset, n_trials, config.rng_seed, config.jobs)
    report = res.to_dict()
    report['dataset_fingerprint'] = run.fingerprint
    print(run.write_json('upper_bound.json', report), end='')


def cmd_pieces(run: Run):
    '''
    Cross-validates in sub-utterance mode, splitting the dataset into pieces
    first if it has none.
    '''
    dataset = run.dataset()
    if not dataset.has_pieces():
        pieces = run.config['pieces']
        dataset = split_into_pieces(dataset, pieces.piece_jitter_sd, pieces.pieces_per_utterance, pieces.rng_seed)
    loss = LossSpec(kind=run.args.loss, epsilon_sd=run.args.epsilon_sd)
    cv = run.config['cv']
    plan = make_plan(dataset, cv.n_folds, cv.grouping, cv.rng_seed)
    result = evaluate_pieces(run.config['network'], dataset, plan, loss=loss, train_config=run.config['training'], jobs=cv.jobs)
    write_cv_outputs(run, 'pieces', result)


def cmd_embedder_demo(run: Run):
    '''
    Trains a toy embedder and exports its embeddings together with an
    evaluation dataset over pairs of its utterances.
    '''
    corpus = run.config['corpus']
    model, batch, report = train_toy_embedder(run.args.objective, corpus, run.config['embedder'], corpus.rng_seed)
    dataset = build_pair_evaluations(batch, model, run.config['synthetic'])
    dataset.save(run.path('evaluations.jsonl'), run.path('embeddings.jsonl'))
    run.fingerprint = dataset.fingerprint()
    report['dataset_fingerprint'] = run.fingerprint
    print(run.write_json('quality.json', report), end='')


def cmd_predict(run: Run):
    '''
    Scores a single embedding pair with a saved model.
    '''
    model = load_checkpoint(run.args.checkpoint)
    embeddings, _ = Parser().parse_embeddings_content(Parser.read_file(run.args.embeddings))
    for key in (run.args.source, run.args.reference):
        if not key in embeddings:
            raise DatasetError(f'unknown embedding "{key}"')
    score = predict_pair(model, embeddings[run.args.source].vector, embeddings[run.args.reference].vector)
    print(run.write_json('prediction.json', {
        'source': run.args.source,
        'reference': run.args.reference,
        'score': score,
        'model_fingerprint': model.dataset_fingerprint
    }), end='')


def cmd_compare(run: Run):
    '''
    Tabulates the cross-validated metrics of several losses next to the
    listener agreement upper bound.
    '''
    kinds = [k.strip() for k in run.args.losses.split(',') if k.strip()]
    for kind in kinds: LossSpec(kind=kind)
    dataset = run.dataset()
    table, _ = compare_losses(
        dataset, kinds, run.config['network'], run.config['training'], run.config['cv'],
        upper_bound = run.config['upper_bound'],
        epsilon_sd  = run.args.epsilon_sd
    )
    table.to_csv(run.path('compare.csv'), index=False)
    rows = json.loads(table.to_json(orient='records', double_precision=15))
    print(run.write_json('compare.json', {'rows': rows, 'dataset_fingerprint': run.fingerprint}), end='')


class ArgumentParser(argparse.ArgumentParser):
    '''
    Reports usage errors as a single `error usage: <message>` line on stderr
    and exits with status 2.
    '''

    def error(self, message: str):
        print(f'error usage: {" ".join(message.split())}', file=sys.stderr)
        sys.exit(2)


def build_parser() -> ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML configuration file')
    common.add_argument('--out', default='.', help='output directory (default: current directory)')
    common.add_argument('--seed', type=int, help='overrides every configured random seed')
    common.add_argument('--html', action='store_true', help='also write interactive HTML figures')
    common.add_argument('-v', '--verbose', action='count', default=0, help='increase log verbosity (-v, -vv)')
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--evaluations', required=True, help='evaluations JSON Lines file')
    data.add_argument('--embeddings', required=True, help='embeddings JSON Lines file')
    loss = argparse.ArgumentParser(add_help=False)
    loss.add_argument('--loss', default='mahalanobis', help=f'training loss ({", ".join(LOSS_KINDS)})')
    loss.add_argument('--epsilon-sd', type=float, default=1.0, help='floor of the score standard deviation')

    parser = ArgumentParser(prog='spsim', description='Predicts speaker similarity scores from speaker embeddings.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__VERSION__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', parents=[common], help='generate a synthetic dataset')
    p.add_argument('--pieces', action='store_true', help='also split every utterance into pieces')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('baseline', parents=[common, data], help='correlate embedding distances with scores')
    p.add_argument('--metric', default='cosine', help='distance metric (euclidean, cosine)')
    p.add_argument('--normalize', action='store_true', help='length-normalize embeddings first')
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser('cv', parents=[common, data, loss], help='cross-validate the regressor')
    p.add_argument('--save-model', help='also train on the full dataset and save the model checkpoint here')
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser('upper-bound', parents=[common, data], help='estimate the listener agreement upper bound')
    p.add_argument('--trials', type=int, help='number of listener splits')
    p.set_defaults(func=cmd_upper_bound)

    p = sub.add_parser('pieces', parents=[common, data], help='cross-validate in sub-utterance mode')
    p.add_argument('--loss', default='mahalanobis-single', help=f'training loss ({", ".join(LOSS_KINDS)})')
    p.add_argument('--epsilon-sd', type=float, default=1.0, help='floor of the score standard deviation')
    p.set_defaults(func=cmd_pieces)

    p = sub.add_parser('embedder-demo', parents=[common], help='train a toy speaker embedder')
    p.add_argument('--objective', default='ge2e', help='training objective (ge2e, bce)')
    p.set_defaults(func=cmd_embedder_demo)

    p = sub.add_parser('predict', parents=[common], help='score an embedding pair with a saved model')
    p.add_argument('--checkpoint', required=True, help='model checkpoint written by "cv --save-model"')
    p.add_argument('--embeddings', required=True, help='embeddings JSON Lines file')
    p.add_argument('--source', required=True, help='source embedding id')
    p.add_argument('--reference', required=True, help='reference embedding id')
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser('compare', parents=[common, data], help='compare losses against the upper bound')
    p.add_argument('--losses', default=','.join(LOSS_KINDS), help='comma-separated losses to compare')
    p.add_argument('--epsilon-sd', type=float, default=1.0, help='floor of the score standard deviation')
    p.set_defaults(func=cmd_compare)
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    '''
    Loads the configuration and applies the `--seed` flag to every seeded
    section.
    '''
    config = Config(data_path=args.config)
    if not args.seed is None:
        for section in ['synthetic', 'cv', 'upper_bound', 'pieces', 'corpus']:
            config = config.override(section, rng_seed=args.seed)
    return config


def main(argv: Optional[list[str]] = None) -> int:
    '''
    Runs the command line interface, returning the exit status. Failures are
    reported on stderr as a single `error <code>: <message>` line.
    '''
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')
    try:
        run = Run(args.command, args, resolve_config(args))
        args.func(run)
        run.write_manifest()
    except SpsimError as err:
        message = ' '.join(str(err).split())
        print(f'error {err.code}: {message}', file=sys.stderr)
        return 1
    except OSError as err:
        message = ' '.join(str(err).split())
        print(f'error {DatasetError.code}: {message}', file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
