'''
Contains definitions associated with plotting predictions and listener score
distributions, as static SVG documents and as interactive plotly figures.
'''

from __future__ import annotations

import numpy
import pandas as pd
import plotly.graph_objects as go

from typing import Any, Optional
from xml.sax.saxutils import escape

from .example import EvaluationDataset, SCORE_MAX, SCORE_MIN
from .stats import Histogram, discrepancies, histogram, mean_scores

OK_COLOR = '#1f77b4'
WRONG_COLOR = '#d62728'
BAR_COLOR = '#7f7f7f'

WIDTH = 480
HEIGHT = 480
MARGIN = 60

DISCREPANCY_EDGES = numpy.arange(-100.0, 105.0, 5.0)
MEAN_SCORE_EDGES = numpy.arange(0.0, 110.0, 5.0)


class SvgCanvas:
    '''
    Accumulates SVG elements into a standalone document. Coordinates are
    written with a fixed number of decimals, so identical drawings produce
    identical bytes.
    '''

    def __init__(self, width: int = WIDTH, height: int = HEIGHT, title: Optional[str] = None):
        self.width = width
        self.height = height
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n',
            f'<svg version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" xmlns="http://www.w3.org/2000/svg">\n'
        ]
        if title:
            self.parts.append(f'<title>{escape(title)}</title>\n')
            self.text(width / 2, MARGIN / 2, title, extra='text-anchor="middle" font-size="14"')

    def circle(self, x: float, y: float, r: float, fill: str, extra: str = ''):
        self.parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" fill="{fill}" {extra}/>\n')

    def group_end(self):
        self.parts.append('</g>\n')

    def group_start(self, cls: str):
        self.parts.append(f'<g class="{escape(cls)}">\n')

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str = '#000000', extra: str = ''):
        self.parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}" {extra}/>\n')

    def rect(self, x: float, y: float, width: float, height: float, fill: str, extra: str = ''):
        self.parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{width:.2f}" height="{height:.2f}" fill="{fill}" {extra}/>\n')

    def text(self, x: float, y: float, content: str, extra: str = ''):
        self.parts.append(f'<text x="{x:.2f}" y="{y:.2f}" {extra}>{escape(content)}</text>\n')

    def to_string(self) -> str:
        return ''.join(self.parts) + '</svg>\n'


def axes(canvas: SvgCanvas, x_range: tuple[float, float], y_range: tuple[float, float], x_label: str, y_label: str):
    '''
    Draws the plot frame, five ticks per axis and the axis labels.
    '''
    left, right = MARGIN, canvas.width - MARGIN / 2
    top, bottom = MARGIN, canvas.height - MARGIN
    canvas.group_start('axes')
    canvas.line(left, bottom, right, bottom)
    canvas.line(left, top, left, bottom)
    for t in numpy.linspace(0.0, 1.0, 5):
        x = left + t * (right - left)
        y = bottom - t * (bottom - top)
        canvas.line(x, bottom, x, bottom + 4)
        canvas.line(left - 4, y, left, y)
        canvas.text(x, bottom + 16, f'{x_range[0] + t * (x_range[1] - x_range[0]):g}', extra='text-anchor="middle" font-size="10"')
        canvas.text(left - 6, y + 3, f'{y_range[0] + t * (y_range[1] - y_range[0]):g}', extra='text-anchor="end" font-size="10"')
    canvas.text((left + right) / 2, canvas.height - MARGIN / 3, x_label, extra='text-anchor="middle" font-size="12"')
    canvas.text(MARGIN / 3, (top + bottom) / 2, y_label,
        extra=f'text-anchor="middle" font-size="12" transform="rotate(-90 {MARGIN / 3:.2f} {(top + bottom) / 2:.2f})"')
    canvas.group_end()


def projector(canvas: SvgCanvas, x_range: tuple[float, float], y_range: tuple[float, float]) -> Any:
    left, right = MARGIN, canvas.width - MARGIN / 2
    top, bottom = MARGIN, canvas.height - MARGIN
    def project(x: float, y: float) -> tuple[float, float]:
        px = left + (x - x_range[0]) / (x_range[1] - x_range[0]) * (right - left)
        py = bottom - (y - y_range[0]) / (y_range[1] - y_range[0]) * (bottom - top)
        return px, py
    return project


def within_sigma(values: Any, means: Any, sds: Any) -> numpy.ndarray:
    '''
    Returns which predictions lie within one standard deviation of their mean
    score (boundary included).
    '''
    return numpy.abs(numpy.asarray(values) - numpy.asarray(means)) <= numpy.asarray(sds)


def scatter_svg(
    values: Any,
    means: Any,
    sds: Any,
    title: Optional[str] = 'Predictions vs. Mean Scores') -> str:
    '''
    Produces an SVG scatter plot of predictions (x) against mean listener
    scores (y), with one marker element per prediction. Predictions within one
    standard deviation of their mean score are drawn as blue circles
    (`class="marker ok"`); the others as red squares (`class="marker wrong"`).
    '''
    canvas = SvgCanvas(title=title)
    score_range = (SCORE_MIN, SCORE_MAX)
    axes(canvas, score_range, score_range, 'Prediction', 'Mean score')
    project = projector(canvas, score_range, score_range)
    x0, y0 = project(SCORE_MIN, SCORE_MIN)
    x1, y1 = project(SCORE_MAX, SCORE_MAX)
    canvas.line(x0, y0, x1, y1, stroke='#bbbbbb', extra='stroke-dasharray="4 4"')
    ok = within_sigma(values, means, sds)
    canvas.group_start('markers')
    for value, mean, good in zip(values, means, ok):
        x, y = project(float(value), float(mean))
        if good:
            canvas.circle(x, y, 3.0, OK_COLOR, extra='class="marker ok"')
        else:
            canvas.rect(x - 3.0, y - 3.0, 6.0, 6.0, WRONG_COLOR, extra='class="marker wrong"')
    canvas.group_end()
    return canvas.to_string()


def histogram_svg(hist: Histogram, title: Optional[str] = None, x_label: str = 'Value') -> str:
    '''
    Produces an SVG bar chart of a histogram, one `class="bar"` rectangle per
    bin.
    '''
    canvas = SvgCanvas(title=title)
    x_range = (float(hist.edges[0]), float(hist.edges[-1]))
    y_range = (0.0, float(max(1, int(hist.counts.max()) if hist.counts.size else 1)))
    axes(canvas, x_range, y_range, x_label, 'Count')
    project = projector(canvas, x_range, y_range)
    canvas.group_start('bars')
    for lo, hi, count in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
        x0, y0 = project(float(lo), float(count))
        x1, y1 = project(float(hi), 0.0)
        canvas.rect(x0, y0, x1 - x0, y1 - y0, BAR_COLOR, extra='class="bar" stroke="#ffffff"')
    canvas.group_end()
    return canvas.to_string()


def discrepancy_histogram(dataset: EvaluationDataset) -> Histogram:
    '''
    Returns the histogram of differences between mean and individual scores
    over bins of width 5 covering [-100, 100).
    '''
    return histogram(discrepancies(dataset), DISCREPANCY_EDGES)


def mean_score_histogram(dataset: EvaluationDataset) -> Histogram:
    '''
    Returns the histogram of averaged scores over bins of width 5, the last
    one being [100, 105) so that perfect scores are counted.
    '''
    return histogram(mean_scores(dataset), MEAN_SCORE_EDGES)


def scatter_figure(values: Any, means: Any, sds: Any, title: Optional[str] = 'Predictions vs. Mean Scores') -> Any:
    '''
    Produces an interactive plotly scatter plot of predictions against mean
    scores, with error bars of one standard deviation and wrong predictions
    highlighted.
    '''
    ok = within_sigma(values, means, sds)
    values, means, sds = numpy.asarray(values), numpy.asarray(means), numpy.asarray(sds)
    fig = go.Figure()
    for name, mask, color, symbol in [('within 1 sd', ok, OK_COLOR, 'circle'), ('off by at least 1 sd', ~ok, WRONG_COLOR, 'square')]:
        fig.add_trace(go.Scatter(
            x       = values[mask],
            y       = means[mask],
            error_y = dict(type='data', array=sds[mask], visible=True, thickness=0.5),
            marker  = dict(color=color, symbol=symbol),
            mode    = 'markers',
            name    = name
        ))
    fig.add_trace(go.Scatter(x=[SCORE_MIN, SCORE_MAX], y=[SCORE_MIN, SCORE_MAX], mode='lines', name='identity', line=dict(dash='dash')))
    fig.update_layout(
        title = title,
        xaxis_title = 'Prediction',
        yaxis_title = 'Mean score'
    )
    return fig


def histogram_figure(hist: Histogram, title: Optional[str] = None, x_label: str = 'Value') -> Any:
    '''
    Produces an interactive plotly bar chart of a histogram.
    '''
    centers = (hist.edges[:-1] + hist.edges[1:]) / 2.0
    fig = go.Figure()
    fig.add_trace(go.Bar(x=centers, y=hist.counts, width=numpy.diff(hist.edges), marker_color=BAR_COLOR))
    fig.update_layout(
        title = title,
        xaxis_title = x_label,
        yaxis_title = 'Count',
        bargap = 0.0
    )
    return fig


def curves_figure(curves: pd.DataFrame, title: Optional[str] = 'Training Curves') -> Any:
    '''
    Produces a plot of training (solid) and validation (dotted) loss per epoch
    for every fold of a `CvResult.curves_frame()` table.
    '''
    fig = go.Figure()
    for fold, rows in curves.groupby('fold'):
        fig.add_trace(go.Scatter(x=rows['epoch'], y=rows['train_loss'], mode='lines', name=f'fold {fold} train'))
        if rows['val_loss'].notna().any():
            fig.add_trace(go.Scatter(x=rows['epoch'], y=rows['val_loss'], mode='lines', name=f'fold {fold} validation', line=dict(dash='dot')))
    fig.update_layout(
        title = title,
        xaxis_title = 'Epoch',
        yaxis_title = 'Loss'
    )
    return fig


def write_html(fig: Any, path: str):
    '''
    Writes a plotly figure to a standalone HTML file loading plotly from its
    CDN.
    '''
    fig.write_html(path, include_plotlyjs='cdn')
