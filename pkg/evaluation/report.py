"""
CSV and SVG output for CMC / ROC curves.

Figures are drawn with matplotlib's object-oriented API (no pyplot global
state) and saved without a date stamp and with a fixed hash salt, so the
same curves always produce the same SVG bytes.
"""
import csv
import io
import logging
import re
from pathlib import Path

import matplotlib

matplotlib.use('Agg')

from matplotlib.figure import Figure  # noqa: E402

from evaluation.evalkit import CmcCurve, RocCurve  # noqa: E402
from rangeface.artifacts import config_comment, open_artifact, write_artifact  # noqa: E402
from rangeface.errors import EvaluationError  # noqa: E402
from scans.mesh import format_float  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = 'rangeface'


def slugify(label):
    return re.sub(r'[^A-Za-z0-9]+', '-', label).strip('-').lower() or 'curve'


def cmc_csv(curve, config_hash=None):
    buffer = io.StringIO()
    buffer.write(config_comment(config_hash))
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['rank', 'rate'])
    for rank, rate in zip(curve.ranks.tolist(), curve.rates.tolist()):
        writer.writerow([rank, format_float(rate)])
    return buffer.getvalue()


def roc_csv(curve, config_hash=None):
    buffer = io.StringIO()
    buffer.write(config_comment(config_hash))
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['threshold', 'far', 'tar'])
    for threshold, far, tar in zip(curve.thresholds.tolist(), curve.far.tolist(), curve.tar.tolist()):
        writer.writerow([format_float(threshold), format_float(far), format_float(tar)])
    return buffer.getvalue()


def _figure(curves, labels, title):
    figure = Figure(figsize=(6.4, 4.8))
    axes = figure.add_subplot(1, 1, 1)
    if isinstance(curves[0], CmcCurve):
        for curve, label in zip(curves, labels):
            axes.plot(curve.ranks, curve.rates, label=label, linewidth=1.2)
        axes.set_xlabel('Rank')
        axes.set_ylabel('Cumulative match rate')
        axes.set_xlim(1, max(curve.gallery_size for curve in curves))
    else:
        for curve, label in zip(curves, labels):
            axes.step(curve.far, curve.tar, where='post', label=label, linewidth=1.2)
        axes.set_xlabel('False accept rate')
        axes.set_ylabel('Verification rate (1 - FRR)')
        axes.set_xlim(0.0, 1.0)
    axes.set_ylim(0.0, 1.02)
    axes.grid(True, linewidth=0.3)
    axes.legend(loc='lower right', fontsize='small')
    if title:
        axes.set_title(title)
    return figure


def emit_report(curves, labels, out_dir, name, title=None, config_hash=None):
    """
    Write one CSV per curve and one SVG figure holding all of them.

    Returns the list of written paths (CSVs first, SVG last).
    """
    curves = list(curves)
    labels = list(labels)
    if not curves:
        raise EvaluationError('nothing to report')
    if len(labels) != len(curves):
        raise EvaluationError('one label per curve is required')
    kinds = {type(curve) for curve in curves}
    if len(kinds) != 1 or not kinds <= {CmcCurve, RocCurve}:
        raise EvaluationError('a figure holds either CMC or ROC curves, not both')
    slugs = [slugify(label) for label in labels]
    if len(set(slugs)) != len(slugs):
        clashing = sorted({slug for slug in slugs if slugs.count(slug) > 1})
        raise EvaluationError(f'labels map to the same file name: {", ".join(clashing)}')

    out_dir = Path(out_dir)
    written = []
    for curve, slug in zip(curves, slugs):
        if isinstance(curve, CmcCurve):
            text = cmc_csv(curve, config_hash)
        else:
            text = roc_csv(curve, config_hash)
        written.append(write_artifact(out_dir / f'{name}_{slug}.csv', text))

    figure = _figure(curves, labels, title)
    metadata = {'Date': None}
    if config_hash:
        metadata['Description'] = f'config={config_hash}'
    svg_path = out_dir / f'{name}.svg'
    with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT}):
        with open_artifact(svg_path, 'wb') as handle:
            figure.savefig(handle, format='svg', metadata=metadata)
    written.append(svg_path)
    logger.info('report %s: %d curves', name, len(curves))
    return written
