"""
Distances between feature vectors and gallery × probe score matrices.
"""
import csv
import enum
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from rangeface.artifacts import write_artifact
from rangeface.concurrency import ordered_map
from rangeface.errors import ArtifactError, MatchError
from scans.mesh import format_float

logger = logging.getLogger(__name__)


class Polarity(str, enum.Enum):
    DISTANCE = 'distance'       # lower is better
    SIMILARITY = 'similarity'   # higher is better


class Normalization(str, enum.Enum):
    RAW = 'raw'
    MINMAX = 'minmax'
    ZSCORE = 'zscore'


class Metric(str, enum.Enum):
    L1 = 'l1'
    MAHALANOBIS = 'mahalanobis'


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """
    values[i][j] compares gallery_ids[i] with probe_ids[j].

    Polarity and normalization are always set; fusion and evaluation refuse
    to guess them.
    """

    values: np.ndarray
    gallery_ids: tuple
    probe_ids: tuple
    polarity: Polarity = Polarity.DISTANCE
    modality: str = 'shape'
    normalization: Normalization = Normalization.RAW
    config_hash: str = field(default='', compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise MatchError('score values must be a 2D matrix')
        gallery_ids = tuple(str(g) for g in self.gallery_ids)
        probe_ids = tuple(str(p) for p in self.probe_ids)
        if values.shape != (len(gallery_ids), len(probe_ids)):
            raise MatchError(
                f'score matrix is {values.shape[0]}x{values.shape[1]} but has '
                f'{len(gallery_ids)} gallery and {len(probe_ids)} probe ids'
            )
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'gallery_ids', gallery_ids)
        object.__setattr__(self, 'probe_ids', probe_ids)
        object.__setattr__(self, 'polarity', Polarity(self.polarity))
        object.__setattr__(self, 'normalization', Normalization(self.normalization))

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)

    def reversed_polarity(self):
        """Negated scores with the opposite polarity; rankings unchanged."""
        flipped = Polarity.SIMILARITY if self.polarity == Polarity.DISTANCE else Polarity.DISTANCE
        return self.with_values(-self.values, polarity=flipped)


def _check_lengths(a, b):
    if len(a) != len(b):
        raise MatchError(f'feature length mismatch: {len(a)} vs {len(b)}')


def _coefficients(feature):
    if hasattr(feature, 'coefficients'):
        return feature.coefficients
    return np.asarray(feature, dtype=np.float64)


def dist_l1(a, b):
    """Σ |a_m - b_m|."""
    a, b = _coefficients(a), _coefficients(b)
    _check_lengths(a, b)
    return float(np.sum(np.abs(a - b)))


def dist_mahalanobis(a, b, eigenvalues):
    """
    -Σ a_m b_m / √λ_m, the eigenvalue-weighted inner product.

    Lower means more similar; values can be negative. This is not a metric.
    """
    a, b = _coefficients(a), _coefficients(b)
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    _check_lengths(a, b)
    _check_lengths(a, eigenvalues)
    if np.any(eigenvalues <= 0):
        raise MatchError('eigenvalues must be positive')
    return float(-np.sum(a * b / np.sqrt(eigenvalues)))


def _unique(ids, axis):
    if not ids:
        raise MatchError(f'{axis} axis is empty')
    if len(set(ids)) != len(ids):
        raise MatchError(f'duplicate ids on the {axis} axis')


def score_matrix(gallery, probes, metric=Metric.L1, eigenvalues=None, modality=None, threads=None):
    """Fill values[i][j] = metric(gallery_i, probe_j); distance polarity, raw."""
    metric = Metric(metric)
    gallery_ids = [feature.subject_id for feature in gallery]
    probe_ids = [feature.subject_id for feature in probes]
    _unique(gallery_ids, 'gallery')
    _unique(probe_ids, 'probe')
    if metric == Metric.MAHALANOBIS and eigenvalues is None:
        raise MatchError('the mahalanobis metric needs eigenvalues')

    if metric == Metric.L1:
        def cell(g, p):
            return dist_l1(g, p)
    else:
        def cell(g, p):
            return dist_mahalanobis(g, p, eigenvalues)

    def row(g):
        return [cell(g, p) for p in probes]

    values = np.array(ordered_map(row, gallery, threads=threads), dtype=np.float64)
    if modality is None:
        modality = getattr(gallery[0], 'modality', 'shape')
        modality = getattr(modality, 'value', modality)
    logger.info('score matrix %s/%s: %dx%d', modality, metric.value, len(gallery), len(probes))
    return ScoreMatrix(values, gallery_ids, probe_ids, Polarity.DISTANCE, modality, Normalization.RAW)


def metric_rankings(matrix):
    """Index of the best gallery entry for every probe column."""
    if matrix.polarity == Polarity.DISTANCE:
        return np.argmin(matrix.values, axis=0)
    return np.argmax(matrix.values, axis=0)


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------

def serialize_score_matrix(matrix):
    buffer = io.StringIO()
    tags = [
        f'polarity={matrix.polarity.value}',
        f'normalization={matrix.normalization.value}',
        f'modality={matrix.modality}',
    ]
    if matrix.config_hash:
        tags.append(f'config={matrix.config_hash}')
    buffer.write('#' + ';'.join(tags) + '\n')
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow([''] + list(matrix.probe_ids))
    for gallery_id, row in zip(matrix.gallery_ids, matrix.values.tolist()):
        writer.writerow([gallery_id] + [format_float(value) for value in row])
    return buffer.getvalue()


def parse_score_matrix(text):
    lines = text.splitlines()
    try:
        if not lines or not lines[0].startswith('#'):
            raise ArtifactError('score matrix is missing its tag row')
        tags = dict(item.split('=', 1) for item in lines[0][1:].split(';') if item)
        rows = list(csv.reader(lines[1:]))
        probe_ids = rows[0][1:]
        gallery_ids = [row[0] for row in rows[1:]]
        values = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
        if not len(gallery_ids):
            values = values.reshape(0, len(probe_ids))
        return ScoreMatrix(
            values,
            gallery_ids,
            probe_ids,
            polarity=tags['polarity'],
            modality=tags.get('modality', ''),
            normalization=tags['normalization'],
            config_hash=tags.get('config', ''),
        )
    except ArtifactError:
        raise
    except (IndexError, KeyError, ValueError, MatchError) as exc:
        raise ArtifactError(f'malformed score matrix: {exc}') from exc


def write_score_matrix(path, matrix):
    return write_artifact(path, serialize_score_matrix(matrix))


def read_score_matrix(path):
    with open(path, newline='') as handle:
        return parse_score_matrix(handle.read())
