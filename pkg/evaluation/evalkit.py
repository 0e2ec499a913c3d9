"""
Identification (CMC) and verification (ROC) metrics over a score matrix.

🔍 EXPLANATION FOR BEGINNERS:
- CMC: for every probe, find where its true gallery match ranks among all
  gallery entries. CMC(r) is the fraction of probes ranked r or better.
- ROC: sweep an acceptance threshold over all scores. Genuine pairs
  (same subject) should be accepted, impostor pairs rejected. Each
  threshold gives one point (false accept rate, true accept rate).
"""
import logging
from dataclasses import dataclass

import numpy as np

from rangeface.errors import EvaluationError
from recognition.matcher import Polarity

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CmcCurve:
    ranks: np.ndarray
    rates: np.ndarray
    gallery_size: int
    probe_count: int

    @property
    def rank1(self):
        return float(self.rates[0])


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray
    far: np.ndarray
    tar: np.ndarray

    @property
    def points(self):
        return list(zip(self.far.tolist(), self.tar.tolist()))


def _true_match_rows(matrix):
    index = {}
    for row, gallery_id in enumerate(matrix.gallery_ids):
        if gallery_id in index:
            raise EvaluationError(f'gallery id {gallery_id} appears twice')
        index[gallery_id] = row
    try:
        return np.array([index[probe_id] for probe_id in matrix.probe_ids], dtype=np.int64)
    except KeyError as exc:
        raise EvaluationError(f'probe subject {exc.args[0]} is not enrolled in the gallery') from None


def _oriented(matrix):
    """Scores where lower is always better."""
    if matrix.polarity == Polarity.DISTANCE:
        return matrix.values
    return -matrix.values


def rank_of_true_match(matrix):
    """
    1 + number of gallery entries scoring strictly better than the true
    match, per probe. Ties do not count against the probe.
    """
    if not matrix.probe_ids:
        raise EvaluationError('score matrix has no probes')
    rows = _true_match_rows(matrix)
    values = matrix.values
    columns = np.arange(len(rows))
    true_scores = values[rows, columns]
    if matrix.polarity == Polarity.DISTANCE:
        better = values < true_scores[None, :]
    else:
        better = values > true_scores[None, :]
    return 1 + better.sum(axis=0)


def cmc(matrix):
    ranks = rank_of_true_match(matrix)
    gallery_size = len(matrix.gallery_ids)
    probe_count = len(matrix.probe_ids)
    hits = np.bincount(ranks, minlength=gallery_size + 1)[1:gallery_size + 1]
    rates = np.cumsum(hits) / probe_count
    return CmcCurve(np.arange(1, gallery_size + 1), rates, gallery_size, probe_count)


def genuine_impostor_split(matrix):
    """(genuine scores, impostor scores), both oriented lower = better."""
    rows = _true_match_rows(matrix)
    genuine_mask = np.zeros(matrix.shape, dtype=bool)
    genuine_mask[rows, np.arange(len(rows))] = True
    scores = _oriented(matrix)
    return scores[genuine_mask], scores[~genuine_mask]


def roc(matrix):
    """
    One (FAR, TAR) point per distinct score threshold plus the (0, 0)
    endpoint, deduplicated and sorted by FAR.

    For distances a pair is accepted when score ≤ threshold; for
    similarities when score ≥ threshold.
    """
    genuine, impostor = genuine_impostor_split(matrix)
    if not len(genuine):
        raise EvaluationError('no genuine pairs')
    if not len(impostor):
        raise EvaluationError('no impostor pairs')

    genuine = np.sort(genuine)
    impostor = np.sort(impostor)
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    accepted_genuine = np.searchsorted(genuine, thresholds, side='right')
    accepted_impostor = np.searchsorted(impostor, thresholds, side='right')
    tar = np.concatenate([[0.0], accepted_genuine / len(genuine)])
    far = np.concatenate([[0.0], accepted_impostor / len(impostor)])
    thresholds = np.concatenate([[-np.inf], thresholds])

    keep = np.ones(len(far), dtype=bool)
    keep[1:] = (far[1:] != far[:-1]) | (tar[1:] != tar[:-1])
    far, tar, thresholds = far[keep], tar[keep], thresholds[keep]
    if matrix.polarity == Polarity.SIMILARITY:
        thresholds = -thresholds
    return RocCurve(thresholds, far, tar)


def tar_at_far(curve, far=0.01):
    """Best verification rate with false accept rate at most ``far``."""
    allowed = curve.tar[curve.far <= far]
    return float(allowed.max()) if len(allowed) else 0.0
