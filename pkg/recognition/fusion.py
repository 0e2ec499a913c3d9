"""
Score normalization, score-level fusion and image-level fusion.

🔍 EXPLANATION FOR BEGINNERS:
Shape and color matchers produce scores on different scales. Before the two
score matrices can be combined they are mapped to a common scale:
- MinMax:  (S - min S) / (max S - min S)           → values in [0, 1]
- Zscore:  (S - mean S) / std S  (sample std)       → mean 0, std 1

Then a rule combines them cell by cell: mean, min, max or product.

Image-level fusion works one step earlier: the shape and color vectors are
concatenated (after standardizing each half) and a single subspace is
trained on the result.
"""
import enum
import logging

import numpy as np

from rangeface.errors import FusionError, ScoreNormalizationError
from recognition.matcher import Normalization

logger = logging.getLogger(__name__)

COLOR_PLANES = 3


class FusionRule(str, enum.Enum):
    MEAN = 'mean'
    MIN = 'min'
    MAX = 'max'
    PRODUCT = 'product'


class NormalizationScope(str, enum.Enum):
    GLOBAL = 'global'           # statistics over the whole matrix
    PER_PROBE = 'per_probe'     # statistics per probe column


def _minmax(values, axis):
    low = values.min(axis=axis, keepdims=True)
    high = values.max(axis=axis, keepdims=True)
    if np.any(high <= low):
        raise ScoreNormalizationError('minmax normalization of a constant score set')
    return (values - low) / (high - low)


def _zscore(values, axis):
    if values.size < 2 or (axis is not None and values.shape[axis] < 2):
        raise ScoreNormalizationError('zscore normalization needs at least 2 scores')
    mean = values.mean(axis=axis, keepdims=True)
    std = values.std(axis=axis, ddof=1, keepdims=True)
    if np.any(std <= 0):
        raise ScoreNormalizationError('zscore normalization of a constant score set')
    return (values - mean) / std


def normalize_scores(matrix, method, scope=NormalizationScope.GLOBAL):
    """
    Map a raw score matrix to a common scale.

    Re-applying the method a matrix already carries is allowed (MinMax is a
    fixed point); switching from one normalization to another is not.
    """
    method = Normalization(method)
    scope = NormalizationScope(scope)
    if method == Normalization.RAW:
        raise ScoreNormalizationError('choose minmax or zscore')
    if matrix.normalization not in (Normalization.RAW, method):
        raise ScoreNormalizationError(
            f'matrix is already {matrix.normalization.value}-normalized, cannot apply {method.value}'
        )
    axis = None if scope == NormalizationScope.GLOBAL else 0
    values = matrix.values
    if method == Normalization.MINMAX:
        normalized = _minmax(values, axis)
    else:
        normalized = _zscore(values, axis)
    return matrix.with_values(normalized, normalization=method)


RULES = {
    FusionRule.MEAN: lambda a, b: (a + b) / 2.0,
    FusionRule.MIN: np.minimum,
    FusionRule.MAX: np.maximum,
    FusionRule.PRODUCT: np.multiply,
}


def fuse_scores(m3d, m2d, rule, allow_signed_product=False, modality='fused'):
    """
    Combine two normalized score matrices cell by cell.

    The product of Zscore-normalized distances flips sign whenever exactly
    one factor is negative, which inverts the ordering; it is refused unless
    ``allow_signed_product`` is set.
    """
    rule = FusionRule(rule)
    if m3d.gallery_ids != m2d.gallery_ids or m3d.probe_ids != m2d.probe_ids:
        raise FusionError('score matrices have different gallery/probe axes')
    if m3d.polarity != m2d.polarity:
        raise FusionError('score matrices have different polarity')
    if m3d.normalization != m2d.normalization:
        raise FusionError(
            f'score matrices use different normalizations '
            f'({m3d.normalization.value} vs {m2d.normalization.value})'
        )
    if rule == FusionRule.PRODUCT and m3d.normalization != Normalization.MINMAX and not allow_signed_product:
        raise FusionError(
            f'product rule on {m3d.normalization.value} scores is ambiguous: '
            'negative scores flip the sign of the product; use minmax or allow_signed_product'
        )
    fused = RULES[rule](m3d.values, m2d.values)
    logger.debug('fused %s + %s with %s rule', m3d.modality, m2d.modality, rule.value)
    return m3d.with_values(fused, modality=modality)


def standardize_block(block):
    block = np.asarray(block, dtype=np.float64).reshape(-1)
    if block.size < 2:
        raise FusionError('a block needs at least 2 values to standardize')
    std = block.std(ddof=1)
    if not std > 0:
        raise FusionError('zero-variance block cannot be standardized')
    return (block - block.mean()) / std


def fuse_image(shape_vec, color_vec, standardize=True, expected_length=None):
    """
    Concatenate shape then color; each block standardized on its own unless
    ``standardize`` is False (raw concatenation).

    The color block holds one plane (luminance) or three (rgb) of the shape
    grid; ``expected_length`` is the shape block length, R² for an R×R grid.
    """
    shape_vec = np.asarray(shape_vec, dtype=np.float64).reshape(-1)
    color_vec = np.asarray(color_vec, dtype=np.float64).reshape(-1)
    if expected_length is not None and len(shape_vec) != expected_length:
        raise FusionError(f'shape block has {len(shape_vec)} values, expected {expected_length}')
    if len(color_vec) not in (len(shape_vec), COLOR_PLANES * len(shape_vec)):
        raise FusionError(
            f'color block of {len(color_vec)} values does not match a shape block of {len(shape_vec)}'
        )
    if standardize:
        shape_vec = standardize_block(shape_vec)
        color_vec = standardize_block(color_vec)
    return np.concatenate([shape_vec, color_vec])
