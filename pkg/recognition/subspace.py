"""
PCA subspace training and projection.

🔍 EXPLANATION FOR BEGINNERS:
Each range grid becomes a very long vector (16384 depth values). With only
k training scans (k ≪ 16384) the covariance matrix would be enormous but
have at most k-1 useful directions. The "snapshot" trick computes the small
k×k Gram matrix instead, finds its eigenvectors, and maps them back to the
long vectors.

The eigensolver is a cyclic Jacobi sweep with a fixed order, so training is
bit-reproducible from run to run.
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np

from rangeface.artifacts import strip_comments, write_artifact
from rangeface.errors import ArtifactError, TrainingError
from scans.mesh import PoseTag, format_float

logger = logging.getLogger(__name__)

PCA_HEADER = 'rangeface-pca v1'
EIGENVALUE_FLOOR = 1e-10        # relative to the largest eigenvalue
JACOBI_TOLERANCE = 1e-12        # off-diagonals below this times the trace
JACOBI_MAX_SWEEPS = 100


class Modality(str, enum.Enum):
    SHAPE = 'shape'
    COLOR = 'color'
    CONCAT = 'concat'


@dataclass(frozen=True, eq=False)
class Subspace:
    """
    mean (D,), basis (m, D) orthonormal rows in descending eigenvalue
    order, eigenvalues (m,), training count k.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    training_count: int
    modality: Modality = Modality.SHAPE

    def __post_init__(self):
        for name in ('mean', 'basis', 'eigenvalues'):
            value = np.array(getattr(self, name), dtype=np.float64, copy=True)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'modality', Modality(self.modality))
        if self.basis.ndim != 2 or self.basis.shape[1] != self.mean.shape[0]:
            raise TrainingError('basis rows must have the mean vector length')
        if len(self.eigenvalues) != len(self.basis):
            raise TrainingError('one eigenvalue per basis vector is required')

    @property
    def dimension(self):
        return self.mean.shape[0]

    @property
    def components(self):
        return self.basis.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    coefficients: np.ndarray
    subject_id: str = ''
    pose_tag: PoseTag = PoseTag.GALLERY
    modality: Modality = Modality.SHAPE

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=np.float64, copy=True).reshape(-1)
        coefficients.setflags(write=False)
        object.__setattr__(self, 'coefficients', coefficients)
        object.__setattr__(self, 'pose_tag', PoseTag(self.pose_tag))
        object.__setattr__(self, 'modality', Modality(self.modality))

    def __len__(self):
        return len(self.coefficients)


def jacobi_eigh(matrix, tolerance=JACOBI_TOLERANCE, max_sweeps=JACOBI_MAX_SWEEPS):
    """
    Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit (p, q) pairs in row order p < q. Stops once every
    off-diagonal entry is below ``tolerance * trace``. Returns
    (eigenvalues, eigenvectors as columns), unsorted.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    trace = abs(np.trace(a))
    threshold = tolerance * trace if trace > 0 else tolerance
    for sweep in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a)))
        if off.max(initial=0.0) < threshold:
            logger.debug('jacobi converged after %d sweeps (n=%d)', sweep, n)
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise TrainingError(f'jacobi did not converge in {max_sweeps} sweeps')


def _orient(vectors):
    """Flip rows so the first nonzero entry of each is positive."""
    for row in vectors:
        nonzero = np.flatnonzero(row)
        if len(nonzero) and row[nonzero[0]] < 0:
            row *= -1.0
    return vectors


def train(vectors, n_components=0, modality=Modality.SHAPE):
    """
    Train a PCA subspace on k vectors of length D (Gram-matrix method).

    Components with eigenvalue ≤ 1e-10·λ_max are discarded; at most k-1
    are kept, fewer when ``n_components`` is set.
    """
    try:
        data = np.array([np.asarray(vector, dtype=np.float64) for vector in vectors])
    except ValueError:
        raise TrainingError('training vectors have inconsistent lengths') from None
    if data.ndim != 2:
        raise TrainingError('training vectors have inconsistent lengths')
    k = data.shape[0]
    if k < 2:
        raise TrainingError('training needs at least 2 vectors')

    mean = data.mean(axis=0)
    centered = data - mean
    gram = centered @ centered.T / (k - 1)
    gram = 0.5 * (gram + gram.T)
    values, vectors_k = jacobi_eigh(gram)

    order = np.argsort(-values, kind='stable')
    values = values[order]
    vectors_k = vectors_k[:, order]
    if values[0] <= 0.0:
        raise TrainingError('zero variance: all training vectors are identical')
    keep = values > EIGENVALUE_FLOOR * values[0]
    keep[k - 1:] = False
    if n_components:
        keep[n_components:] = False
    values = values[keep]
    vectors_k = vectors_k[:, keep]
    if not len(values):
        raise TrainingError('zero variance: no component survives')

    basis = (centered.T @ vectors_k).T
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    basis = _orient(basis)
    logger.info('trained %s subspace: D=%d k=%d m=%d', Modality(modality).value, data.shape[1], k, len(values))
    return Subspace(mean, basis, values, k, modality)


def project(subspace, vector, subject_id='', pose_tag=PoseTag.GALLERY):
    """coefficients[i] = basis_i · (v - mean)."""
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vector.shape[0] != subspace.dimension:
        raise TrainingError(f'vector length {vector.shape[0]} does not match subspace dimension {subspace.dimension}')
    coefficients = subspace.basis @ (vector - subspace.mean)
    return FeatureVector(coefficients, subject_id, pose_tag, subspace.modality)


def reconstruct(subspace, feature):
    """mean + Σ coefficient_i · basis_i."""
    return subspace.mean + np.asarray(feature.coefficients) @ subspace.basis


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def serialize_subspace(subspace, config_hash=None):
    out = [PCA_HEADER]
    if config_hash:
        out.append(f'# config={config_hash}')
    out += [
        f'D {subspace.dimension}',
        f'm {subspace.components}',
        f'k {subspace.training_count}',
        f'modality {subspace.modality.value}',
        ' '.join(format_float(v) for v in subspace.mean.tolist()),
        ' '.join(format_float(v) for v in subspace.eigenvalues.tolist()),
    ]
    out += [' '.join(format_float(v) for v in row) for row in subspace.basis.tolist()]
    return '\n'.join(out) + '\n'


def parse_subspace(text):
    lines = [line for _, line in strip_comments(text.splitlines()) if line.strip()]
    try:
        if lines[0].strip() != PCA_HEADER:
            raise ArtifactError('not a subspace file')
        header = dict(line.split(None, 1) for line in lines[1:5])
        m = int(header['m'])
        mean = np.array([float(v) for v in lines[5].split()])
        eigenvalues = np.array([float(v) for v in lines[6].split()]) if m else np.zeros(0)
        rows = lines[7:] if m else []
        if len(rows) != m or len(mean) != int(header['D']):
            raise ArtifactError('subspace file dimensions do not match its header')
        basis = np.array([[float(v) for v in row.split()] for row in rows]).reshape(m, len(mean))
        return Subspace(mean, basis, eigenvalues, int(header['k']), header['modality'].strip())
    except ArtifactError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise ArtifactError(f'malformed subspace file: {exc}') from exc


def write_subspace(path, subspace, config_hash=None):
    return write_artifact(path, serialize_subspace(subspace, config_hash))


def read_subspace(path):
    with open(path) as handle:
        return parse_subspace(handle.read())
