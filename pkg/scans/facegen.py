"""
Synthetic face scans with ground-truth landmarks.

🔍 EXPLANATION FOR BEGINNERS:
Real body scans with hand-placed landmarks are not freely available, so the
pipeline is exercised on generated ones. A synthetic face is a height field
z = f(x, y): an ellipsoidal base plus Gaussian bumps for the nose, brow
ridges, cheeks and chin. Every size is a multiple of the subject's
inter-infraorbitale distance d.

A "capture" then simulates scanning that subject: it moves the face by a
random rigid transform, drops vertices (sparser scans), punches voids
(eyes, nostrils) and adds depth/color noise. The applied transform is kept
so tests can check the alignment stage against the truth.

🔍 SEEDS:
Everything is a pure function of seeds. Subject i of a dataset uses
seed = master_seed XOR i; its captures derive their seed from the capture
seed and the subject seed (see ``capture_seed``).
"""
import csv
import dataclasses
import hashlib
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from normalization.normalize import crop_face
from normalization.rigid import RigidTransform
from rangeface.artifacts import config_comment, write_artifact
from rangeface.concurrency import ordered_map
from rangeface.errors import GenerationError
from scans.mesh import (
    FaceMesh,
    FrameTag,
    LandmarkId,
    LandmarkSet,
    PoseTag,
    SubjectRecord,
    format_float,
    serialize_landmarks,
    serialize_mesh,
)

logger = logging.getLogger(__name__)

# The scanner's observed minimum for a facial crop is 660 points; anything
# under this is not a usable capture.
MIN_SURVIVING_VERTICES = 500

# Lattice covering head, ears and neck (units of d)
LATTICE_X = (-2.3, 2.3, 77)
LATTICE_Y = (-2.6, 2.1, 79)

# Ellipsoidal base: semi-axes (units of d); depth is per subject
BASE_A = 1.9
BASE_B = 3.0
BASE_OFFSET = 0.35

MANIFEST_HEADER = ['subject_id', 'pose', 'mesh_path', 'landmark_path', 'transform']


@dataclass(frozen=True)
class Bump:
    """Gaussian bump; center and width in units of d, amplitude too."""

    name: str
    amplitude: float
    center: tuple
    width: float

    def shape(self, x, y):
        cx, cy = self.center
        return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * self.width ** 2))


# Paired features are mirror images of each other so the infraorbitale
# landmarks stay symmetric about the midline.
MIDLINE_FEATURES = ('nose', 'chin')
PAIRED_FEATURES = (('brow_right', 'brow_left'), ('cheek_right', 'cheek_left'))


@dataclass(frozen=True)
class SubjectParams:
    seed: int
    d: float
    depth: float                    # base depth, units of d
    bumps: tuple                    # nose, brow x2, cheek x2, chin
    skin_tone: tuple                # base (r, g, b)
    color_deltas: tuple             # one (dr, dg, db) per bump

    def __post_init__(self):
        if not self.d > 0:
            raise GenerationError('d must be positive')
        if not self.depth > 0:
            raise GenerationError('base depth must be positive')
        if len(self.color_deltas) != len(self.bumps):
            raise GenerationError('one color delta per bump is required')
        by_name = {bump.name: bump for bump in self.bumps}
        for bump in self.bumps:
            if not bump.width > 0:
                raise GenerationError(f'bump {bump.name} needs a positive width')
        for name in MIDLINE_FEATURES:
            if name in by_name and by_name[name].center[0] != 0.0:
                raise GenerationError(f'{name} must sit on the midline')
        for right, left in PAIRED_FEATURES:
            if (right in by_name) != (left in by_name):
                raise GenerationError(f'{right}/{left} must come in pairs')
            if right in by_name:
                a, b = by_name[right], by_name[left]
                mirrored = (
                    a.amplitude == b.amplitude
                    and a.width == b.width
                    and a.center[0] == -b.center[0]
                    and a.center[1] == b.center[1]
                )
                if not mirrored:
                    raise GenerationError(f'{right}/{left} must mirror each other')

    @classmethod
    def from_seed(cls, seed):
        rng = np.random.default_rng(seed)
        u = rng.uniform

        def pair(name, amplitude, cx, cy, width):
            return (
                Bump(f'{name}_right', amplitude, (-cx, cy), width),
                Bump(f'{name}_left', amplitude, (cx, cy), width),
            )

        bumps = (
            Bump('nose', u(0.25, 0.45), (0.0, u(-0.45, -0.25)), u(0.15, 0.25)),
            *pair('brow', u(0.04, 0.14), u(0.4, 0.6), u(0.4, 0.55), u(0.18, 0.3)),
            *pair('cheek', u(0.05, 0.15), u(0.65, 0.85), u(-0.6, -0.35), u(0.25, 0.4)),
            Bump('chin', u(0.08, 0.2), (0.0, u(-1.4, -1.2)), u(0.2, 0.35)),
        )
        skin_tone = tuple(u(lo, hi) for lo, hi in ((0.45, 0.85), (0.3, 0.7), (0.2, 0.6)))
        color_deltas = tuple(tuple(u(-0.15, 0.15, size=3)) for _ in bumps)
        return cls(
            seed=int(seed),
            d=u(0.9, 1.1),
            depth=u(1.1, 1.3),
            bumps=bumps,
            skin_tone=skin_tone,
            color_deltas=color_deltas,
        )

    def without_features(self):
        """Same subject with every bump amplitude set to zero."""
        flat = tuple(dataclasses.replace(bump, amplitude=0.0) for bump in self.bumps)
        return dataclasses.replace(self, bumps=flat)


@dataclass(frozen=True)
class CaptureParams:
    seed: int
    max_rotation_deg: float = 10.0
    max_translation: float = 0.5        # length units
    sampling: float = 1.0               # vertex subsampling fraction in (0, 1]
    void_count: int = 0
    void_radius: float = 0.12           # units of d
    depth_noise: float = 0.0            # length units
    color_noise: float = 0.0
    landmark_noise: float = 0.0         # length units
    rotation: tuple = None              # explicit Euler angles (radians), overrides the random draw
    translation: tuple = None           # explicit translation, overrides the random draw

    def __post_init__(self):
        if not 0.0 < self.sampling <= 1.0:
            raise GenerationError('sampling fraction must lie in (0, 1]')
        if self.max_rotation_deg < 0 or self.max_translation < 0:
            raise GenerationError('rotation/translation limits must be non-negative')
        if self.void_count < 0 or self.void_radius < 0:
            raise GenerationError('void parameters must be non-negative')
        if min(self.depth_noise, self.color_noise, self.landmark_noise) < 0:
            raise GenerationError('noise levels must be non-negative')

    @classmethod
    def exact(cls, rotation=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0), **kwargs):
        """A noise-free capture with a known transform."""
        return cls(seed=kwargs.pop('seed', 0), rotation=tuple(rotation), translation=tuple(translation), **kwargs)


def surface_height(params, x, y):
    """Height field in units of d, coordinates in units of d."""
    u = (x / BASE_A) ** 2 + (y / BASE_B) ** 2
    inside = np.sqrt(np.clip(1.0 - u, 0.0, None)) - BASE_OFFSET
    outside = -BASE_OFFSET - (u - 1.0)
    z = params.depth * np.where(u <= 1.0, inside, outside)
    for bump in params.bumps:
        z = z + bump.amplitude * bump.shape(x, y)
    return z


def lattice(params):
    """Regular (x, y) lattice in units of d plus its triangulation."""
    xs = np.linspace(*LATTICE_X)
    ys = np.linspace(*LATTICE_Y)
    grid_x, grid_y = np.meshgrid(xs, ys)
    cols = len(xs)
    rows = len(ys)
    index = np.arange(rows * cols).reshape(rows, cols)
    a = index[:-1, :-1].ravel()
    b = index[:-1, 1:].ravel()
    c = index[1:, :-1].ravel()
    e = index[1:, 1:].ravel()
    triangles = np.concatenate([np.stack([a, b, e], axis=1), np.stack([a, e, c], axis=1)])
    return grid_x.ravel(), grid_y.ravel(), triangles


def vertex_colors(params, x, y):
    colors = np.tile(np.asarray(params.skin_tone, dtype=np.float64), (len(x), 1))
    for bump, delta in zip(params.bumps, params.color_deltas):
        colors += bump.shape(x, y)[:, None] * np.asarray(delta)[None, :]
    return np.clip(colors, 0.0, 1.0)


def place_landmarks(params):
    """
    Landmarks in the subject frame.

    Infraorbitale points sit at (∓d/2, 0) on the surface, Sellion and
    Supramenton on the midline above and below. Tragion points lie behind
    the face and Clavicale points below the chin so that cropping has
    something to remove.
    """
    d = params.d

    def on_surface(x, y):
        return np.array([x * d, y * d, surface_height(params, np.float64(x), np.float64(y)) * d])

    behind = -0.6 * params.depth * d
    below = -0.3 * params.depth * d
    points = {
        LandmarkId.SELLION: on_surface(0.0, 0.45),
        LandmarkId.RT_INFRAORBITALE: on_surface(-0.5, 0.0),
        LandmarkId.LT_INFRAORBITALE: on_surface(0.5, 0.0),
        LandmarkId.SUPRAMENTON: on_surface(0.0, -1.2),
        LandmarkId.RT_TRAGION: np.array([-1.8 * d, -0.2 * d, behind]),
        LandmarkId.LT_TRAGION: np.array([1.8 * d, -0.2 * d, behind]),
        LandmarkId.RT_GONION: on_surface(-1.3, -1.3),
        LandmarkId.LT_GONION: on_surface(1.3, -1.3),
        LandmarkId.RT_CLAVICALE: np.array([-0.9 * d, -2.3 * d, below]),
        LandmarkId.LT_CLAVICALE: np.array([0.9 * d, -2.3 * d, below]),
    }
    return LandmarkSet(points)


def synth_subject(params):
    """Generate one subject's mesh and landmarks in the canonical frame."""
    x, y, triangles = lattice(params)
    z = surface_height(params, x, y)
    vertices = np.stack([x, y, z], axis=1) * params.d
    mesh = FaceMesh(vertices, vertex_colors(params, x, y), triangles, FrameTag.CANONICAL)
    return mesh, place_landmarks(params)


def capture_seed(capture_base_seed, subject_seed):
    """Seed for one capture of one subject (first 8 bytes of a SHA-256)."""
    digest = hashlib.sha256(f'{capture_base_seed}:{subject_seed}'.encode()).digest()
    return int.from_bytes(digest[:8], 'big')


def _capture_transform(cap, rng):
    if cap.rotation is not None:
        angles = cap.rotation
    else:
        limit = np.deg2rad(cap.max_rotation_deg)
        angles = rng.uniform(-limit, limit, size=3)
    if cap.translation is not None:
        translation = cap.translation
    else:
        translation = rng.uniform(-cap.max_translation, cap.max_translation, size=3)
    return RigidTransform.from_euler(angles, translation)


def _subsample(mesh, fraction, rng):
    """Keep a random fraction of vertices and re-triangulate over (x, y)."""
    if fraction >= 1.0:
        return mesh
    count = int(round(fraction * mesh.vertex_count))
    if count < 3:
        raise GenerationError(f'sampling fraction {fraction} leaves {count} vertices')
    keep = np.sort(rng.choice(mesh.vertex_count, size=count, replace=False))
    vertices = mesh.vertices[keep]
    triangles = Delaunay(vertices[:, :2]).simplices.astype(np.int64)
    return FaceMesh(vertices, mesh.colors[keep], triangles, mesh.frame_tag)


def _punch_voids(mesh, cap, d, rng):
    if not cap.void_count or not cap.void_radius:
        return mesh
    centers = np.column_stack([
        rng.uniform(-1.0, 1.0, size=cap.void_count),
        rng.uniform(-1.2, 1.2, size=cap.void_count),
    ]) * d
    radius = cap.void_radius * d
    xy = mesh.vertices[:, :2]
    distance = np.min(np.linalg.norm(xy[:, None, :] - centers[None, :, :], axis=2), axis=1)
    return mesh.subset(distance >= radius)


def synth_capture(subject, cap):
    """
    Simulate one scan of a subject.

    Returns a SubjectRecord (subject_id filled in by the caller via
    ``dataclasses.replace``; defaults to "subject") whose ``transform``
    field is the applied canonical → body rigid motion.
    """
    mesh, landmarks = subject
    rng = np.random.default_rng(cap.seed)
    transform = _capture_transform(cap, rng)
    d = float(np.linalg.norm(landmarks[LandmarkId.LT_INFRAORBITALE] - landmarks[LandmarkId.RT_INFRAORBITALE]))

    scanned = _subsample(mesh, cap.sampling, rng)
    scanned = _punch_voids(scanned, cap, d, rng)
    if scanned.vertex_count < MIN_SURVIVING_VERTICES:
        raise GenerationError(
            f'capture keeps {scanned.vertex_count} vertices, '
            f'at least {MIN_SURVIVING_VERTICES} are required'
        )

    vertices = transform.apply(scanned.vertices)
    colors = scanned.colors
    if cap.depth_noise:
        vertices[:, 2] += rng.normal(0.0, cap.depth_noise, size=len(vertices))
    if cap.color_noise:
        colors = np.clip(colors + rng.normal(0.0, cap.color_noise, size=colors.shape), 0.0, 1.0)
    moved_landmarks = transform.apply_landmarks(landmarks)
    if cap.landmark_noise:
        jitter = rng.normal(0.0, cap.landmark_noise, size=(len(moved_landmarks.ids), 3))
        moved_landmarks = moved_landmarks.map_points(lambda points: points + jitter)

    body = FaceMesh(vertices, colors, scanned.triangles, FrameTag.BODY)
    return SubjectRecord('subject', PoseTag.GALLERY, body, moved_landmarks, transform)


def subject_id_for(index):
    return f'S{index:04d}'


def _generate_subject(job):
    index, master_seed, captures = job
    subject_seed = master_seed ^ index
    subject = synth_subject(SubjectParams.from_seed(subject_seed))
    records = []
    for pose, cap in captures:
        seeded = dataclasses.replace(cap, seed=capture_seed(cap.seed, subject_seed))
        record = synth_capture(subject, seeded)
        records.append(dataclasses.replace(record, subject_id=subject_id_for(index), pose_tag=pose))
    logger.debug('generated subject %s', subject_id_for(index))
    return records


def generate_records(n_subjects, seed, cap_gallery, cap_probe, threads=None):
    """All gallery and probe records, in subject order (gallery first)."""
    if n_subjects < 2:
        raise GenerationError('a dataset needs at least 2 subjects')
    captures = ((PoseTag.GALLERY, cap_gallery), (PoseTag.PROBE, cap_probe))
    jobs = [(index, int(seed), captures) for index in range(n_subjects)]
    per_subject = ordered_map(_generate_subject, jobs, threads=threads)
    return [record for records in per_subject for record in records]


def synth_dataset(n_subjects, seed, cap_gallery, cap_probe, out_dir, config_hash=None, threads=None):
    """
    Write a dataset: one mesh + landmark file per record, a manifest and the
    cropped point-count statistics (computed from the in-memory records).

    Returns the path of the manifest CSV.
    """
    out_dir = Path(out_dir)
    records = generate_records(n_subjects, seed, cap_gallery, cap_probe, threads=threads)
    logger.info('writing %d records to %s', len(records), out_dir)

    def write(record):
        stem = f'{record.subject_id}_{record.pose_tag.value}'
        mesh_path = Path('meshes') / f'{stem}.mesh'
        landmark_path = Path('landmarks') / f'{stem}.lmk'
        write_artifact(out_dir / mesh_path, serialize_mesh(record.mesh, config_hash))
        write_artifact(out_dir / landmark_path, serialize_landmarks(record.landmarks, config_hash))
        return record, mesh_path, landmark_path

    written = ordered_map(write, records, threads=threads)

    buffer = io.StringIO()
    buffer.write(config_comment(config_hash))
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(MANIFEST_HEADER)
    for record, mesh_path, landmark_path in written:
        writer.writerow([
            record.subject_id,
            record.pose_tag.value,
            mesh_path.as_posix(),
            landmark_path.as_posix(),
            ' '.join(format_float(value) for value in record.transform.as_row_major()),
        ])
    manifest = write_artifact(out_dir / 'manifest.csv', buffer.getvalue())

    statistics = point_count_statistics(records, threads=threads)
    write_artifact(out_dir / 'point_counts.csv', point_counts_csv(statistics, config_hash))
    for pose, (low, mean, high) in statistics.items():
        logger.info('%s point counts: min %d, mean %.1f, max %d', pose.value, low, mean, high)
    return manifest


def read_manifest(path):
    """Rows of a manifest as dicts; ``transform`` parsed to a RigidTransform."""
    path = Path(path)
    lines = [line for line in path.read_text().splitlines() if not line.startswith('#')]
    rows = []
    for row in csv.DictReader(lines):
        row = dict(row)
        row['transform'] = RigidTransform.from_row_major([float(v) for v in row['transform'].split()])
        row['pose'] = PoseTag(row['pose'])
        rows.append(row)
    return rows


def point_count_statistics(records, threads=None):
    """
    Vertex counts of the cropped face per pose: {pose: (min, mean, max)}.

    Mirrors the point-count histograms used to characterise real scans
    (denser gallery captures, sparser probes).
    """
    sizes = ordered_map(lambda record: crop_face(record.mesh, record.landmarks).vertex_count, records, threads=threads)
    counts = {}
    for record, size in zip(records, sizes):
        counts.setdefault(record.pose_tag, []).append(size)
    return {
        pose: (min(values), float(np.mean(values)), max(values))
        for pose, values in sorted(counts.items(), key=lambda item: item[0].value)
    }


def point_counts_csv(statistics, config_hash=None):
    buffer = io.StringIO()
    buffer.write(config_comment(config_hash))
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['pose', 'min', 'mean', 'max'])
    for pose, (low, mean, high) in statistics.items():
        writer.writerow([pose.value, low, format_float(mean), high])
    return buffer.getvalue()
