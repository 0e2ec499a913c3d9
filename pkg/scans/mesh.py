"""
Face meshes, landmark sets and their text formats.

🔍 EXPLANATION FOR BEGINNERS:
A scan is a triangle mesh: a list of vertices (position + color) and a list
of triangles that index into it. Landmarks are named anatomical points
(Sellion, Infraorbitale, ...) marked on the scan and stored in a separate
"sidecar" file keyed by their integer id.

Mesh file::

    rangeface-mesh v1
    frame canonical          (optional, absent = body)
    vertices N
    x y z r g b              (N lines)
    faces M
    i j k                    (M lines, 0-based)

Landmark sidecar: one ``id x y z`` line per landmark.
Lines starting with ``#`` are comments and are skipped by both parsers.
"""
import enum
from dataclasses import dataclass, field

import numpy as np

from rangeface.artifacts import strip_comments
from rangeface.errors import LandmarkError, MeshParseError

MESH_HEADER = 'rangeface-mesh v1'


class FrameTag(str, enum.Enum):
    BODY = 'body'
    CANONICAL = 'canonical'


class PoseTag(str, enum.Enum):
    """Gallery scans are the enrolled ones, probes are matched against them."""

    GALLERY = 'gallery'
    PROBE = 'probe'


class LandmarkId(enum.IntEnum):
    SELLION = 1
    RT_INFRAORBITALE = 2
    LT_INFRAORBITALE = 3
    SUPRAMENTON = 4
    RT_TRAGION = 5
    RT_GONION = 6
    LT_TRAGION = 7
    LT_GONION = 8
    RT_CLAVICALE = 10
    LT_CLAVICALE = 12

    @property
    def label(self):
        return LANDMARK_LABELS[self]


LANDMARK_LABELS = {
    LandmarkId.SELLION: 'Sellion',
    LandmarkId.RT_INFRAORBITALE: 'Rt Infraorbitale',
    LandmarkId.LT_INFRAORBITALE: 'Lt Infraorbitale',
    LandmarkId.SUPRAMENTON: 'Supramenton',
    LandmarkId.RT_TRAGION: 'Rt Tragion',
    LandmarkId.RT_GONION: 'Rt Gonion',
    LandmarkId.LT_TRAGION: 'Lt Tragion',
    LandmarkId.LT_GONION: 'Lt Gonion',
    LandmarkId.RT_CLAVICALE: 'Rt Clavicale',
    LandmarkId.LT_CLAVICALE: 'Lt Clavicale',
}

# Alignment needs these four
REQUIRED_LANDMARKS = (
    LandmarkId.SELLION,
    LandmarkId.RT_INFRAORBITALE,
    LandmarkId.LT_INFRAORBITALE,
    LandmarkId.SUPRAMENTON,
)

# Cropping needs these two
CROP_LANDMARKS = (LandmarkId.RT_TRAGION, LandmarkId.RT_CLAVICALE)


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def format_float(value):
    """Shortest decimal that parses back to the same double."""
    return repr(float(value))


@dataclass(frozen=True, eq=False)
class FaceMesh:
    """
    Triangle mesh with per-vertex color.

    🔍 FIELDS:
    - vertices: (N, 3) float positions
    - colors: (N, 3) floats in [0, 1]
    - triangles: (M, 3) vertex indices
    - frame_tag: body (as scanned) or canonical (aligned)

    Arrays are read-only once the mesh is built, so a mesh can be shared
    between threads.
    """

    vertices: np.ndarray
    colors: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    frame_tag: FrameTag = FrameTag.BODY

    def __post_init__(self):
        vertices = _frozen(self.vertices, np.float64).reshape(-1, 3)
        colors = _frozen(self.colors, np.float64).reshape(-1, 3)
        triangles = _frozen(self.triangles, np.int64).reshape(-1, 3)
        if len(colors) != len(vertices):
            raise ValueError('one color per vertex is required')
        if len(triangles):
            if len(vertices) < 3:
                raise ValueError('a mesh with triangles needs at least 3 vertices')
            if triangles.min() < 0 or triangles.max() >= len(vertices):
                raise ValueError('triangle index out of range')
        if len(colors) and (colors.min() < 0.0 or colors.max() > 1.0):
            raise ValueError('colors must lie in [0, 1]')
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'colors', colors)
        object.__setattr__(self, 'triangles', triangles)
        object.__setattr__(self, 'frame_tag', FrameTag(self.frame_tag))

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def triangle_count(self):
        return len(self.triangles)

    def __eq__(self, other):
        if not isinstance(other, FaceMesh):
            return NotImplemented
        return (
            self.frame_tag == other.frame_tag
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.colors, other.colors)
            and np.array_equal(self.triangles, other.triangles)
        )

    __hash__ = None

    def subset(self, keep):
        """
        Keep the vertices flagged in the boolean mask ``keep``.

        Triangles touching a removed vertex are dropped and the rest are
        re-indexed.
        """
        keep = np.asarray(keep, dtype=bool)
        new_index = np.full(len(self.vertices), -1, dtype=np.int64)
        new_index[keep] = np.arange(int(keep.sum()))
        triangles = self.triangles
        if len(triangles):
            alive = keep[triangles].all(axis=1)
            triangles = new_index[triangles[alive]]
        return FaceMesh(self.vertices[keep], self.colors[keep], triangles, self.frame_tag)


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """
    Named anatomical points in mesh coordinates.

    Sellion, both Infraorbitale points and Supramenton must always be
    present. Tragion/Clavicale are only needed when cropping.
    """

    points: dict

    def __post_init__(self):
        points = {}
        for key, value in self.points.items():
            point = _frozen(value, np.float64)
            if point.shape != (3,):
                raise LandmarkError(f'landmark {int(key)} must be a 3D point')
            points[LandmarkId(int(key))] = point
        missing = [lid for lid in REQUIRED_LANDMARKS if lid not in points]
        if missing:
            raise LandmarkError(_missing_message(missing))
        object.__setattr__(self, 'points', dict(sorted(points.items())))

    def __getitem__(self, landmark_id):
        return self.points[LandmarkId(int(landmark_id))]

    def __contains__(self, landmark_id):
        return LandmarkId(int(landmark_id)) in self.points

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.points.keys() == other.points.keys() and all(
            np.array_equal(self.points[key], other.points[key]) for key in self.points
        )

    __hash__ = None

    @property
    def ids(self):
        return tuple(self.points)

    def as_array(self):
        return np.array([self.points[key] for key in self.points])

    def require(self, landmark_ids):
        missing = [LandmarkId(lid) for lid in landmark_ids if LandmarkId(lid) not in self.points]
        if missing:
            raise LandmarkError(_missing_message(missing))

    def map_points(self, fn):
        """New set with every point passed through ``fn`` ((K, 3) -> (K, 3))."""
        moved = fn(self.as_array())
        return LandmarkSet(dict(zip(self.points, moved)))


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    pose_tag: PoseTag
    mesh: FaceMesh
    landmarks: LandmarkSet
    transform: object = None    # capture transform, recorded by the generator

    def __post_init__(self):
        if not self.subject_id:
            raise ValueError('subject_id must be non-empty')
        object.__setattr__(self, 'pose_tag', PoseTag(self.pose_tag))

    @property
    def key(self):
        return (self.subject_id, self.pose_tag)


def check_unique_records(records):
    """(subject_id, pose_tag) must be unique within a dataset."""
    seen = set()
    for record in records:
        if record.key in seen:
            raise LandmarkError(f'duplicate record {record.subject_id}/{record.pose_tag.value}')
        seen.add(record.key)


def _missing_message(missing):
    return '; '.join(f'required landmark {int(lid)} ({lid.label}) absent' for lid in missing)


# ---------------------------------------------------------------------------
# Mesh format
# ---------------------------------------------------------------------------

def _floats(text, count, line, what):
    parts = text.split()
    if len(parts) != count:
        raise MeshParseError(f'expected {count} values for {what}, got {len(parts)}', line)
    try:
        return [float(part) for part in parts]
    except ValueError:
        raise MeshParseError(f'non-numeric {what}', line) from None


def _count(text, keyword, line):
    parts = text.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise MeshParseError(f'malformed header, expected "{keyword} <count>"', line)
    try:
        value = int(parts[1])
    except ValueError:
        raise MeshParseError(f'malformed header, bad {keyword} count', line) from None
    if value < 0:
        raise MeshParseError(f'malformed header, negative {keyword} count', line)
    return value


def _bulk(block, width, convert, dtype):
    """
    Convert a block of ``width``-token lines in one pass, or None when some
    line is malformed and has to go through the line-by-line checks.
    """
    rows = [text.split() for _, text in block]
    if any(len(row) != width for row in rows):
        return None
    tokens = [token for row in rows for token in row]
    try:
        values = np.fromiter(map(convert, tokens), dtype=dtype, count=len(tokens))
    except (ValueError, OverflowError):
        return None
    return values.reshape(-1, width)


def _vertex_line(number, text):
    values = _floats(text, 6, number, 'vertex')
    if not all(np.isfinite(values)):
        raise MeshParseError('non-finite vertex value', number)
    color = values[3:]
    if min(color) < 0.0 or max(color) > 1.0:
        raise MeshParseError('color out of [0,1]', number)
    return values


def _face_line(number, text, vertex_count):
    parts = text.split()
    if len(parts) != 3:
        raise MeshParseError(f'expected 3 indices for face, got {len(parts)}', number)
    try:
        indices = [int(part) for part in parts]
    except ValueError:
        raise MeshParseError('non-integer face index', number) from None
    if min(indices) < 0 or max(indices) >= vertex_count:
        raise MeshParseError('index out of range', number)
    return indices


def _vertex_block(block):
    values = _bulk(block, 6, float, np.float64)
    if values is None:
        return np.array([_vertex_line(number, text) for number, text in block], dtype=np.float64).reshape(-1, 6)
    finite = np.isfinite(values).all(axis=1)
    colors = values[:, 3:]
    in_range = ((colors >= 0.0) & (colors <= 1.0)).all(axis=1)
    bad = np.flatnonzero(~(finite & in_range))
    if len(bad):
        row = bad[0]
        raise MeshParseError('non-finite vertex value' if not finite[row] else 'color out of [0,1]', block[row][0])
    return values


def _face_block(block, vertex_count):
    indices = _bulk(block, 3, int, np.int64)
    if indices is None:
        return np.array([_face_line(number, text, vertex_count) for number, text in block],
                        dtype=np.int64).reshape(-1, 3)
    bad = np.flatnonzero(((indices < 0) | (indices >= vertex_count)).any(axis=1))
    if len(bad):
        raise MeshParseError('index out of range', block[bad[0]][0])
    return indices


def parse_mesh(text):
    """
    Parse mesh file content into a FaceMesh (frame_tag = body unless the
    file carries a ``frame`` line).

    Raises MeshParseError naming the offending line.
    """
    lines = list(strip_comments(text.splitlines()))
    while lines and not lines[-1][1].strip():
        lines.pop()
    position = 0

    def end_of_file(expected):
        last = lines[-1][0] + 1 if lines else 1
        return MeshParseError(f'unexpected end of file, expected {expected}', last)

    def next_line(expected):
        nonlocal position
        if position >= len(lines):
            raise end_of_file(expected)
        position += 1
        return lines[position - 1]

    def next_block(count):
        nonlocal position
        block = lines[position:position + count]
        position += len(block)
        return block

    number, header = next_line('header')
    if header.strip() != MESH_HEADER:
        raise MeshParseError(f'malformed header, expected "{MESH_HEADER}"', number)

    frame_tag = FrameTag.BODY
    number, text_line = next_line('vertex count')
    if text_line.split() and text_line.split()[0] == 'frame':
        parts = text_line.split()
        try:
            frame_tag = FrameTag(parts[1] if len(parts) == 2 else '')
        except ValueError:
            raise MeshParseError('malformed header, unknown frame tag', number) from None
        number, text_line = next_line('vertex count')
    vertex_count = _count(text_line, 'vertices', number)

    block = next_block(vertex_count)
    values = _vertex_block(block)
    if len(block) < vertex_count:
        raise end_of_file('vertex')

    number, text_line = next_line('face count')
    face_count = _count(text_line, 'faces', number)
    if face_count and vertex_count < 3:
        raise MeshParseError('faces need at least 3 vertices', number)
    block = next_block(face_count)
    triangles = _face_block(block, vertex_count)
    if len(block) < face_count:
        raise end_of_file('face')

    if position < len(lines):
        raise MeshParseError('trailing content after faces', lines[position][0])
    return FaceMesh(values[:, :3], values[:, 3:], triangles, frame_tag)


def serialize_mesh(mesh, config_hash=None):
    """
    Write a mesh in the text format; floats use the shortest round-trip
    decimal, so parse(serialize(m)) == m bit for bit.
    """
    out = [MESH_HEADER, '\n']
    if config_hash:
        out.append(f'# config={config_hash}\n')
    if mesh.frame_tag != FrameTag.BODY:
        out.append(f'frame {mesh.frame_tag.value}\n')
    out.append(f'vertices {mesh.vertex_count}\n')
    out.extend(' '.join(map(repr, position + color)) + '\n'
               for position, color in zip(mesh.vertices.tolist(), mesh.colors.tolist()))
    out.append(f'faces {mesh.triangle_count}\n')
    out.extend(f'{i} {j} {k}\n' for i, j, k in mesh.triangles.tolist())
    return ''.join(out)



# ---------------------------------------------------------------------------
# Landmark sidecar
# ---------------------------------------------------------------------------

def parse_landmarks(text):
    """Parse ``id x y z`` lines; ids 1-4 must be present, ids unique."""
    points = {}
    for number, text_line in strip_comments(text.splitlines()):
        if not text_line.strip():
            continue
        parts = text_line.split()
        if len(parts) != 4:
            raise MeshParseError(f'expected "id x y z", got {len(parts)} fields', number)
        try:
            landmark_id = LandmarkId(int(parts[0]))
        except ValueError:
            raise MeshParseError(f'unknown landmark id {parts[0]}', number) from None
        if landmark_id in points:
            raise LandmarkError(f'duplicate landmark {int(landmark_id)}')
        try:
            points[landmark_id] = [float(part) for part in parts[1:]]
        except ValueError:
            raise MeshParseError('non-numeric landmark coordinate', number) from None
    return LandmarkSet(points)


def serialize_landmarks(landmarks, config_hash=None):
    out = []
    if config_hash:
        out.append(f'# config={config_hash}\n')
    for landmark_id, point in landmarks.points.items():
        out.append(f'{int(landmark_id)} ' + ' '.join(format_float(v) for v in point.tolist()) + '\n')
    return ''.join(out)
