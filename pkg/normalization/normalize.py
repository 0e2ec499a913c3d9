"""
Turning a raw scan into a 128x128 range grid.

🔍 EXPLANATION FOR BEGINNERS:
Three steps, in order:
1. crop_face        - cut the face out of the body scan with two planes
                      (above the clavicle, in front of the ear)
2. canonical_frame  - compute the rigid motion that puts the face in a
                      standard position using four landmarks
3. resample         - rasterize the aligned mesh onto a regular grid of
                      depth and color values, filling holes from the
                      nearest observed pixel

``normalize_record`` chains all three for one SubjectRecord.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from normalization.rigid import RigidTransform
from rangeface.errors import AlignmentError, CropError, ResampleError
from scans.mesh import CROP_LANDMARKS, FrameTag, LandmarkId, PoseTag

logger = logging.getLogger(__name__)

LUMINANCE_WEIGHTS = (0.299, 0.587, 0.114)
COLOR_MODES = ('luminance', 'rgb')

# Relative tolerance for degenerate landmark constellations
DEGENERACY_EPSILON = 1e-12


@dataclass(frozen=True)
class GridConfig:
    """
    Sampling window, as multiples of d around the infraorbitale midpoint.

    Default window: x in [-1.25d, 1.25d], y in [-1.5d, 1.5d] at 128x128.
    """

    resolution: int = 128
    x_half_extent: float = 1.25
    y_extent_below: float = 1.5
    y_extent_above: float = 1.5
    color_mode: str = 'luminance'

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError('resolution must be at least 2')
        if min(self.x_half_extent, self.y_extent_below, self.y_extent_above) <= 0:
            raise ValueError('grid extents must be positive')
        if self.color_mode not in COLOR_MODES:
            raise ValueError(f'color_mode must be one of {COLOR_MODES}')

    def pixel_centers(self, d):
        """(xs, ys) of pixel centers; row 0 is the top of the face."""
        n = self.resolution
        x0, x1 = -self.x_half_extent * d, self.x_half_extent * d
        y0, y1 = -self.y_extent_below * d, self.y_extent_above * d
        xs = x0 + (np.arange(n) + 0.5) * ((x1 - x0) / n)
        ys = y1 - (np.arange(n) + 0.5) * ((y1 - y0) / n)
        return xs, ys


@dataclass(frozen=True, eq=False)
class RangeGrid:
    """
    Resampled depth + color of one scan.

    void_mask is True where a pixel was filled from a neighbour rather than
    observed. ``color`` is (R, R, 3); grids read back from disk only carry
    luminance, in which case ``color`` is None.
    """

    depth: np.ndarray
    luminance: np.ndarray
    void_mask: np.ndarray
    d: float
    subject_id: str = ''
    pose_tag: PoseTag = PoseTag.GALLERY
    color: np.ndarray = None

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError('grid scale d must be positive')
        for name in ('depth', 'luminance', 'void_mask', 'color'):
            value = getattr(self, name)
            if value is not None:
                value = np.array(value, copy=True)
                value.setflags(write=False)
                object.__setattr__(self, name, value)
        if not np.all(np.isfinite(self.depth)):
            raise ValueError('depth must be finite everywhere')
        object.__setattr__(self, 'pose_tag', PoseTag(self.pose_tag))

    @property
    def resolution(self):
        return self.depth.shape[0]


def luminance(color):
    r, g, b = color[..., 0], color[..., 1], color[..., 2]
    wr, wg, wb = LUMINANCE_WEIGHTS
    # Normalized by the weight sum so white maps to exactly 1.0
    return (wr * r + wg * g + wb * b) / (wr * 1.0 + wg * 1.0 + wb * 1.0)


def crop_face(mesh, landmarks):
    """
    Keep vertices above the Rt Clavicale plane (y > y(L10)) and in front of
    the Rt Tragion plane (z > z(L5)). Boundary vertices are dropped.
    """
    landmarks.require(CROP_LANDMARKS)
    clavicale_y = landmarks[LandmarkId.RT_CLAVICALE][1]
    tragion_z = landmarks[LandmarkId.RT_TRAGION][2]
    keep = (mesh.vertices[:, 1] > clavicale_y) & (mesh.vertices[:, 2] > tragion_z)
    survivors = int(keep.sum())
    if survivors < 3:
        raise CropError(f'crop leaves {survivors} vertices')
    logger.debug('crop kept %d of %d vertices', survivors, mesh.vertex_count)
    return mesh.subset(keep)


def canonical_frame(landmarks):
    """
    Rigid transform into the face frame.

    origin = midpoint(L2, L3); x = unit(L3 - L2); y = unit of (L1 - L4)
    with its x component removed; z = x × y.
    """
    sellion = landmarks[LandmarkId.SELLION]
    right = landmarks[LandmarkId.RT_INFRAORBITALE]
    left = landmarks[LandmarkId.LT_INFRAORBITALE]
    chin = landmarks[LandmarkId.SUPRAMENTON]

    scale = max(1.0, float(np.max(np.abs(landmarks.as_array()))))
    across = left - right
    width = np.linalg.norm(across)
    if width < DEGENERACY_EPSILON * scale:
        raise AlignmentError('degenerate landmarks: infraorbitale points coincide')
    x_axis = across / width

    vertical = sellion - chin
    upright = vertical - np.dot(vertical, x_axis) * x_axis
    height = np.linalg.norm(upright)
    if height < DEGENERACY_EPSILON * max(scale, np.linalg.norm(vertical)) or height == 0.0:
        raise AlignmentError('degenerate landmarks: sellion-supramenton axis parallel to infraorbitale axis')
    y_axis = upright / height
    z_axis = np.cross(x_axis, y_axis)

    rotation = np.vstack([x_axis, y_axis, z_axis])
    origin = 0.5 * (right + left)
    return RigidTransform(rotation, -(rotation @ origin))


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize(mesh, cfg, d):
    """
    Orthographic z-buffer along -z.

    Returns (depth, color, covered) on the pixel lattice. Among triangles
    covering a pixel center the largest interpolated z wins; equal depths
    go to the larger triangle index.
    """
    n = cfg.resolution
    xs, ys = cfg.pixel_centers(d)
    x0, dx = xs[0], xs[1] - xs[0]
    y0, dy = ys[0], ys[0] - ys[1]

    tri = mesh.triangles
    v = mesh.vertices
    depth = np.zeros((n, n))
    color = np.zeros((n, n, 3))
    covered = np.zeros((n, n), dtype=bool)
    if not len(tri):
        return depth, color, covered

    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    area = _edge(a[:, 0], a[:, 1], b[:, 0], b[:, 1], c[:, 0], c[:, 1])
    tx = np.stack([a[:, 0], b[:, 0], c[:, 0]], axis=1)
    ty = np.stack([a[:, 1], b[:, 1], c[:, 1]], axis=1)

    # Pixel index ranges of each triangle's bounding box, one pixel loose;
    # the barycentric test below decides coverage
    col_lo = np.clip(np.floor((tx.min(axis=1) - x0) / dx), 0, n)
    col_hi = np.clip(np.ceil((tx.max(axis=1) - x0) / dx), -1, n - 1)
    row_lo = np.clip(np.floor((y0 - ty.max(axis=1)) / dy), 0, n)
    row_hi = np.clip(np.ceil((y0 - ty.min(axis=1)) / dy), -1, n - 1)
    widths = (col_hi - col_lo + 1).astype(np.int64)
    heights = (row_hi - row_lo + 1).astype(np.int64)
    counts = np.where((widths > 0) & (heights > 0) & (area != 0.0), widths * heights, 0)
    total = int(counts.sum())
    if total == 0:
        return depth, color, covered

    owner = np.repeat(np.arange(len(tri)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - starts
    w = widths[owner]
    rows = row_lo[owner].astype(np.int64) + local // w
    cols = col_lo[owner].astype(np.int64) + local % w
    px = xs[cols]
    py = ys[rows]

    pa, pb, pc = a[owner], b[owner], c[owner]
    tri_area = area[owner]
    # Barycentric weights from signed sub-areas
    wa = _edge(pb[:, 0], pb[:, 1], pc[:, 0], pc[:, 1], px, py) / tri_area
    wb = _edge(pc[:, 0], pc[:, 1], pa[:, 0], pa[:, 1], px, py) / tri_area
    wc = _edge(pa[:, 0], pa[:, 1], pb[:, 0], pb[:, 1], px, py) / tri_area
    inside = (wa >= 0) & (wb >= 0) & (wc >= 0)
    if not inside.any():
        return depth, color, covered

    owner, rows, cols = owner[inside], rows[inside], cols[inside]
    wa, wb, wc = wa[inside], wb[inside], wc[inside]
    corners = tri[owner]
    z = wa * v[corners[:, 0], 2] + wb * v[corners[:, 1], 2] + wc * v[corners[:, 2], 2]
    rgb = (
        wa[:, None] * mesh.colors[corners[:, 0]]
        + wb[:, None] * mesh.colors[corners[:, 1]]
        + wc[:, None] * mesh.colors[corners[:, 2]]
    )

    # Z-buffer: per pixel keep the last entry of (pixel, z, triangle) order
    pixel = rows * n + cols
    order = np.lexsort((owner, z, pixel))
    pixel_sorted = pixel[order]
    last = np.ones(len(order), dtype=bool)
    last[:-1] = pixel_sorted[1:] != pixel_sorted[:-1]
    winners = order[last]

    flat_depth = depth.reshape(-1)
    flat_color = color.reshape(-1, 3)
    flat_covered = covered.reshape(-1)
    flat_depth[pixel[winners]] = z[winners]
    flat_color[pixel[winners]] = np.clip(rgb[winners], 0.0, 1.0)
    flat_covered[pixel[winners]] = True
    return depth, color, covered


def fill_voids(depth, color, covered):
    """
    Copy each uncovered pixel from its nearest covered pixel (Euclidean
    pixel distance; ties go to the first pixel in row-major order).
    """
    n = depth.shape[0]
    void = ~covered
    if not void.any():
        return depth, color
    covered_idx = np.flatnonzero(covered)
    void_idx = np.flatnonzero(void)
    covered_rc = np.column_stack(np.divmod(covered_idx, n)).astype(np.float64)
    void_rc = np.column_stack(np.divmod(void_idx, n)).astype(np.float64)

    tree = cKDTree(covered_rc)
    nearest, _ = tree.query(void_rc, k=1)
    # Squared pixel distances are integers, so a small slack catches every tie
    candidates = tree.query_ball_point(void_rc, r=nearest + 1e-6)
    source = np.empty(len(void_idx), dtype=np.int64)
    for position, group in enumerate(candidates):
        group = np.asarray(group, dtype=np.int64)
        dist2 = ((covered_rc[group] - void_rc[position]) ** 2).sum(axis=1)
        # covered_idx is sorted, so the smallest position is the first pixel
        source[position] = covered_idx[group[dist2 == dist2.min()].min()]

    flat_depth = depth.reshape(-1)
    flat_color = color.reshape(-1, 3)
    flat_depth[void_idx] = flat_depth[source]
    flat_color[void_idx] = flat_color[source]
    return depth, color


def resample(mesh, landmarks, cfg=GridConfig(), subject_id='', pose_tag=PoseTag.GALLERY):
    """
    Rasterize a canonical-frame mesh onto the range grid.

    Depth and color are barycentric-interpolated from the z-buffer winner;
    uncovered pixels are filled by nearest neighbour and flagged in
    void_mask.
    """
    if mesh.frame_tag != FrameTag.CANONICAL:
        raise ResampleError('resample expects a mesh in the canonical frame')
    d = float(np.linalg.norm(landmarks[LandmarkId.LT_INFRAORBITALE] - landmarks[LandmarkId.RT_INFRAORBITALE]))
    if not d > 0:
        raise ResampleError('infraorbitale distance d must be positive')

    depth, color, covered = rasterize(mesh, cfg, d)
    if not covered.any():
        raise ResampleError('no pixel is covered by the mesh')
    depth, color = fill_voids(depth, color, covered)
    void_mask = ~covered
    if void_mask.any():
        logger.debug('%s/%s: filled %d void pixels', subject_id, PoseTag(pose_tag).value, int(void_mask.sum()))
    return RangeGrid(
        depth=depth,
        luminance=luminance(color),
        void_mask=void_mask,
        d=d,
        subject_id=subject_id,
        pose_tag=pose_tag,
        color=color,
    )


def grid_to_vectors(grid, color_mode='luminance'):
    """
    Row-major flattening: (shape_vector, color_vector).

    shape_vector is the depth; color_vector is the luminance, or the
    interleaved r, g, b values when color_mode is 'rgb'.
    """
    shape_vector = np.ascontiguousarray(grid.depth, dtype=np.float64).reshape(-1)
    if color_mode == 'rgb':
        if grid.color is None:
            raise ValueError('grid carries no rgb channels')
        color_vector = np.ascontiguousarray(grid.color, dtype=np.float64).reshape(-1)
    else:
        color_vector = np.ascontiguousarray(grid.luminance, dtype=np.float64).reshape(-1)
    return shape_vector, color_vector


def normalize_record(record, cfg=GridConfig()):
    """crop → canonical frame → resample, for one SubjectRecord."""
    face = crop_face(record.mesh, record.landmarks)
    frame = canonical_frame(record.landmarks)
    aligned = frame.apply_mesh(face, FrameTag.CANONICAL)
    return resample(
        aligned,
        frame.apply_landmarks(record.landmarks),
        cfg,
        subject_id=record.subject_id,
        pose_tag=record.pose_tag,
    )
