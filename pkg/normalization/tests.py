import numpy as np
from django.test import SimpleTestCase
from scipy.spatial import Delaunay

from normalization.gridio import parse_grid, serialize_grid
from normalization.normalize import (
    GridConfig,
    RangeGrid,
    canonical_frame,
    crop_face,
    grid_to_vectors,
    luminance,
    normalize_record,
    resample,
)
from normalization.rigid import RigidTransform
from rangeface.errors import AlignmentError, ArtifactError, CropError, LandmarkError, ResampleError
from scans.facegen import CaptureParams, SubjectParams, synth_capture, synth_subject
from scans.mesh import FaceMesh, FrameTag, LandmarkId, LandmarkSet, PoseTag, SubjectRecord

CANONICAL_POINTS = {
    1: (0.0, 1.0, 0.0),
    2: (-0.5, 0.0, 0.0),
    3: (0.5, 0.0, 0.0),
    4: (0.0, -2.0, 0.0),
}


def plane_mesh(c=0.7, hole_radius=0.0, color=(0.2, 0.4, 0.6)):
    """Plane z = c over [-2, 2]² (offset lattice), optionally with a round hole."""
    steps = np.arange(-2.0, 2.0 + 1e-9, 0.1) + 0.0123
    xs, ys = np.meshgrid(steps, steps)
    xy = np.column_stack([xs.ravel(), ys.ravel()])
    if hole_radius:
        xy = xy[np.linalg.norm(xy, axis=1) >= hole_radius]
    triangles = Delaunay(xy).simplices
    if hole_radius:
        centroids = xy[triangles].mean(axis=1)
        triangles = triangles[np.linalg.norm(centroids, axis=1) >= hole_radius]
    vertices = np.column_stack([xy, np.full(len(xy), c)])
    colors = np.tile(color, (len(xy), 1))
    return FaceMesh(vertices, colors, triangles, FrameTag.CANONICAL)


def plane_landmarks(c=0.7):
    return LandmarkSet({key: (x, y, c) for key, (x, y, _) in CANONICAL_POINTS.items()})


def ray_cast(mesh, px, py):
    """Highest intersection of the vertical line through (px, py), or None."""
    v = mesh.vertices
    a, b, c = v[mesh.triangles[:, 0]], v[mesh.triangles[:, 1]], v[mesh.triangles[:, 2]]
    e1x, e1y = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    e2x, e2y = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    det = e1x * e2y - e2x * e1y
    usable = det != 0.0
    rx, ry = px - a[:, 0], py - a[:, 1]
    with np.errstate(divide='ignore', invalid='ignore'):
        u = (rx * e2y - e2x * ry) / det
        w = (e1x * ry - rx * e1y) / det
    hit = usable & (u >= -1e-12) & (w >= -1e-12) & (u + w <= 1 + 1e-12)
    if not hit.any():
        return None
    z = a[hit, 2] + u[hit] * (b[hit, 2] - a[hit, 2]) + w[hit] * (c[hit, 2] - a[hit, 2])
    return float(z.max())


class CropTests(SimpleTestCase):

    def landmarks(self, clavicale_y=-10.0, tragion_z=-10.0):
        points = dict(CANONICAL_POINTS)
        points[LandmarkId.RT_TRAGION] = (-1.0, 0.0, tragion_z)
        points[LandmarkId.RT_CLAVICALE] = (0.0, clavicale_y, 0.0)
        return LandmarkSet(points)

    def test_mesh_in_front_of_both_planes_is_unchanged(self):
        mesh = plane_mesh()
        self.assertEqual(crop_face(mesh, self.landmarks()), mesh)

    def test_vertex_on_plane_is_excluded(self):
        vertices = [[0, 0, 1], [1, 0, 1], [0, 1, 1], [0, -1, 1]]
        mesh = FaceMesh(vertices, np.zeros((4, 3)), [[0, 1, 2], [0, 3, 1]])
        cropped = crop_face(mesh, self.landmarks(clavicale_y=-1.0))
        self.assertEqual(cropped.vertex_count, 3)
        self.assertEqual(cropped.triangle_count, 1)

    def test_matches_brute_force_filter(self):
        record = synth_capture(synth_subject(SubjectParams.from_seed(3)), CaptureParams(seed=5))
        cropped = crop_face(record.mesh, record.landmarks)
        y_limit = record.landmarks[LandmarkId.RT_CLAVICALE][1]
        z_limit = record.landmarks[LandmarkId.RT_TRAGION][2]
        expected = [v for v in record.mesh.vertices.tolist() if v[1] > y_limit and v[2] > z_limit]
        np.testing.assert_array_equal(cropped.vertices, np.array(expected))
        self.assertLess(cropped.vertex_count, record.mesh.vertex_count)

    def test_needs_crop_landmarks(self):
        with self.assertRaisesMessage(LandmarkError, 'required landmark 5 (Rt Tragion) absent'):
            crop_face(plane_mesh(), plane_landmarks())

    def test_empty_crop(self):
        with self.assertRaises(CropError):
            crop_face(plane_mesh(), self.landmarks(tragion_z=5.0))


class CanonicalFrameTests(SimpleTestCase):

    def test_canonical_landmarks_give_identity(self):
        frame = canonical_frame(LandmarkSet(CANONICAL_POINTS))
        np.testing.assert_allclose(frame.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(frame.translation, np.zeros(3), atol=1e-12)

    def test_recovers_inverse_of_known_motion(self):
        moved = RigidTransform.from_euler((0.3, -0.2, 0.5), (1.0, -2.0, 0.5))
        frame = canonical_frame(moved.apply_landmarks(LandmarkSet(CANONICAL_POINTS)))
        composed = frame.compose(moved)
        np.testing.assert_allclose(composed.rotation, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(composed.translation, np.zeros(3), atol=1e-10)

    def test_collinear_landmarks(self):
        points = {1: (0, 1, 0), 2: (0, 0.5, 0), 3: (0, -0.5, 0), 4: (0, -2, 0)}
        with self.assertRaises(AlignmentError):
            canonical_frame(LandmarkSet(points))

    def test_coincident_infraorbitale(self):
        points = dict(CANONICAL_POINTS)
        points[2] = points[3] = (0.5, 0.0, 0.0)
        with self.assertRaises(AlignmentError):
            canonical_frame(LandmarkSet(points))

    def test_frame_is_orthonormal(self):
        _, landmarks = synth_subject(SubjectParams.from_seed(8))
        frame = canonical_frame(landmarks)
        np.testing.assert_allclose(frame.rotation @ frame.rotation.T, np.eye(3), atol=1e-12)
        self.assertAlmostEqual(np.linalg.det(frame.rotation), 1.0, places=12)


class RigidTransformTests(SimpleTestCase):

    def test_inverse_round_trip(self):
        transform = RigidTransform.from_euler((0.1, 0.2, 0.3), (4, 5, 6))
        points = np.random.default_rng(0).normal(size=(10, 3))
        back = transform.inverse().apply(transform.apply(points))
        np.testing.assert_allclose(back, points, atol=1e-12)

    def test_row_major_round_trip(self):
        transform = RigidTransform.from_euler((0.1, 0.2, 0.3), (4, 5, 6))
        again = RigidTransform.from_row_major(transform.as_row_major())
        np.testing.assert_array_equal(again.rotation, transform.rotation)

    def test_reflection_is_rejected(self):
        with self.assertRaises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class ResampleTests(SimpleTestCase):

    def test_flat_plane_is_constant(self):
        grid = resample(plane_mesh(c=0.7), plane_landmarks(0.7))
        self.assertEqual(grid.depth.shape, (128, 128))
        self.assertFalse(grid.void_mask.any())
        np.testing.assert_allclose(grid.depth, 0.7, rtol=0, atol=1e-12)
        np.testing.assert_allclose(grid.color, np.broadcast_to([0.2, 0.4, 0.6], (128, 128, 3)), atol=1e-12)

    def test_hole_is_flagged_and_filled(self):
        grid = resample(plane_mesh(c=0.7, hole_radius=0.4), plane_landmarks(0.7))
        self.assertTrue(grid.void_mask[63:65, 63:65].all())
        self.assertFalse(grid.void_mask[0, 0])
        np.testing.assert_allclose(grid.depth, 0.7, rtol=0, atol=1e-12)

    def test_body_frame_mesh_is_rejected(self):
        mesh = FaceMesh(plane_mesh().vertices, plane_mesh().colors, plane_mesh().triangles, FrameTag.BODY)
        with self.assertRaises(ResampleError):
            resample(mesh, plane_landmarks())

    def test_uncovered_window(self):
        far_away = RigidTransform.from_euler((0, 0, 0), (100.0, 0.0, 0.0)).apply_mesh(plane_mesh())
        with self.assertRaises(ResampleError):
            resample(far_away, plane_landmarks())

    def test_depth_matches_ray_cast(self):
        subject = synth_subject(SubjectParams.from_seed(13))
        record = synth_capture(subject, CaptureParams(seed=2, sampling=0.6, void_count=0))
        face = crop_face(record.mesh, record.landmarks)
        frame = canonical_frame(record.landmarks)
        aligned = frame.apply_mesh(face, FrameTag.CANONICAL)
        cfg = GridConfig(resolution=32)
        grid = resample(aligned, frame.apply_landmarks(record.landmarks), cfg)
        xs, ys = cfg.pixel_centers(grid.d)
        rng = np.random.default_rng(1)
        covered = np.argwhere(~grid.void_mask)
        for row, col in covered[rng.choice(len(covered), size=12, replace=False)]:
            expected = ray_cast(aligned, xs[col], ys[row])
            self.assertIsNotNone(expected)
            self.assertAlmostEqual(grid.depth[row, col], expected, delta=1e-9)

    def test_rigid_motion_cancels(self):
        subject = synth_subject(SubjectParams.from_seed(17))
        still = synth_capture(subject, CaptureParams.exact())
        moved = synth_capture(subject, CaptureParams.exact(rotation=(0.12, -0.08, 0.15), translation=(0.3, -0.2, 0.4)))
        cfg = GridConfig(resolution=48)
        a = normalize_record(still, cfg)
        b = normalize_record(moved, cfg)
        both = ~a.void_mask & ~b.void_mask
        self.assertGreater(both.sum(), 0.8 * both.size)
        np.testing.assert_allclose(a.depth[both], b.depth[both], rtol=0, atol=1e-6 * a.d)

    def test_random_rigid_motions_up_to_thirty_degrees(self):
        subject = synth_subject(SubjectParams.from_seed(17))
        cfg = GridConfig(resolution=32)
        reference = normalize_record(synth_capture(subject, CaptureParams.exact()), cfg)
        rng = np.random.default_rng(30)
        for trial in range(50):
            angles = rng.uniform(-1.0, 1.0, size=3)
            # |rx| + |ry| + |rz| bounds the total rotation angle
            angles *= rng.uniform(0.0, np.radians(30.0)) / np.abs(angles).sum()
            capture = CaptureParams.exact(rotation=angles, translation=rng.uniform(-1.0, 1.0, size=3))
            grid = normalize_record(synth_capture(subject, capture), cfg)
            both = ~reference.void_mask & ~grid.void_mask
            difference = np.mean(np.abs(reference.depth[both] - grid.depth[both]))
            self.assertLessEqual(difference, 1e-3 * reference.d, f'trial {trial}')

    def test_uniform_scaling_scales_depth(self):
        subject = synth_subject(SubjectParams.from_seed(19))
        record = synth_capture(subject, CaptureParams.exact(rotation=(0.1, 0.05, -0.2), translation=(0.3, 0.0, 0.1)))
        cfg = GridConfig(resolution=32)
        base = normalize_record(record, cfg)
        for s in (0.5, 2.0, 4.0):
            mesh = FaceMesh(record.mesh.vertices * s, record.mesh.colors, record.mesh.triangles)
            scaled = SubjectRecord(record.subject_id, record.pose_tag, mesh, record.landmarks.map_points(lambda p: p * s))
            grid = normalize_record(scaled, cfg)
            self.assertAlmostEqual(grid.d, s * base.d, delta=1e-12 * s)
            np.testing.assert_array_equal(grid.void_mask, base.void_mask)
            np.testing.assert_allclose(grid.depth, s * base.depth, rtol=1e-9, atol=1e-12 * s)
            np.testing.assert_allclose(grid.luminance, base.luminance, rtol=0, atol=1e-12)

    def test_normalize_record_keeps_identity(self):
        record = synth_capture(synth_subject(SubjectParams.from_seed(4)), CaptureParams(seed=9))
        record = SubjectRecord('S0004', PoseTag.PROBE, record.mesh, record.landmarks, record.transform)
        grid = normalize_record(record, GridConfig(resolution=16))
        self.assertEqual((grid.subject_id, grid.pose_tag), ('S0004', PoseTag.PROBE))
        self.assertTrue(np.all(np.isfinite(grid.depth)))


class VectorTests(SimpleTestCase):

    def grid(self, depth=1.0, color=1.0, n=128):
        return RangeGrid(
            depth=np.full((n, n), depth),
            luminance=luminance(np.full((n, n, 3), color)),
            void_mask=np.zeros((n, n), dtype=bool),
            d=1.0,
            color=np.full((n, n, 3), color),
        )

    def test_constant_depth(self):
        shape_vector, _ = grid_to_vectors(self.grid())
        self.assertEqual(len(shape_vector), 16384)
        self.assertTrue(np.all(shape_vector == 1.0))

    def test_white_is_one(self):
        _, color_vector = grid_to_vectors(self.grid(color=1.0))
        self.assertTrue(np.all(color_vector == 1.0))

    def test_row_major_layout(self):
        depth = np.zeros((128, 128))
        depth[2, 3] = 7.0
        grid = RangeGrid(depth, depth, np.zeros((128, 128), dtype=bool), 1.0)
        shape_vector, _ = grid_to_vectors(grid)
        self.assertEqual(shape_vector[259], 7.0)
        self.assertEqual(int(np.flatnonzero(shape_vector)[0]), 2 * 128 + 3)

    def test_rgb_mode_interleaves_channels(self):
        _, color_vector = grid_to_vectors(self.grid(color=0.5, n=4), color_mode='rgb')
        self.assertEqual(len(color_vector), 48)

    def test_luminance_weights(self):
        self.assertAlmostEqual(float(luminance(np.array([1.0, 0.0, 0.0]))), 0.299)


class GridFormatTests(SimpleTestCase):

    def sample_grid(self):
        rng = np.random.default_rng(3)
        color = rng.uniform(size=(4, 4, 3))
        return RangeGrid(
            depth=rng.normal(size=(4, 4)),
            luminance=luminance(color),
            void_mask=rng.uniform(size=(4, 4)) > 0.7,
            d=1.0123,
            subject_id='S0001',
            pose_tag=PoseTag.PROBE,
            color=color,
        )

    def test_round_trip_keeps_values(self):
        grid = self.sample_grid()
        parsed = parse_grid(serialize_grid(grid, config_hash='abc123', include_rgb=True))
        np.testing.assert_array_equal(parsed.depth, grid.depth)
        np.testing.assert_array_equal(parsed.color, grid.color)
        np.testing.assert_array_equal(parsed.void_mask, grid.void_mask)
        self.assertEqual((parsed.subject_id, parsed.pose_tag, parsed.d), ('S0001', PoseTag.PROBE, 1.0123))

    def test_luminance_only(self):
        parsed = parse_grid(serialize_grid(self.sample_grid()))
        self.assertIsNone(parsed.color)

    def test_truncated_grid(self):
        text = serialize_grid(self.sample_grid())
        with self.assertRaises(ArtifactError):
            parse_grid('\n'.join(text.splitlines()[:-2]))
