import dataclasses
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from normalization.normalize import GridConfig, crop_face, normalize_record
from normalization.rigid import RigidTransform
from rangeface.errors import GenerationError, LandmarkError, MeshParseError
from scans.facegen import (
    MIN_SURVIVING_VERTICES,
    CaptureParams,
    SubjectParams,
    generate_records,
    point_count_statistics,
    point_counts_csv,
    read_manifest,
    synth_capture,
    synth_dataset,
    synth_subject,
)
from scans.mesh import (
    FaceMesh,
    FrameTag,
    LandmarkId,
    LandmarkSet,
    PoseTag,
    SubjectRecord,
    check_unique_records,
    parse_landmarks,
    parse_mesh,
    serialize_landmarks,
    serialize_mesh,
)

TRIANGLE_FILE = """rangeface-mesh v1
vertices 3
0 0 0 1 1 1
1 0 0 1 1 1
0 1 0 1 1 1
faces 1
0 1 2
"""

BASIC_LANDMARKS = '1 0 1 0\n2 -1 0 0\n3 1 0 0\n4 0 -2 0\n'


def small_capture(**kwargs):
    defaults = dict(seed=3, max_rotation_deg=10.0, max_translation=0.5, sampling=0.9,
                    void_count=2, void_radius=0.12, depth_noise=0.005, color_noise=0.01)
    defaults.update(kwargs)
    return CaptureParams(**defaults)


class MeshFormatTests(SimpleTestCase):

    def test_minimal_file(self):
        mesh = parse_mesh(TRIANGLE_FILE)
        self.assertEqual(mesh.vertex_count, 3)
        self.assertEqual(mesh.triangle_count, 1)
        self.assertEqual(mesh.frame_tag, FrameTag.BODY)
        np.testing.assert_array_equal(mesh.colors, np.ones((3, 3)))

    def test_index_out_of_range_names_line(self):
        text = TRIANGLE_FILE.replace('0 1 2', '0 1 5')
        with self.assertRaisesMessage(MeshParseError, 'index out of range, line 7'):
            parse_mesh(text)

    def test_color_out_of_range(self):
        text = TRIANGLE_FILE.replace('1 0 0 1 1 1', '1 0 0 1 1.5 1')
        with self.assertRaisesMessage(MeshParseError, 'color out of [0,1], line 4'):
            parse_mesh(text)

    def test_non_finite_vertex_names_line(self):
        text = TRIANGLE_FILE.replace('0 1 0 1 1 1', '0 inf 0 1 1 1')
        with self.assertRaisesMessage(MeshParseError, 'non-finite vertex value, line 5'):
            parse_mesh(text)

    def test_first_bad_vertex_line_wins(self):
        text = TRIANGLE_FILE.replace('0 0 0 1 1 1', '0 0 0 2 1 1').replace('0 1 0 1 1 1', '0 nan 0 1 1 1')
        with self.assertRaisesMessage(MeshParseError, 'color out of [0,1], line 3'):
            parse_mesh(text)
        text = TRIANGLE_FILE.replace('0 0 0 1 1 1', '0 0 0 2 1 1').replace('1 0 0 1 1 1', '1 0 x 1 1 1')
        with self.assertRaisesMessage(MeshParseError, 'color out of [0,1], line 3'):
            parse_mesh(text)

    def test_bad_face_lines(self):
        with self.assertRaisesMessage(MeshParseError, 'non-integer face index, line 7'):
            parse_mesh(TRIANGLE_FILE.replace('0 1 2', '0 1 2.5'))
        with self.assertRaisesMessage(MeshParseError, 'expected 3 indices for face, got 4, line 7'):
            parse_mesh(TRIANGLE_FILE.replace('0 1 2', '0 1 2 0'))
        with self.assertRaisesMessage(MeshParseError, 'index out of range, line 7'):
            parse_mesh(TRIANGLE_FILE.replace('0 1 2', '0 -1 2'))

    def test_truncated_vertex_block(self):
        with self.assertRaisesMessage(MeshParseError, 'unexpected end of file, expected vertex, line 4'):
            parse_mesh('rangeface-mesh v1\nvertices 2\n0 0 0 1 1 1\n')

    def test_malformed_header(self):
        with self.assertRaisesMessage(MeshParseError, 'malformed header'):
            parse_mesh('ply\n' + TRIANGLE_FILE)

    def test_truncated_file(self):
        with self.assertRaisesMessage(MeshParseError, 'unexpected end of file'):
            parse_mesh('rangeface-mesh v1\nvertices 2\n0 0 0 1 1 1\n')

    def test_trailing_content(self):
        with self.assertRaisesMessage(MeshParseError, 'trailing content'):
            parse_mesh(TRIANGLE_FILE + '1 2 0\n')

    def test_comments_are_skipped(self):
        text = TRIANGLE_FILE.replace('vertices 3', '# config=abc\nvertices 3')
        self.assertEqual(parse_mesh(text), parse_mesh(TRIANGLE_FILE))

    def test_empty_triangle_mesh_serializes_without_faces(self):
        mesh = FaceMesh(np.eye(3), np.full((3, 3), 0.5))
        text = serialize_mesh(mesh)
        lines = text.splitlines()
        self.assertEqual(lines[1], 'vertices 3')
        self.assertEqual(lines[-1], 'faces 0')
        self.assertEqual(len(lines), 6)

    def test_frame_tag_survives(self):
        mesh = FaceMesh(np.eye(3), np.zeros((3, 3)), [[0, 1, 2]], FrameTag.CANONICAL)
        self.assertIn('frame canonical', serialize_mesh(mesh))
        self.assertEqual(parse_mesh(serialize_mesh(mesh)).frame_tag, FrameTag.CANONICAL)

    def test_round_trip_on_generated_meshes(self):
        for seed in range(10):
            mesh, _ = synth_subject(SubjectParams.from_seed(seed))
            text = serialize_mesh(mesh, config_hash='0123456789ab')
            self.assertEqual(parse_mesh(text), mesh)
            self.assertEqual(serialize_mesh(parse_mesh(text), config_hash='0123456789ab'), text)

    def test_serialize_is_deterministic(self):
        mesh, _ = synth_subject(SubjectParams.from_seed(4))
        self.assertEqual(serialize_mesh(mesh), serialize_mesh(mesh))

    def test_mesh_arrays_are_read_only(self):
        mesh = parse_mesh(TRIANGLE_FILE)
        with self.assertRaises(ValueError):
            mesh.vertices[0, 0] = 5.0

    def test_subset_reindexes_triangles(self):
        mesh = FaceMesh(np.arange(12.0).reshape(4, 3), np.zeros((4, 3)), [[0, 1, 2], [1, 2, 3]])
        kept = mesh.subset([False, True, True, True])
        np.testing.assert_array_equal(kept.triangles, [[0, 1, 2]])


class LandmarkFormatTests(SimpleTestCase):

    def test_four_required_points(self):
        landmarks = parse_landmarks(BASIC_LANDMARKS)
        self.assertEqual(landmarks.ids, (1, 2, 3, 4))
        np.testing.assert_array_equal(landmarks[LandmarkId.SUPRAMENTON], [0.0, -2.0, 0.0])
        np.testing.assert_array_equal(landmarks[2], [-1.0, 0.0, 0.0])

    def test_missing_supramenton(self):
        with self.assertRaisesMessage(LandmarkError, 'required landmark 4 (Supramenton) absent'):
            parse_landmarks('1 0 1 0\n2 -1 0 0\n3 1 0 0\n')

    def test_duplicate_id(self):
        with self.assertRaisesMessage(LandmarkError, 'duplicate landmark 2'):
            parse_landmarks(BASIC_LANDMARKS + '2 -1 0 0\n')

    def test_unknown_id(self):
        with self.assertRaisesMessage(MeshParseError, 'unknown landmark id 9, line 5'):
            parse_landmarks(BASIC_LANDMARKS + '9 0 0 0\n')

    def test_round_trip(self):
        _, landmarks = synth_subject(SubjectParams.from_seed(2))
        self.assertEqual(parse_landmarks(serialize_landmarks(landmarks, 'abc')), landmarks)

    def test_records_must_be_unique(self):
        mesh = parse_mesh(TRIANGLE_FILE)
        landmarks = parse_landmarks(BASIC_LANDMARKS)
        record = SubjectRecord('S0000', PoseTag.GALLERY, mesh, landmarks)
        with self.assertRaisesMessage(LandmarkError, 'duplicate record S0000/gallery'):
            check_unique_records([record, record])


class SubjectGenerationTests(SimpleTestCase):

    def test_same_seed_is_bit_identical(self):
        first, first_lm = synth_subject(SubjectParams.from_seed(11))
        second, second_lm = synth_subject(SubjectParams.from_seed(11))
        self.assertEqual(first, second)
        self.assertEqual(first_lm, second_lm)

    def test_different_seeds_differ(self):
        first, _ = synth_subject(SubjectParams.from_seed(11))
        second, _ = synth_subject(SubjectParams.from_seed(12))
        self.assertNotEqual(first, second)

    def test_flat_subject_has_symmetric_infraorbitale(self):
        params = SubjectParams.from_seed(5).without_features()
        _, landmarks = synth_subject(params)
        right = landmarks[LandmarkId.RT_INFRAORBITALE]
        left = landmarks[LandmarkId.LT_INFRAORBITALE]
        self.assertEqual(right[0], -params.d / 2)
        self.assertEqual(left[0], params.d / 2)
        self.assertEqual(right[1], 0.0)
        self.assertEqual(right[2], left[2])

    def test_featured_subject_is_symmetric_to_rounding(self):
        _, landmarks = synth_subject(SubjectParams.from_seed(6))
        right = landmarks[LandmarkId.RT_INFRAORBITALE]
        left = landmarks[LandmarkId.LT_INFRAORBITALE]
        self.assertAlmostEqual(right[2], left[2], delta=1e-12)

    def test_generated_subject_is_canonical_and_has_all_landmarks(self):
        mesh, landmarks = synth_subject(SubjectParams.from_seed(1))
        self.assertEqual(mesh.frame_tag, FrameTag.CANONICAL)
        self.assertEqual(set(landmarks.ids), set(LandmarkId))

    def test_unmirrored_pair_is_rejected(self):
        params = SubjectParams.from_seed(1)
        bumps = list(params.bumps)
        bumps[1] = dataclasses.replace(bumps[1], amplitude=bumps[1].amplitude + 0.01)
        with self.assertRaises(GenerationError):
            dataclasses.replace(params, bumps=tuple(bumps))


class CaptureTests(SimpleTestCase):

    def setUp(self):
        self.subject = synth_subject(SubjectParams.from_seed(21))

    def test_identity_capture_keeps_geometry(self):
        record = synth_capture(self.subject, CaptureParams.exact())
        mesh, landmarks = self.subject
        np.testing.assert_array_equal(record.mesh.vertices, mesh.vertices)
        np.testing.assert_array_equal(record.mesh.triangles, mesh.triangles)
        self.assertEqual(record.landmarks, landmarks)

    def test_pure_translation(self):
        shift = (0.25, -0.5, 1.0)
        record = synth_capture(self.subject, CaptureParams.exact(translation=shift))
        mesh, _ = self.subject
        np.testing.assert_array_equal(record.mesh.vertices, mesh.vertices + np.array(shift))

    def test_rotation_preserves_landmark_distances(self):
        record = synth_capture(self.subject, CaptureParams.exact(rotation=(0.1, -0.15, 0.08), translation=(1, 2, 3)))
        before = self.subject[1].as_array()
        after = record.landmarks.as_array()
        pairwise = lambda p: np.linalg.norm(p[:, None, :] - p[None, :, :], axis=2)  # noqa: E731
        np.testing.assert_allclose(pairwise(after), pairwise(before), rtol=0, atol=1e-12)

    def test_recorded_transform_maps_landmarks(self):
        record = synth_capture(self.subject, small_capture(depth_noise=0.0))
        expected = record.transform.apply(self.subject[1].as_array())
        np.testing.assert_allclose(record.landmarks.as_array(), expected, atol=1e-12)

    def test_capture_is_deterministic(self):
        first = synth_capture(self.subject, small_capture())
        second = synth_capture(self.subject, small_capture())
        self.assertEqual(first.mesh, second.mesh)

    def test_sparse_capture_is_rejected(self):
        with self.assertRaisesMessage(GenerationError, f'at least {MIN_SURVIVING_VERTICES}'):
            synth_capture(self.subject, small_capture(sampling=0.05))

    def test_voids_remove_vertices(self):
        full = synth_capture(self.subject, small_capture(void_count=0))
        holed = synth_capture(self.subject, small_capture(void_count=3, void_radius=0.2))
        self.assertLess(holed.mesh.vertex_count, full.mesh.vertex_count)


class DatasetTests(SimpleTestCase):

    def setUp(self):
        self.gallery = small_capture(seed=1)
        self.probe = small_capture(seed=2, sampling=0.8)

    def test_two_subjects_write_four_meshes(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = synth_dataset(2, 7, self.gallery, self.probe, tmp, config_hash='feedbeef0000')
            root = Path(tmp)
            self.assertEqual(len(list((root / 'meshes').glob('*.mesh'))), 4)
            self.assertEqual(len(list((root / 'landmarks').glob('*.lmk'))), 4)
            self.assertEqual(manifest, root / 'manifest.csv')
            self.assertFalse(list(root.rglob('*.partial')))
            self.assertTrue(manifest.read_text().startswith('# config=feedbeef0000\n'))

    def test_manifest_transforms_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            records = generate_records(2, 7, self.gallery, self.probe)
            rows = read_manifest(synth_dataset(2, 7, self.gallery, self.probe, tmp))
            self.assertEqual([row['subject_id'] for row in rows], ['S0000', 'S0000', 'S0001', 'S0001'])
            self.assertEqual([row['pose'] for row in rows], [PoseTag.GALLERY, PoseTag.PROBE] * 2)
            for row, record in zip(rows, records):
                self.assertIsInstance(row['transform'], RigidTransform)
                np.testing.assert_array_equal(row['transform'].rotation, record.transform.rotation)

    def test_same_seed_gives_identical_bytes(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            synth_dataset(2, 7, self.gallery, self.probe, first)
            synth_dataset(2, 7, self.gallery, self.probe, second)
            for path in sorted(Path(first).rglob('*')):
                if path.is_file():
                    twin = Path(second) / path.relative_to(first)
                    self.assertEqual(path.read_bytes(), twin.read_bytes(), path.name)

    def test_thread_count_does_not_change_records(self):
        serial = generate_records(3, 9, self.gallery, self.probe, threads=1)
        parallel = generate_records(3, 9, self.gallery, self.probe, threads=3)
        for a, b in zip(serial, parallel):
            self.assertEqual(a.key, b.key)
            self.assertEqual(a.mesh, b.mesh)

    def test_gallery_and_probe_differ(self):
        gallery, probe = generate_records(2, 7, self.gallery, self.probe)[:2]
        self.assertEqual(gallery.subject_id, probe.subject_id)
        self.assertNotEqual(gallery.mesh.vertex_count, probe.mesh.vertex_count)

    def test_needs_two_subjects(self):
        with self.assertRaises(GenerationError):
            generate_records(1, 7, self.gallery, self.probe)

    def test_point_counts_per_pose(self):
        records = generate_records(2, 7, self.gallery, self.probe)
        statistics = point_count_statistics(records)
        self.assertEqual(list(statistics), [PoseTag.GALLERY, PoseTag.PROBE])
        for pose, (low, mean, high) in statistics.items():
            counts = [crop_face(r.mesh, r.landmarks).vertex_count for r in records if r.pose_tag == pose]
            self.assertEqual((low, high), (min(counts), max(counts)))
            self.assertAlmostEqual(mean, np.mean(counts))
        self.assertGreater(statistics[PoseTag.GALLERY][1], statistics[PoseTag.PROBE][1])
        text = point_counts_csv(statistics, 'abc')
        self.assertEqual(text.splitlines()[1], 'pose,min,mean,max')

    def test_point_counts_file_matches_the_written_meshes(self):
        with tempfile.TemporaryDirectory() as tmp:
            rows = read_manifest(synth_dataset(2, 7, self.gallery, self.probe, tmp, config_hash='abc'))
            reloaded = [
                SubjectRecord(
                    row['subject_id'],
                    row['pose'],
                    parse_mesh((Path(tmp) / row['mesh_path']).read_text()),
                    parse_landmarks((Path(tmp) / row['landmark_path']).read_text()),
                )
                for row in rows
            ]
            written = (Path(tmp) / 'point_counts.csv').read_text()
        self.assertEqual(written, point_counts_csv(point_count_statistics(reloaded), 'abc'))

    def test_different_seeds_give_different_faces(self):
        cfg = GridConfig(resolution=32)
        for pair in range(20):
            first, second = (
                normalize_record(synth_capture(synth_subject(SubjectParams.from_seed(seed)), CaptureParams.exact()), cfg)
                for seed in (2 * pair, 2 * pair + 1)
            )
            difference = np.mean(np.abs(first.depth - second.depth))
            self.assertGreater(difference, 0.01 * first.d, f'seeds {2 * pair} and {2 * pair + 1}')


class LandmarkSetTests(SimpleTestCase):

    def test_require_reports_missing_crop_landmarks(self):
        landmarks = parse_landmarks(BASIC_LANDMARKS)
        with self.assertRaisesMessage(LandmarkError, '5'):
            landmarks.require([LandmarkId.RT_TRAGION])

    def test_map_points(self):
        landmarks = parse_landmarks(BASIC_LANDMARKS)
        moved = landmarks.map_points(lambda p: p + 1.0)
        np.testing.assert_array_equal(moved[1], [1.0, 2.0, 1.0])
        self.assertIsInstance(moved, LandmarkSet)
