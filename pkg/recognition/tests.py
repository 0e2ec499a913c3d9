import math

import numpy as np
from django.test import SimpleTestCase

from rangeface.errors import ArtifactError, FusionError, MatchError, ScoreNormalizationError, TrainingError
from recognition.fusion import (
    FusionRule,
    NormalizationScope,
    fuse_image,
    fuse_scores,
    normalize_scores,
)
from recognition.matcher import (
    Metric,
    Normalization,
    Polarity,
    ScoreMatrix,
    dist_l1,
    dist_mahalanobis,
    metric_rankings,
    parse_score_matrix,
    score_matrix,
    serialize_score_matrix,
)
from recognition.subspace import (
    FeatureVector,
    Modality,
    jacobi_eigh,
    parse_subspace,
    project,
    reconstruct,
    serialize_subspace,
    train,
)


def principal_angles(a, b):
    """Principal angles between the row spaces of a and b (radians)."""
    qa, _ = np.linalg.qr(a.T)
    qb, _ = np.linalg.qr(b.T)
    cosines = np.clip(np.linalg.svd(qa.T @ qb, compute_uv=False), -1.0, 1.0)
    return np.arccos(cosines)


def matrix(values, gallery=None, probes=None, **kwargs):
    values = np.asarray(values, dtype=np.float64)
    gallery = gallery or [f'G{i}' for i in range(values.shape[0])]
    probes = probes or [f'G{j}' for j in range(values.shape[1])]
    return ScoreMatrix(values, gallery, probes, **kwargs)


class JacobiTests(SimpleTestCase):

    def test_matches_numpy_on_random_gram_matrices(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 5, 9):
            a = rng.normal(size=(n, n))
            a = a @ a.T
            values, vectors = jacobi_eigh(a)
            np.testing.assert_allclose(np.sort(values), np.linalg.eigvalsh(a), atol=1e-10)
            np.testing.assert_allclose(a @ vectors, vectors * values, atol=1e-9)
            np.testing.assert_allclose(vectors.T @ vectors, np.eye(n), atol=1e-12)

    def test_diagonal_matrix_is_returned_as_is(self):
        values, vectors = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_array_equal(values, [3.0, 1.0, 2.0])
        np.testing.assert_array_equal(vectors, np.eye(3))


class TrainTests(SimpleTestCase):

    def test_two_point_example(self):
        subspace = train([(1.0, 1.0), (3.0, 3.0)])
        np.testing.assert_allclose(subspace.mean, [2.0, 2.0])
        self.assertEqual(subspace.components, 1)
        np.testing.assert_allclose(subspace.eigenvalues, [4.0], rtol=1e-12)
        np.testing.assert_allclose(subspace.basis[0], [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)

    def test_identical_vectors(self):
        with self.assertRaisesMessage(TrainingError, 'zero variance'):
            train([(1.0, 2.0, 3.0)] * 4)

    def test_needs_two_vectors(self):
        with self.assertRaises(TrainingError):
            train([(1.0, 2.0)])

    def test_inconsistent_lengths(self):
        with self.assertRaisesMessage(TrainingError, 'inconsistent lengths'):
            train([(1.0, 2.0), (1.0, 2.0, 3.0)])

    def test_matches_direct_covariance(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(3, 5))
        subspace = train(data)
        expected = np.sort(np.linalg.eigvalsh(np.cov(data, rowvar=False)))[::-1][:2]
        np.testing.assert_allclose(subspace.eigenvalues, expected, rtol=1e-8)

    def test_gram_trick_spans_same_subspace(self):
        rng = np.random.default_rng(5)
        for k, d in ((4, 6), (7, 12), (10, 20)):
            data = rng.normal(size=(k, d))
            subspace = train(data)
            values, vectors = np.linalg.eigh(np.cov(data, rowvar=False))
            order = np.argsort(values)[::-1][:k - 1]
            np.testing.assert_allclose(subspace.eigenvalues, values[order], rtol=1e-8)
            self.assertLess(principal_angles(subspace.basis, vectors[:, order].T).max(), 1e-6)

    def test_basis_is_orthonormal_and_oriented(self):
        subspace = train(np.random.default_rng(6).normal(size=(8, 30)))
        np.testing.assert_allclose(subspace.basis @ subspace.basis.T, np.eye(subspace.components), atol=1e-10)
        for row in subspace.basis:
            self.assertGreater(row[np.flatnonzero(row)[0]], 0.0)
        self.assertTrue(np.all(np.diff(subspace.eigenvalues) <= 0))

    def test_component_limit(self):
        subspace = train(np.random.default_rng(7).normal(size=(8, 30)), n_components=3)
        self.assertEqual(subspace.components, 3)


class ProjectTests(SimpleTestCase):

    def setUp(self):
        self.subspace = train(np.random.default_rng(8).normal(size=(6, 10)), modality=Modality.COLOR)

    def test_mean_projects_to_zero(self):
        feature = project(self.subspace, self.subspace.mean)
        np.testing.assert_allclose(feature.coefficients, 0.0, atol=1e-12)
        self.assertEqual(feature.modality, Modality.COLOR)

    def test_basis_vector_projects_to_unit(self):
        feature = project(self.subspace, self.subspace.mean + self.subspace.basis[0])
        expected = np.zeros(self.subspace.components)
        expected[0] = 1.0
        np.testing.assert_allclose(feature.coefficients, expected, atol=1e-10)

    def test_two_point_projection(self):
        subspace = train([(1.0, 1.0), (3.0, 3.0)])
        feature = project(subspace, (3.0, 3.0))
        self.assertAlmostEqual(float(feature.coefficients[0]), math.sqrt(2), places=12)

    def test_reconstruct_training_vector(self):
        rng = np.random.default_rng(9)
        data = rng.normal(size=(5, 12))
        subspace = train(data)
        back = reconstruct(subspace, project(subspace, data[2]))
        np.testing.assert_allclose(back, data[2], atol=1e-10)

    def test_length_mismatch(self):
        with self.assertRaises(TrainingError):
            project(self.subspace, np.zeros(3))

    def test_file_round_trip(self):
        text = serialize_subspace(self.subspace, config_hash='abc')
        parsed = parse_subspace(text)
        np.testing.assert_array_equal(parsed.basis, self.subspace.basis)
        np.testing.assert_array_equal(parsed.eigenvalues, self.subspace.eigenvalues)
        self.assertEqual(parsed.modality, Modality.COLOR)
        self.assertEqual(parsed.training_count, 6)

    def test_corrupt_file(self):
        text = serialize_subspace(self.subspace)
        with self.assertRaises(ArtifactError):
            parse_subspace('\n'.join(text.splitlines()[:-1]))


class DistanceTests(SimpleTestCase):

    def test_l1_examples(self):
        self.assertEqual(dist_l1((1.0, 2.0), (1.0, 2.0)), 0.0)
        self.assertEqual(dist_l1((1.0, 2.0), (2.0, 0.0)), 3.0)
        self.assertEqual(dist_l1((0.0, 0.0), (3.0, 4.0)), 7.0)

    def test_l1_is_a_metric(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a, b, c = rng.normal(size=(3, 6))
            self.assertEqual(dist_l1(a, b), dist_l1(b, a))
            self.assertGreaterEqual(dist_l1(a, b), 0.0)
            self.assertLessEqual(dist_l1(a, c), dist_l1(a, b) + dist_l1(b, c) + 1e-12)

    def test_mahalanobis_example(self):
        self.assertEqual(dist_mahalanobis((2.0, 1.0), (1.0, 3.0), (4.0, 1.0)), -4.0)

    def test_mahalanobis_zero_vector(self):
        self.assertEqual(dist_mahalanobis((0.0, 0.0), (5.0, -7.0), (4.0, 1.0)), 0.0)

    def test_mahalanobis_loop_oracle(self):
        rng = np.random.default_rng(11)
        a, b = rng.normal(size=(2, 5))
        eigenvalues = rng.uniform(0.5, 3.0, size=5)
        expected = 0.0
        for m in range(5):
            expected -= a[m] * b[m] / math.sqrt(eigenvalues[m])
        self.assertAlmostEqual(dist_mahalanobis(a, b, eigenvalues), expected, delta=1e-12)

    def test_mahalanobis_needs_positive_eigenvalues(self):
        with self.assertRaises(MatchError):
            dist_mahalanobis((1.0,), (1.0,), (0.0,))

    def test_length_mismatch(self):
        with self.assertRaises(MatchError):
            dist_l1((1.0, 2.0), (1.0,))

    def test_feature_vectors_match_plain_sequences(self):
        for m in (1, 2, 3, 31, 99):
            a, b = np.arange(m, dtype=np.float64), np.zeros(m)
            self.assertEqual(dist_l1(FeatureVector(a, 'S0'), FeatureVector(b, 'S1')), dist_l1(a, b))
            eigenvalues = np.arange(1.0, m + 1.0)
            self.assertEqual(
                dist_mahalanobis(FeatureVector(a, 'S0'), FeatureVector(a + 1.0, 'S1'), eigenvalues),
                dist_mahalanobis(a, a + 1.0, eigenvalues),
            )


class ScoreMatrixTests(SimpleTestCase):

    def features(self, values, prefix='S'):
        return [FeatureVector(row, f'{prefix}{i}') for i, row in enumerate(values)]

    def test_self_distance_diagonal_is_zero(self):
        gallery = self.features(np.random.default_rng(12).normal(size=(4, 3)))
        result = score_matrix(gallery, gallery, Metric.L1)
        np.testing.assert_array_equal(np.diag(result.values), 0.0)
        self.assertEqual(result.polarity, Polarity.DISTANCE)
        self.assertEqual(result.normalization, Normalization.RAW)

    def test_single_cell(self):
        result = score_matrix(self.features([(1.0, 2.0)]), self.features([(2.0, 0.0)]), Metric.L1)
        self.assertEqual(result.values.tolist(), [[3.0]])

    def test_matches_double_loop(self):
        rng = np.random.default_rng(13)
        gallery = self.features(rng.normal(size=(3, 4)))
        probes = self.features(rng.normal(size=(3, 4)))
        eigenvalues = rng.uniform(0.5, 2.0, size=4)
        for metric in Metric:
            result = score_matrix(gallery, probes, metric, eigenvalues=eigenvalues, threads=2)
            for i, g in enumerate(gallery):
                for j, p in enumerate(probes):
                    expected = dist_l1(g, p) if metric == Metric.L1 else dist_mahalanobis(g, p, eigenvalues)
                    self.assertEqual(result.values[i, j], expected)

    def test_mahalanobis_needs_eigenvalues(self):
        gallery = self.features([(1.0, 2.0)])
        with self.assertRaises(MatchError):
            score_matrix(gallery, gallery, Metric.MAHALANOBIS)

    def test_duplicate_gallery_ids(self):
        gallery = [FeatureVector((1.0,), 'S0'), FeatureVector((2.0,), 'S0')]
        with self.assertRaises(MatchError):
            score_matrix(gallery, gallery[:1], Metric.L1)

    def test_rankings_follow_polarity(self):
        distances = matrix([[0.1, 0.9], [0.8, 0.2]])
        np.testing.assert_array_equal(metric_rankings(distances), [0, 1])
        np.testing.assert_array_equal(metric_rankings(distances.reversed_polarity()), [0, 1])

    def test_csv_round_trip(self):
        original = matrix([[0.1, -2.5], [1e-17, 3.0]], polarity=Polarity.DISTANCE, modality='color', config_hash='abc')
        text = serialize_score_matrix(original)
        self.assertTrue(text.startswith('#polarity=distance;normalization=raw;modality=color;config=abc\n'))
        parsed = parse_score_matrix(text)
        np.testing.assert_array_equal(parsed.values, original.values)
        self.assertEqual(parsed.gallery_ids, ('G0', 'G1'))
        self.assertEqual(parsed.modality, 'color')

    def test_csv_without_tags_is_rejected(self):
        with self.assertRaises(ArtifactError):
            parse_score_matrix(',G0\nG0,1.0\n')


class NormalizationTests(SimpleTestCase):

    def test_minmax_example(self):
        result = normalize_scores(matrix([[2.0, 4.0, 6.0]]), Normalization.MINMAX)
        self.assertEqual(result.values.tolist(), [[0.0, 0.5, 1.0]])
        self.assertEqual(result.normalization, Normalization.MINMAX)

    def test_zscore_example(self):
        result = normalize_scores(matrix([[1.0, 2.0, 3.0]]), Normalization.ZSCORE)
        np.testing.assert_allclose(result.values, [[-1.0, 0.0, 1.0]], atol=1e-15)

    def test_minmax_is_a_fixed_point(self):
        once = normalize_scores(matrix(np.random.default_rng(14).normal(size=(4, 4))), 'minmax')
        twice = normalize_scores(once, 'minmax')
        np.testing.assert_allclose(twice.values, once.values, atol=1e-15)

    def test_minmax_spans_unit_interval(self):
        result = normalize_scores(matrix(np.random.default_rng(15).normal(size=(5, 5))), 'minmax')
        self.assertEqual(result.values.min(), 0.0)
        self.assertEqual(result.values.max(), 1.0)

    def test_switching_methods_is_refused(self):
        once = normalize_scores(matrix([[1.0, 2.0, 3.0]]), 'minmax')
        with self.assertRaises(ScoreNormalizationError):
            normalize_scores(once, 'zscore')

    def test_constant_scores(self):
        with self.assertRaises(ScoreNormalizationError):
            normalize_scores(matrix([[2.0, 2.0], [2.0, 2.0]]), 'minmax')
        with self.assertRaises(ScoreNormalizationError):
            normalize_scores(matrix([[2.0, 2.0], [2.0, 2.0]]), 'zscore')

    def test_per_probe_scope(self):
        result = normalize_scores(matrix([[1.0, 10.0], [3.0, 30.0]]), 'minmax', NormalizationScope.PER_PROBE)
        self.assertEqual(result.values.tolist(), [[0.0, 0.0], [1.0, 1.0]])

    def test_rank_order_is_preserved(self):
        raw = matrix(np.random.default_rng(16).normal(size=(6, 6)))
        for method in ('minmax', 'zscore'):
            normalized = normalize_scores(raw, method)
            np.testing.assert_array_equal(metric_rankings(normalized), metric_rankings(raw))


class ScoreFusionTests(SimpleTestCase):

    def test_single_cell_rules(self):
        shape = matrix([[0.2]], normalization='minmax')
        color = matrix([[0.4]], normalization='minmax')
        expected = {'mean': 0.30000000000000004, 'min': 0.2, 'max': 0.4, 'product': 0.08000000000000002}
        for rule, value in expected.items():
            self.assertEqual(fuse_scores(shape, color, rule).values[0, 0], value)

    def test_mean_of_equal_inputs(self):
        scores = matrix(np.random.default_rng(17).uniform(size=(3, 3)), normalization='minmax')
        np.testing.assert_array_equal(fuse_scores(scores, scores, FusionRule.MEAN).values, scores.values)

    def test_rules_match_elementwise_loop(self):
        rng = np.random.default_rng(18)
        a = matrix(rng.uniform(size=(3, 3)), normalization='minmax')
        b = matrix(rng.uniform(size=(3, 3)), normalization='minmax')
        loops = {
            FusionRule.MEAN: lambda x, y: (x + y) / 2.0,
            FusionRule.MIN: min,
            FusionRule.MAX: max,
            FusionRule.PRODUCT: lambda x, y: x * y,
        }
        for rule, cell in loops.items():
            fused = fuse_scores(a, b, rule)
            for i in range(3):
                for j in range(3):
                    self.assertEqual(fused.values[i, j], cell(float(a.values[i, j]), float(b.values[i, j])))

    def test_product_of_zscores_is_refused(self):
        a = matrix([[-1.0, 1.0]], normalization='zscore')
        with self.assertRaisesMessage(FusionError, 'product rule'):
            fuse_scores(a, a, FusionRule.PRODUCT)
        self.assertEqual(fuse_scores(a, a, FusionRule.PRODUCT, allow_signed_product=True).values.tolist(), [[1.0, 1.0]])

    def test_mismatched_axes(self):
        a = matrix([[0.1, 0.2]], normalization='minmax')
        b = matrix([[0.1, 0.2]], probes=['X', 'Y'], normalization='minmax')
        with self.assertRaises(FusionError):
            fuse_scores(a, b, FusionRule.MEAN)

    def test_mixed_normalizations(self):
        a = matrix([[0.1, 0.2]], normalization='minmax')
        b = matrix([[0.1, 0.2]], normalization='zscore')
        with self.assertRaises(FusionError):
            fuse_scores(a, b, FusionRule.MEAN)


class ImageFusionTests(SimpleTestCase):

    def test_equal_blocks_give_equal_halves(self):
        block = np.random.default_rng(19).normal(size=16384)
        fused = fuse_image(block, block)
        self.assertEqual(len(fused), 32768)
        np.testing.assert_array_equal(fused[:16384], fused[16384:])

    def test_halves_are_standardized(self):
        rng = np.random.default_rng(20)
        fused = fuse_image(rng.normal(3.0, 2.0, size=16384), rng.uniform(size=16384), expected_length=16384)
        for half in (fused[:16384], fused[16384:]):
            self.assertLessEqual(abs(half.mean()), 1e-9)
            self.assertAlmostEqual(half.std(ddof=1), 1.0, delta=1e-9)

    def test_raw_concatenation(self):
        fused = fuse_image([1.0, 2.0], [3.0, 4.0], standardize=False)
        self.assertEqual(fused.tolist(), [1.0, 2.0, 3.0, 4.0])

    def test_constant_block(self):
        with self.assertRaises(FusionError):
            fuse_image(np.ones(4), np.arange(4.0))

    def test_wrong_length(self):
        with self.assertRaises(FusionError):
            fuse_image(np.arange(4.0), np.arange(4.0), expected_length=16384)

    def test_mismatched_blocks_are_refused(self):
        with self.assertRaisesMessage(FusionError, 'color block of 5 values'):
            fuse_image(np.arange(4.0), np.arange(5.0))
        with self.assertRaises(FusionError):
            fuse_image(np.arange(4.0), np.arange(4.0), standardize=False, expected_length=9)

    def test_rgb_color_block(self):
        fused = fuse_image(np.arange(4.0), np.arange(12.0), standardize=False, expected_length=4)
        self.assertEqual(len(fused), 16)
