import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from evaluation.evalkit import cmc, genuine_impostor_split, rank_of_true_match, roc, tar_at_far
from evaluation.report import emit_report, slugify
from rangeface.errors import EvaluationError
from recognition.fusion import normalize_scores
from recognition.matcher import Polarity, ScoreMatrix

IDS = ['S0', 'S1']


def distances(values, gallery=None, probes=None):
    values = np.asarray(values, dtype=np.float64)
    gallery = gallery or [f'S{i}' for i in range(values.shape[0])]
    probes = probes or [f'S{j}' for j in range(values.shape[1])]
    return ScoreMatrix(values, gallery, probes, Polarity.DISTANCE)


class CmcTests(SimpleTestCase):

    def test_all_rank_one(self):
        curve = cmc(distances([[0.1, 0.9], [0.8, 0.2]]))
        self.assertEqual(curve.rank1, 1.0)
        self.assertEqual(curve.ranks.tolist(), [1, 2])

    def test_all_rank_two(self):
        curve = cmc(distances([[0.9, 0.1], [0.2, 0.8]]))
        self.assertEqual(curve.rates.tolist(), [0.0, 1.0])

    def test_ties_do_not_count_against_the_probe(self):
        ranks = rank_of_true_match(distances([[0.5, 0.5], [0.5, 0.5]]))
        self.assertEqual(ranks.tolist(), [1, 1])

    def test_matches_sorting_oracle(self):
        values = np.random.default_rng(0).uniform(size=(20, 20))
        scores = distances(values)
        ranks = rank_of_true_match(scores)
        for j in range(20):
            column = np.sort(values[:, j])
            expected = int(np.flatnonzero(column == values[j, j])[0]) + 1
            self.assertEqual(ranks[j], expected)
        curve = cmc(scores)
        for r in range(1, 21):
            self.assertEqual(curve.rates[r - 1], np.mean(ranks <= r))

    def test_curve_is_monotone_and_ends_at_one(self):
        curve = cmc(distances(np.random.default_rng(1).normal(size=(15, 15))))
        self.assertTrue(np.all(np.diff(curve.rates) >= 0))
        self.assertEqual(curve.rates[-1], 1.0)

    def test_similarity_polarity(self):
        scores = distances([[0.1, 0.9], [0.8, 0.2]]).reversed_polarity()
        self.assertEqual(cmc(scores).rank1, 1.0)

    def test_invariant_under_normalization(self):
        raw = distances(np.random.default_rng(2).uniform(size=(10, 10)))
        for method in ('minmax', 'zscore'):
            np.testing.assert_array_equal(cmc(normalize_scores(raw, method)).rates, cmc(raw).rates)

    def test_probe_outside_gallery(self):
        scores = ScoreMatrix([[0.1], [0.2]], IDS, ['S9'], Polarity.DISTANCE)
        with self.assertRaisesMessage(EvaluationError, 'S9'):
            cmc(scores)


class RocTests(SimpleTestCase):

    def test_hand_computed_point(self):
        curve = roc(distances([[0.1, 0.2], [0.4, 0.3]]))
        self.assertIn((0.5, 0.5), curve.points)
        self.assertEqual(curve.points[0], (0.0, 0.0))
        self.assertEqual(curve.points[-1], (1.0, 1.0))

    def test_separable_scores_reach_full_acceptance_at_zero_far(self):
        curve = roc(distances([[0.1, 0.8], [0.9, 0.2]]))
        self.assertIn((0.0, 1.0), curve.points)
        self.assertEqual(tar_at_far(curve, 0.0), 1.0)

    def test_matches_threshold_loop(self):
        scores = distances(np.random.default_rng(3).normal(size=(20, 20)))
        genuine, impostor = genuine_impostor_split(scores)
        self.assertEqual((len(genuine), len(impostor)), (20, 380))
        curve = roc(scores)
        for threshold, far, tar in zip(curve.thresholds[1:], curve.far[1:], curve.tar[1:]):
            self.assertEqual(far, np.count_nonzero(impostor <= threshold) / len(impostor))
            self.assertEqual(tar, np.count_nonzero(genuine <= threshold) / len(genuine))
        self.assertTrue(np.all(np.diff(curve.far) >= 0))
        self.assertTrue(np.all(np.diff(curve.tar) >= 0))

    def test_similarity_thresholds_are_in_score_units(self):
        scores = distances([[0.1, 0.2], [0.4, 0.3]]).reversed_polarity()
        curve = roc(scores)
        self.assertEqual(curve.thresholds[0], np.inf)
        self.assertIn((0.5, 0.5), curve.points)
        self.assertIn(-0.2, curve.thresholds.tolist())

    def test_single_subject_has_no_impostors(self):
        with self.assertRaises(EvaluationError):
            roc(distances([[0.1]]))

    def test_tar_at_far(self):
        curve = roc(distances([[0.1, 0.2], [0.4, 0.3]]))
        self.assertEqual(tar_at_far(curve, 0.01), 0.5)
        self.assertEqual(tar_at_far(curve, 0.5), 1.0)


class ReportTests(SimpleTestCase):

    def setUp(self):
        scores = distances(np.random.default_rng(4).uniform(size=(3, 3)))
        self.cmc = cmc(scores)
        self.roc = roc(scores)

    def test_cmc_csv_has_one_row_per_rank(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = emit_report([self.cmc], ['shape/l1'], tmp, 'cmc')
            lines = paths[0].read_text().splitlines()
            self.assertEqual(paths[0].name, 'cmc_shape-l1.csv')
            self.assertEqual(lines[0], 'rank,rate')
            self.assertEqual(len(lines), 4)
            self.assertEqual(float(lines[1].split(',')[1]), self.cmc.rates[0])
            self.assertEqual(paths[-1].suffix, '.svg')

    def test_svg_is_deterministic(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            a = emit_report([self.roc], ['fused'], first, 'roc', title='ROC', config_hash='abc')
            b = emit_report([self.roc], ['fused'], second, 'roc', title='ROC', config_hash='abc')
            self.assertEqual(a[-1].read_bytes(), b[-1].read_bytes())
            self.assertIn(b'config=abc', a[-1].read_bytes())
            self.assertEqual(a[0].read_text().splitlines()[0], '# config=abc')

    def test_mixed_curve_kinds_are_refused(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(EvaluationError):
                emit_report([self.cmc, self.roc], ['a', 'b'], tmp, 'mixed')
            self.assertFalse(list(Path(tmp).iterdir()))

    def test_labels_with_the_same_file_name_are_refused(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesMessage(EvaluationError, 'shape-l1'):
                emit_report([self.cmc, self.cmc], ['shape/l1', 'shape-l1'], tmp, 'cmc')
            self.assertFalse(list(Path(tmp).iterdir()))

    def test_slugify(self):
        self.assertEqual(slugify('score-fusion/l1/zscore/mean'), 'score-fusion-l1-zscore-mean')
