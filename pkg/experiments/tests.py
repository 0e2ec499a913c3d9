import csv
import io
import os
import shutil
import tempfile
from pathlib import Path
from unittest import skipUnless

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings, tag

from experiments.config import ConfigError, config_hash, load_config, validate
from experiments.models import ExperimentResult, ExperimentRun
from experiments.stages import REFERENCE_COLUMN, configuration_label, figure_grid
from recognition.matcher import Polarity, ScoreMatrix, read_score_matrix, write_score_matrix

# Small enough to run in a few seconds
SMALL_RUN_INI = '[run]\nsubjects = 4\nseed = 7\n[normalize]\nresolution = 16\n'


def read_results(path):
    lines = [line for line in Path(path).read_text().splitlines() if not line.startswith('#')]
    return {row['configuration']: row for row in csv.DictReader(lines)}


def tree_bytes(root):
    root = Path(root)
    return {
        path.relative_to(root).as_posix(): path.read_bytes()
        for path in sorted(root.rglob('*'))
        if path.is_file()
    }


def quiet_call(*args, **options):
    return call_command(*args, stdout=io.StringIO(), **options)


class WorkDirMixin:

    def make_dir(self):
        path = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, path, ignore_errors=True)
        return path


class ConfigTests(SimpleTestCase):

    def write_ini(self, text):
        handle = tempfile.NamedTemporaryFile('w', suffix='.ini', delete=False)
        handle.write(text)
        handle.close()
        self.addCleanup(Path(handle.name).unlink)
        return handle.name

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config['normalize']['resolution'], 128)
        self.assertEqual(config['matcher']['metrics'], 'l1,mahalanobis')

    def test_file_then_flags(self):
        path = self.write_ini('[run]\nsubjects = 12\nseed = 3\n[fusion]\nallow_signed_product = yes\n')
        config = load_config(path, {('run', 'subjects'): 20, ('run', 'seed'): None})
        self.assertEqual(config['run']['subjects'], 20)
        self.assertEqual(config['run']['seed'], 3)
        self.assertIs(config['fusion']['allow_signed_product'], True)

    def test_unknown_key(self):
        path = self.write_ini('[run]\nsubject = 12\n')
        with self.assertRaisesMessage(ConfigError, 'unknown config key run.subject'):
            load_config(path)

    def test_unknown_section(self):
        path = self.write_ini('[render]\nwidth = 12\n')
        with self.assertRaisesMessage(ConfigError, 'unknown config section [render]'):
            load_config(path)

    def test_wrong_type(self):
        with self.assertRaises(ConfigError):
            load_config(overrides={('normalize', 'resolution'): 'big'})

    def test_validate_rejects_unknown_metric(self):
        config = load_config(overrides={('matcher', 'metrics'): 'l1,cosine'})
        with self.assertRaises(ConfigError):
            validate(config)

    def test_hash_tracks_the_effective_config(self):
        base = config_hash(load_config())
        self.assertEqual(len(base), 12)
        self.assertEqual(base, config_hash(load_config()))
        self.assertNotEqual(base, config_hash(load_config(overrides={('run', 'seed'): 8})))

    def test_defaults_are_not_shared(self):
        load_config()['run']['seed'] = 99
        self.assertEqual(load_config()['run']['seed'], 7)


class LabelTests(SimpleTestCase):

    def test_configuration_label(self):
        self.assertEqual(configuration_label('m/score-fusion_l1_zscore_mean.csv'), 'score-fusion/l1/zscore/mean')
        self.assertEqual(configuration_label('shape_mahalanobis.csv'), 'shape/mahalanobis')

    def test_figure_grid_covers_both_metrics(self):
        names = [name for name, _, _, _ in figure_grid(['l1', 'mahalanobis'])]
        self.assertEqual(
            names,
            ['cmc_l1', 'cmc_rules_l1', 'cmc_mahalanobis', 'cmc_rules_mahalanobis',
             'cmc_fusion_levels', 'roc_fusion_levels'],
        )


class PipelineTests(WorkDirMixin, SimpleTestCase):

    def setUp(self):
        self.work = self.make_dir()
        self.ini = self.make_dir() / 'small.ini'
        self.ini.write_text(SMALL_RUN_INI)

    def pipeline(self, workdir, **options):
        quiet_call('pipeline', workdir=str(workdir), config=str(self.ini), **options)

    def test_pipeline_writes_every_stage(self):
        self.pipeline(self.work)
        self.assertEqual(len(list((self.work / 'dataset' / 'meshes').glob('*.mesh'))), 8)
        self.assertEqual(len(list((self.work / 'grids').glob('*.grid'))), 8)
        self.assertEqual(sorted(p.name for p in (self.work / 'models').iterdir()),
                         ['color.pca', 'concat.pca', 'shape.pca'])
        self.assertTrue((self.work / 'dataset' / 'point_counts.csv').is_file())
        self.assertFalse(list(self.work.rglob('*.partial')))

        results = read_results(self.work / 'results.csv')
        for label in ('shape/l1', 'color/mahalanobis', 'image-fusion/l1', 'score-fusion/l1/zscore/mean',
                      'score-fusion/l1/minmax/product'):
            self.assertIn(label, results)
        # zscore product is skipped unless explicitly allowed
        self.assertNotIn('score-fusion/l1/zscore/product', results)
        self.assertEqual(results['shape/l1'][REFERENCE_COLUMN], '0.683')
        self.assertEqual(results['score-fusion/l1/minmax/max'][REFERENCE_COLUMN], '')
        for row in results.values():
            self.assertTrue(0.0 <= float(row['rank1']) <= 1.0)

        reports = {p.name for p in (self.work / 'reports').glob('*.svg')}
        self.assertEqual(reports, {
            'cmc_l1.svg', 'cmc_rules_l1.svg', 'cmc_mahalanobis.svg', 'cmc_rules_mahalanobis.svg',
            'cmc_fusion_levels.svg', 'roc_fusion_levels.svg',
        })

    def test_every_artifact_carries_the_config_hash(self):
        self.pipeline(self.work)
        digest = config_hash(load_config(str(self.ini)))
        for name, content in tree_bytes(self.work).items():
            self.assertIn(f'config={digest}'.encode(), content, name)

    def test_pipeline_is_deterministic(self):
        other = self.make_dir()
        self.pipeline(self.work)
        self.pipeline(other)
        self.assertEqual(tree_bytes(self.work), tree_bytes(other))

    def test_thread_count_does_not_change_any_file(self):
        threaded = self.make_dir()
        with override_settings(RANGEFACE_THREADS=1):
            self.pipeline(self.work)
        with override_settings(RANGEFACE_THREADS=3):
            self.pipeline(threaded)
        serial, parallel = tree_bytes(self.work), tree_bytes(threaded)
        self.assertEqual(sorted(serial), sorted(parallel))
        for name in ('models/shape.pca', 'matrices/shape_l1.csv', 'reports/cmc_l1.svg'):
            self.assertEqual(serial[name], parallel[name], name)
        self.assertEqual(serial, parallel)

    def test_chained_stages_equal_pipeline(self):
        chained = self.make_dir()
        self.pipeline(self.work)
        for stage in ('synth', 'preprocess', 'train', 'match', 'fuse', 'eval'):
            quiet_call(stage, workdir=str(chained), config=str(self.ini))
        self.assertEqual(tree_bytes(self.work), tree_bytes(chained))

    def test_chained_stages_with_flags_equal_pipeline(self):
        flags = {'subjects': 3, 'seed': 7, 'resolution': 16}
        chained = self.make_dir()
        quiet_call('pipeline', workdir=str(self.work), **flags)
        for stage in ('synth', 'preprocess', 'train', 'match', 'fuse', 'eval'):
            quiet_call(stage, workdir=str(chained), **flags)
        self.assertEqual(tree_bytes(self.work), tree_bytes(chained))

    def test_stage_refuses_inputs_from_another_config(self):
        quiet_call('synth', workdir=str(self.work), config=str(self.ini))
        with self.assertRaises(CommandError) as caught:
            quiet_call('preprocess', workdir=str(self.work), config=str(self.ini), resolution=24)
        self.assertEqual(caught.exception.returncode, 3)
        self.assertIn('config=', str(caught.exception))
        self.assertFalse((self.work / 'grids').exists())

    def test_flags_override_the_file(self):
        self.pipeline(self.work, subjects=3, metrics='l1')
        results = read_results(self.work / 'results.csv')
        self.assertNotIn('shape/mahalanobis', results)
        self.assertEqual(len(list((self.work / 'grids').glob('*.grid'))), 6)

    def test_signed_product_can_be_enabled(self):
        self.pipeline(self.work, allow_signed_product=True)
        self.assertIn('score-fusion/l1/zscore/product', read_results(self.work / 'results.csv'))

    def test_fused_matrices_are_tagged(self):
        self.pipeline(self.work)
        fused = read_score_matrix(self.work / 'matrices' / 'score-fusion_l1_zscore_mean.csv')
        self.assertEqual(fused.normalization.value, 'zscore')
        self.assertEqual(fused.modality, 'score-fusion')
        self.assertEqual(len(fused.gallery_ids), 4)


class ExitCodeTests(WorkDirMixin, SimpleTestCase):

    def setUp(self):
        self.work = self.make_dir()

    def test_missing_inputs_is_a_data_error(self):
        with self.assertRaises(CommandError) as caught:
            quiet_call('train', workdir=str(self.work))
        self.assertEqual(caught.exception.returncode, 3)

    def test_unknown_config_key_is_a_usage_error(self):
        path = self.work / 'bad.ini'
        path.write_text('[run]\ncolour = red\n')
        with self.assertRaises(CommandError) as caught:
            quiet_call('synth', workdir=str(self.work), config=str(path))
        self.assertEqual(caught.exception.returncode, 2)

    def test_too_few_subjects_is_a_usage_error(self):
        with self.assertRaises(CommandError) as caught:
            quiet_call('synth', workdir=str(self.work), subjects=1)
        self.assertEqual(caught.exception.returncode, 2)

    def test_constant_matrix_is_a_numeric_error(self):
        matrices = self.work / 'matrices'
        for modality in ('shape', 'color'):
            flat = ScoreMatrix(np.ones((2, 2)), ['S0', 'S1'], ['S0', 'S1'], Polarity.DISTANCE, modality)
            write_score_matrix(matrices / f'{modality}_l1.csv', flat)
        with self.assertRaises(CommandError) as caught:
            quiet_call('fuse', workdir=str(self.work), metrics='l1')
        self.assertEqual(caught.exception.returncode, 4)


class ExplicitEvalTests(WorkDirMixin, TestCase):

    def setUp(self):
        self.work = self.make_dir()
        self.path = self.work / 'example.csv'
        write_score_matrix(self.path, ScoreMatrix([[0.1, 0.9], [0.8, 0.2]], ['S0', 'S1'], ['S0', 'S1']))

    def evaluate(self, **options):
        out = self.work / 'out'
        quiet_call('eval', workdir=str(self.work), matrix=[str(self.path)], out=str(out), **options)
        return out

    def test_rank_one_of_two_by_two(self):
        out = self.evaluate()
        results = read_results(out / 'results.csv')
        self.assertEqual(float(results['example']['rank1']), 1.0)
        self.assertTrue((out / 'cmc.svg').is_file())
        self.assertTrue((out / 'roc.svg').is_file())

    def test_record_stores_results_once(self):
        self.evaluate(record=True)
        self.evaluate(record=True)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.config_hash, config_hash(load_config()))
        result = ExperimentResult.objects.get(run=run)
        self.assertEqual(result.configuration, 'example')
        self.assertEqual(result.rank1, 1.0)
        self.assertIsNone(result.reference_rank1)
        self.assertEqual(run.best_result(), result)


@tag('slow')
@skipUnless(os.environ.get('RANGEFACE_SLOW_TESTS'), 'set RANGEFACE_SLOW_TESTS=1 to run the 100-subject benchmark')
class BenchmarkTests(WorkDirMixin, SimpleTestCase):
    """
    Default configuration: 100 subjects, rotations up to 10 degrees, 0.005
    depth noise and two voids per capture.
    """

    def test_each_modality_and_fusion_recognize_most_subjects(self):
        work = self.make_dir()
        quiet_call('pipeline', workdir=str(work))
        results = read_results(work / 'results.csv')
        shape = float(results['shape/l1']['rank1'])
        color = float(results['color/l1']['rank1'])
        fused = float(results['score-fusion/l1/zscore/mean']['rank1'])
        self.assertGreaterEqual(shape, 0.90)
        self.assertGreaterEqual(color, 0.90)
        self.assertGreaterEqual(fused, max(shape, color) - 0.02)
