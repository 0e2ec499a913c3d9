"""
Pipeline stages shared by the individual management commands and
``pipeline``. Each stage reads the previous stage's artifacts from the
work directory and writes its own, so running the stages one by one gives
the same bytes as one ``pipeline`` run.

Work directory layout:
    dataset/    manifest.csv, meshes/, landmarks/, point_counts.csv
    grids/      <subject>_<pose>.grid
    models/     shape.pca, color.pca, concat.pca
    matrices/   <modality>_<metric>[_<normalization>_<rule>].csv
    reports/    CMC / ROC CSVs and SVG figures
    results.csv
"""
import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

from evaluation.evalkit import cmc, rank_of_true_match, roc, tar_at_far
from evaluation.report import emit_report
from experiments import config as run_config
from experiments.models import ExperimentResult, ExperimentRun
from normalization.gridio import read_grid, write_grid
from normalization.normalize import grid_to_vectors, normalize_record
from rangeface.artifacts import config_comment, read_config_hash, write_artifact
from rangeface.concurrency import ordered_map
from rangeface.errors import ArtifactError, EvaluationError, FusionError
from recognition.fusion import FusionRule, fuse_image, fuse_scores, normalize_scores
from recognition.matcher import Normalization, read_score_matrix, score_matrix, write_score_matrix
from recognition.subspace import Modality, project, read_subspace, train, write_subspace
from scans.facegen import read_manifest, synth_dataset
from scans.mesh import PoseTag, SubjectRecord, format_float, parse_landmarks, parse_mesh

logger = logging.getLogger(__name__)

REFERENCE_COLUMN = 'paper (CAESAR, not reproducible)'

# Published rank-one rates on real body scans, shown next to
# ours for orientation only.
REFERENCE_RANK1 = {
    'color/mahalanobis': 0.728,
    'shape/mahalanobis': 0.708,
    'image-fusion/mahalanobis': 0.7738,
    'score-fusion/mahalanobis/zscore/mean': 0.81,
    'color/l1': 0.778,
    'shape/l1': 0.683,
    'image-fusion/l1': 0.794,
    'score-fusion/l1/zscore/mean': 0.82,
}

# Score-matrix file stem per subspace modality.
MATRIX_LABELS = {
    Modality.SHAPE: 'shape',
    Modality.COLOR: 'color',
    Modality.CONCAT: 'image-fusion',
}

SCORE_FUSION = 'score-fusion'


@dataclass(frozen=True)
class WorkDir:
    root: Path

    @classmethod
    def at(cls, path):
        return cls(Path(path))

    @property
    def dataset(self):
        return self.root / 'dataset'

    @property
    def grids(self):
        return self.root / 'grids'

    @property
    def models(self):
        return self.root / 'models'

    @property
    def matrices(self):
        return self.root / 'matrices'

    @property
    def reports(self):
        return self.root / 'reports'

    @property
    def results(self):
        return self.root / 'results.csv'


def _require_dir(path, stage):
    if not path.is_dir():
        raise ArtifactError(f'{path} not found; run the {stage} stage first')


def _require_config(path, config_hash):
    """Refuse inputs written under a different effective configuration."""
    recorded = read_config_hash(path)
    if config_hash and recorded and recorded != config_hash:
        raise ArtifactError(
            f'{path} was written with config={recorded} but this run uses config={config_hash}; '
            'give every stage the same --config file and flags'
        )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def load_records(dataset_dir):
    """SubjectRecords of a dataset, in manifest order."""
    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / 'manifest.csv'
    if not manifest.is_file():
        raise ArtifactError(f'{manifest} not found; run the synth stage first')
    records = []
    for row in read_manifest(manifest):
        mesh = parse_mesh((dataset_dir / row['mesh_path']).read_text())
        landmarks = parse_landmarks((dataset_dir / row['landmark_path']).read_text())
        records.append(SubjectRecord(row['subject_id'], row['pose'], mesh, landmarks, row['transform']))
    return records


def run_synth(config, work, config_hash=None, threads=None):
    run = config['run']
    manifest = synth_dataset(
        run['subjects'],
        run['seed'],
        run_config.capture_params(config, PoseTag.GALLERY),
        run_config.capture_params(config, PoseTag.PROBE),
        work.dataset,
        config_hash=config_hash,
        threads=threads,
    )
    return manifest


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def run_preprocess(config, work, config_hash=None, threads=None):
    records = load_records(work.dataset)
    _require_config(work.dataset / 'manifest.csv', config_hash)
    cfg = run_config.grid_config(config)
    include_rgb = cfg.color_mode == 'rgb'

    def process(record):
        grid = normalize_record(record, cfg)
        return write_grid(work.grids / f'{record.subject_id}_{record.pose_tag.value}.grid', grid, config_hash, include_rgb)

    written = ordered_map(process, records, threads=threads)
    logger.info('preprocessed %d records into %s', len(written), work.grids)
    return written


# ---------------------------------------------------------------------------
# train / match
# ---------------------------------------------------------------------------

def load_grids(grids_dir, config_hash=None):
    """(gallery grids, probe grids), each sorted by subject id."""
    grids_dir = Path(grids_dir)
    _require_dir(grids_dir, 'preprocess')
    paths = sorted(grids_dir.glob('*.grid'))
    for path in paths:
        _require_config(path, config_hash)
    grids = [read_grid(path) for path in paths]
    gallery = sorted((g for g in grids if g.pose_tag == PoseTag.GALLERY), key=lambda g: g.subject_id)
    probes = sorted((g for g in grids if g.pose_tag == PoseTag.PROBE), key=lambda g: g.subject_id)
    if not gallery or not probes:
        raise ArtifactError(f'{grids_dir} needs both gallery and probe grids')
    return gallery, probes


def modality_vectors(grids, config):
    """{Modality: [vector per grid]} for shape, color and their concatenation."""
    color_mode = config['normalize']['color_mode']
    standardize = config['fusion']['standardize_image_fusion']
    vectors = {modality: [] for modality in Modality}
    for grid in grids:
        shape_vector, color_vector = grid_to_vectors(grid, color_mode)
        vectors[Modality.SHAPE].append(shape_vector)
        vectors[Modality.COLOR].append(color_vector)
        vectors[Modality.CONCAT].append(
            fuse_image(shape_vector, color_vector, standardize, expected_length=grid.resolution ** 2)
        )
    return vectors


def run_train(config, work, config_hash=None, threads=None):
    """One subspace per modality, trained on the gallery only."""
    gallery, _ = load_grids(work.grids, config_hash)
    vectors = modality_vectors(gallery, config)
    n_components = config['subspace']['n_components']

    def fit(modality):
        subspace = train(vectors[modality], n_components=n_components, modality=modality)
        logger.info(
            '%s subspace: %d components from %d gallery scans',
            modality.value, subspace.components, subspace.training_count,
        )
        return write_subspace(work.models / f'{modality.value}.pca', subspace, config_hash)

    return ordered_map(fit, list(Modality), threads=threads)


def run_match(config, work, config_hash=None, threads=None):
    gallery, probes = load_grids(work.grids, config_hash)
    _require_dir(work.models, 'train')
    gallery_vectors = modality_vectors(gallery, config)
    probe_vectors = modality_vectors(probes, config)
    written = []
    for modality in Modality:
        model_path = work.models / f'{modality.value}.pca'
        _require_config(model_path, config_hash)
        subspace = read_subspace(model_path)
        gallery_features = [
            project(subspace, vector, grid.subject_id, grid.pose_tag)
            for grid, vector in zip(gallery, gallery_vectors[modality])
        ]
        probe_features = [
            project(subspace, vector, grid.subject_id, grid.pose_tag)
            for grid, vector in zip(probes, probe_vectors[modality])
        ]
        label = MATRIX_LABELS[modality]
        for metric in run_config.metrics(config):
            matrix = score_matrix(
                gallery_features,
                probe_features,
                metric,
                eigenvalues=subspace.eigenvalues,
                modality=label,
                threads=threads,
            )
            matrix = matrix.with_values(matrix.values, config_hash=config_hash or '')
            written.append(write_score_matrix(work.matrices / f'{label}_{metric}.csv', matrix))
    return written


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------

def run_fuse(config, work, config_hash=None):
    """Shape + color score fusion for every metric × normalization × rule."""
    _require_dir(work.matrices, 'match')
    section = config['fusion']
    written = []
    for metric in run_config.metrics(config):
        inputs = [work.matrices / f'{label}_{metric}.csv' for label in ('shape', 'color')]
        for path in inputs:
            _require_config(path, config_hash)
        shape, color = (read_score_matrix(path) for path in inputs)
        for method in (Normalization.MINMAX, Normalization.ZSCORE):
            shape_n = normalize_scores(shape, method, section['scope'])
            color_n = normalize_scores(color, method, section['scope'])
            for rule in FusionRule:
                try:
                    fused = fuse_scores(
                        shape_n,
                        color_n,
                        rule,
                        allow_signed_product=section['allow_signed_product'],
                        modality=SCORE_FUSION,
                    )
                except FusionError as exc:
                    if rule != FusionRule.PRODUCT:
                        raise
                    logger.warning('skipping %s/%s/%s: %s', metric, method.value, rule.value, exc)
                    continue
                fused = fused.with_values(fused.values, config_hash=config_hash or '')
                name = f'{SCORE_FUSION}_{metric}_{method.value}_{rule.value}.csv'
                written.append(write_score_matrix(work.matrices / name, fused))
    return written


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluatedMatrix:
    configuration: str
    cmc: object
    roc: object
    mean_rank: float


def configuration_label(path):
    """'score-fusion_l1_zscore_mean.csv' → 'score-fusion/l1/zscore/mean'."""
    return Path(path).stem.replace('_', '/')


def evaluate_matrix(path):
    matrix = read_score_matrix(path)
    ranks = rank_of_true_match(matrix)
    return EvaluatedMatrix(configuration_label(path), cmc(matrix), roc(matrix), float(ranks.mean()))


def results_csv(evaluated, far, config_hash=None):
    buffer = io.StringIO()
    buffer.write(config_comment(config_hash))
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['configuration', 'rank1', f'tar_at_far_{far:g}', 'mean_rank', REFERENCE_COLUMN])
    for item in evaluated:
        reference = REFERENCE_RANK1.get(item.configuration)
        writer.writerow([
            item.configuration,
            format_float(item.cmc.rank1),
            format_float(tar_at_far(item.roc, far)),
            format_float(item.mean_rank),
            '' if reference is None else format_float(reference),
        ])
    return buffer.getvalue()


def figure_grid(metrics):
    """
    (name, title, kind, configurations) for every standard figure:
    CMC per metric across modalities, CMC across fusion rules and
    normalizations, and image- versus score-level fusion as CMC and ROC.
    """
    figures = []
    for metric in metrics:
        figures.append((
            f'cmc_{metric}',
            f'Shape, color and fusion ({metric})',
            'cmc',
            [f'shape/{metric}', f'color/{metric}', f'image-fusion/{metric}',
             f'{SCORE_FUSION}/{metric}/zscore/mean'],
        ))
        figures.append((
            f'cmc_rules_{metric}',
            f'Score fusion rules ({metric})',
            'cmc',
            [
                f'{SCORE_FUSION}/{metric}/{method.value}/{rule.value}'
                for method in (Normalization.MINMAX, Normalization.ZSCORE)
                for rule in FusionRule
            ],
        ))
    levels = [
        label
        for metric in metrics
        for label in (f'image-fusion/{metric}', f'{SCORE_FUSION}/{metric}/zscore/mean')
    ]
    figures.append(('cmc_fusion_levels', 'Image versus score fusion', 'cmc', levels))
    figures.append(('roc_fusion_levels', 'Image versus score fusion', 'roc', levels))
    return figures


def _emit(evaluated, name, title, kind, out_dir, config_hash):
    curves = [getattr(item, kind) for item in evaluated]
    labels = [item.configuration for item in evaluated]
    return emit_report(curves, labels, out_dir, name, title=title, config_hash=config_hash)


def run_eval(config, work, config_hash=None, matrix_paths=None, out_dir=None, threads=None):
    """
    Evaluate every matrix under matrices/ (or the explicit ``matrix_paths``)
    and write results.csv plus the report figures.

    Returns the list of EvaluatedMatrix, in file order.
    """
    far = config['evalkit']['far_operating_point']
    if matrix_paths:
        paths = [Path(path) for path in matrix_paths]
        results_path = Path(out_dir) / 'results.csv' if out_dir else work.results
        reports_dir = Path(out_dir) if out_dir else work.reports
    else:
        _require_dir(work.matrices, 'match')
        paths = sorted(work.matrices.glob('*.csv'))
        for path in paths:
            _require_config(path, config_hash)
        results_path = work.results
        reports_dir = work.reports
    if not paths:
        raise EvaluationError('no score matrices to evaluate')

    evaluated = ordered_map(evaluate_matrix, paths, threads=threads)
    write_artifact(results_path, results_csv(evaluated, far, config_hash))

    if matrix_paths:
        _emit(evaluated, 'cmc', 'Cumulative match characteristic', 'cmc', reports_dir, config_hash)
        _emit(evaluated, 'roc', 'Verification', 'roc', reports_dir, config_hash)
    else:
        by_label = {item.configuration: item for item in evaluated}
        for name, title, kind, labels in figure_grid(run_config.metrics(config)):
            present = [by_label[label] for label in labels if label in by_label]
            if present:
                _emit(present, name, title, kind, reports_dir, config_hash)
    for item in evaluated:
        logger.info('%s: rank-1 %.4f', item.configuration, item.cmc.rank1)
    return evaluated


STAGES = ('synth', 'preprocess', 'train', 'match', 'fuse', 'eval')


def run_pipeline(config, work, config_hash=None, threads=None):
    run_synth(config, work, config_hash, threads)
    run_preprocess(config, work, config_hash, threads)
    run_train(config, work, config_hash, threads)
    run_match(config, work, config_hash, threads)
    run_fuse(config, work, config_hash)
    return run_eval(config, work, config_hash, threads=threads)


def record_results(config, config_hash, work, evaluated):
    """Store evaluated matrices as ExperimentRun / ExperimentResult rows."""
    far = config['evalkit']['far_operating_point']
    run, created = ExperimentRun.objects.update_or_create(
        config_hash=config_hash,
        defaults={
            'config': config,
            'subjects': config['run']['subjects'],
            'work_dir': str(work.root),
        },
    )
    for item in evaluated:
        ExperimentResult.objects.update_or_create(
            run=run,
            configuration=item.configuration,
            defaults={
                'rank1': item.cmc.rank1,
                'tar_at_far': tar_at_far(item.roc, far),
                'far': far,
                'mean_rank': item.mean_rank,
                'reference_rank1': REFERENCE_RANK1.get(item.configuration),
            },
        )
    logger.info('%s run %s with %d results', 'recorded' if created else 'updated', config_hash, len(evaluated))
    return run
