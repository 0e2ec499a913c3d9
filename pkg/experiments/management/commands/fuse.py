"""
Score-level fusion of the shape and color matrices.

Usage:
    python manage.py fuse --workdir work --config run.ini

Every metric is fused under both normalizations (minmax, zscore) and all
four rules (mean, min, max, product). The product of zscore-normalized
scores is skipped with a warning unless --allow-signed-product is given.
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import run_fuse


class Command(StageCommand):
    help = 'Fuse shape and color score matrices with every rule and normalization'

    def run_stage(self, config, digest, work, options):
        written = run_fuse(config, work, digest)
        return f'Wrote {len(written)} fused matrices to {work.matrices}'
