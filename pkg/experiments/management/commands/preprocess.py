"""
Crop, align and resample every scan of the dataset.

Usage:
    python manage.py preprocess --workdir work --config run.ini
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import run_preprocess


class Command(StageCommand):
    help = 'Normalize every dataset scan into a fixed-size range grid'

    def run_stage(self, config, digest, work, options):
        written = run_preprocess(config, work, digest)
        return f'Wrote {len(written)} grids to {work.grids}'
