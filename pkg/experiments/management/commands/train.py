"""
Train the shape, color and image-fusion subspaces on the gallery grids.

Usage:
    python manage.py train --workdir work --config run.ini
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import run_train


class Command(StageCommand):
    help = 'Train one PCA subspace per modality on the gallery'

    def run_stage(self, config, digest, work, options):
        written = run_train(config, work, digest)
        return f'Wrote {len(written)} subspaces to {work.models}'
