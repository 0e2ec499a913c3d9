"""
Project gallery and probes into each subspace and fill the score matrices.

Usage:
    python manage.py match --workdir work --config run.ini
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import run_match


class Command(StageCommand):
    help = 'Compute gallery × probe distance matrices per modality and metric'

    def run_stage(self, config, digest, work, options):
        written = run_match(config, work, digest)
        return f'Wrote {len(written)} score matrices to {work.matrices}'
