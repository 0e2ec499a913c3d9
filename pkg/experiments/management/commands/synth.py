"""
Generate the synthetic dataset.

Usage:
    python manage.py synth --workdir work --config run.ini
    python manage.py synth --workdir work --subjects 100 --seed 7

This creates, under <workdir>/dataset/:
    - meshes/<subject>_<pose>.mesh      one gallery and one probe scan per subject
    - landmarks/<subject>_<pose>.lmk    ground-truth landmarks in the scan's frame
    - manifest.csv                      records and the capture transforms applied
    - point_counts.csv                  cropped-face vertex counts per pose
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import run_synth


class Command(StageCommand):
    help = 'Generate synthetic gallery/probe face scans with ground-truth landmarks'

    def run_stage(self, config, digest, work, options):
        manifest = run_synth(config, work, digest)
        return f'Wrote {config["run"]["subjects"]} subjects to {manifest}'
