"""
Run every stage in order: synth → preprocess → train → match → fuse → eval.

Usage:
    python manage.py pipeline --subjects 10 --seed 7 --workdir work

The artifacts are byte-identical to running the six stage commands one
after the other with the same configuration.
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import STAGES, record_results, run_pipeline


class Command(StageCommand):
    help = 'Run the full synthetic face recognition experiment'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--record', action='store_true', help='Store the results in the database')

    def run_stage(self, config, digest, work, options):
        self.stdout.write(self.style.SUCCESS(f'Running {" → ".join(STAGES)} (config={digest})'))
        evaluated = run_pipeline(config, work, digest)
        if options['record']:
            record_results(config, digest, work, evaluated)
        for item in evaluated:
            self.stdout.write(f'  {item.configuration:<40} rank-1 {item.cmc.rank1:.4f}')
        return f'Results written to {work.results}'
