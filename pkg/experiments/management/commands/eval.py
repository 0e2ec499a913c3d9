"""
Evaluate score matrices: CMC and ROC curves, results table and figures.

Usage:
    python manage.py eval --workdir work --config run.ini [--record]
    python manage.py eval --matrix a.csv --matrix b.csv --out reports/

Without --matrix every matrix under <workdir>/matrices/ is evaluated and
the standard figure grid is drawn. --record also stores the numbers in
the database (run ``python manage.py migrate`` once beforehand).
"""
from experiments.management.stage_command import StageCommand
from experiments.stages import record_results, run_eval


class Command(StageCommand):
    help = 'Compute CMC / ROC, write results.csv and the SVG figures'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--matrix',
            action='append',
            default=[],
            help='Score matrix CSV to evaluate (repeatable); replaces the work directory matrices',
        )
        parser.add_argument('--out', help='Output directory for --matrix evaluation')
        parser.add_argument('--record', action='store_true', help='Store the results in the database')

    def run_stage(self, config, digest, work, options):
        evaluated = run_eval(config, work, digest, matrix_paths=options['matrix'], out_dir=options['out'])
        if options['record']:
            record_results(config, digest, work, evaluated)
        best = max(evaluated, key=lambda item: item.cmc.rank1)
        return f'Evaluated {len(evaluated)} matrices; best rank-1 {best.cmc.rank1:.4f} ({best.configuration})'
