"""
Base class of the pipeline management commands.

🔍 EXPLANATION:
Every stage command accepts --config and --workdir, builds the effective
configuration (defaults < INI file < flags) and runs one stage function.
Failures become a CommandError with the exit status of the error class:
    2  usage / configuration error
    3  data error (bad or missing input, I/O)
    4  numeric error (degenerate geometry, zero variance, ...)

All config flags are accepted by every stage. Give the chained stages the
same --config file and flags: a stage refuses inputs whose config hash
differs from its own (exit 3).
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from experiments.config import ConfigError, config_hash, load_config, validate
from experiments.stages import WorkDir
from rangeface.errors import RangefaceError

logger = logging.getLogger('experiments')

# flag → (section, key, argparse options)
CONFIG_FLAGS = {
    'subjects': ('run', 'subjects', {'type': int, 'help': 'Number of synthetic subjects'}),
    'seed': ('run', 'seed', {'type': int, 'help': 'Master seed of the dataset'}),
    'resolution': ('normalize', 'resolution', {'type': int, 'help': 'Grid size in pixels per side'}),
    'color-mode': ('normalize', 'color_mode', {'choices': ['luminance', 'rgb'], 'help': 'Color vector layout'}),
    'components': ('subspace', 'n_components', {'type': int, 'help': 'Keep at most this many components (0 = all)'}),
    'metrics': ('matcher', 'metrics', {'help': 'Comma-separated distances: l1,mahalanobis'}),
    'scope': ('fusion', 'scope', {'choices': ['global', 'per_probe'], 'help': 'Score normalization statistics'}),
    'allow-signed-product': ('fusion', 'allow_signed_product', {
        'action': 'store_const', 'const': True, 'help': 'Also fuse zscore-normalized scores with the product rule',
    }),
    'far': ('evalkit', 'far_operating_point', {'type': float, 'help': 'FAR at which the verification rate is reported'}),
}


class StageCommand(BaseCommand):
    """Subclasses implement ``run_stage``."""

    flags = tuple(CONFIG_FLAGS)

    def add_arguments(self, parser):
        parser.add_argument('--config', help='INI file with [run], [facegen], ... sections')
        parser.add_argument('--workdir', default='work', help='Directory holding the stage artifacts (default: work)')
        for flag in self.flags:
            _, _, options = CONFIG_FLAGS[flag]
            parser.add_argument(f'--{flag}', **options)

    def overrides(self, options):
        result = {}
        for flag in self.flags:
            section, key, _ = CONFIG_FLAGS[flag]
            result[(section, key)] = options.get(flag.replace('-', '_'))
        return result

    def handle(self, *args, **options):
        try:
            config = load_config(options['config'], self.overrides(options))
            validate(config)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2) from exc
        except OSError as exc:
            raise CommandError(f'cannot read config: {exc}', returncode=3) from exc

        digest = config_hash(config)
        work = WorkDir.at(options['workdir'])
        logger.info('%s: config=%s workdir=%s', self.stage_name, digest, work.root)
        try:
            message = self.run_stage(config, digest, work, options)
        except RangefaceError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=3) from exc
        if message:
            self.stdout.write(self.style.SUCCESS(message))

    @property
    def stage_name(self):
        return self.__class__.__module__.rsplit('.', 1)[-1]

    def run_stage(self, config, digest, work, options):
        raise NotImplementedError
