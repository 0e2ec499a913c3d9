from django.apps import AppConfig


class ExperimentsConfig(AppConfig):
    """
    🔍 EXPLANATION: App Configuration
    The experiments app owns the command-line surface (management commands),
    the run configuration and the optional database record of results.
    """
    name = 'experiments'
    verbose_name = 'Experiment runs'
