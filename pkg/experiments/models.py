"""
Models for the experiments app.

🔍 EXPLANATION FOR BEGINNERS:
Result files on disk are the primary output of a run. When ``eval`` is
called with ``--record`` the same numbers are also stored here, so runs
with different settings can be compared with a query instead of by
opening CSV files.
"""
from django.db import models


class ExperimentRun(models.Model):
    """
    One evaluated run, identified by its configuration hash.

    🔍 HOW IT'S USED:
    - ``eval --record`` creates or refreshes the run for the current hash
    - results of the run hang off it as ExperimentResult rows
    """

    config_hash = models.CharField(
        max_length=12,
        unique=True,
        help_text='First 12 hex digits of the SHA-256 of the effective configuration',
    )
    config = models.JSONField(help_text='Effective configuration the run used')
    subjects = models.PositiveIntegerField(help_text='Number of synthetic subjects')
    work_dir = models.CharField(max_length=500, blank=True, help_text='Work directory of the run')
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'

    def __str__(self):
        return f'run {self.config_hash} ({self.subjects} subjects)'

    def best_result(self):
        """Configuration with the highest rank-one rate, or None."""
        return self.results.order_by('-rank1', 'configuration').first()


class ExperimentResult(models.Model):
    """
    Metrics of one score matrix, e.g. configuration 'score-fusion/l1/zscore/mean'.
    """

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name='results',
    )
    configuration = models.CharField(max_length=200, help_text='modality/metric[/normalization/rule]')
    rank1 = models.FloatField(help_text='Rank-one identification rate')
    tar_at_far = models.FloatField(help_text='Verification rate at the configured false accept rate')
    far = models.FloatField(help_text='False accept rate operating point')
    mean_rank = models.FloatField(help_text='Mean rank of the true match')
    reference_rank1 = models.FloatField(
        null=True,
        blank=True,
        help_text='Rank-one rate reported for the real body-scan data, when one exists',
    )

    class Meta:
        ordering = ['run', 'configuration']
        constraints = [
            models.UniqueConstraint(fields=['run', 'configuration'], name='unique_result_per_run'),
        ]

    def __str__(self):
        return f'{self.configuration}: rank-1 {self.rank1:.4f}'
