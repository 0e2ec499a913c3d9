# Generated by Django 5.1 on 2026-10-19 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('config_hash', models.CharField(help_text='First 12 hex digits of the SHA-256 of the effective configuration', max_length=12, unique=True)),
                ('config', models.JSONField(help_text='Effective configuration the run used')),
                ('subjects', models.PositiveIntegerField(help_text='Number of synthetic subjects')),
                ('work_dir', models.CharField(blank=True, help_text='Work directory of the run', max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='ExperimentResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('configuration', models.CharField(help_text='modality/metric[/normalization/rule]', max_length=200)),
                ('rank1', models.FloatField(help_text='Rank-one identification rate')),
                ('tar_at_far', models.FloatField(help_text='Verification rate at the configured false accept rate')),
                ('far', models.FloatField(help_text='False accept rate operating point')),
                ('mean_rank', models.FloatField(help_text='Mean rank of the true match')),
                ('reference_rank1', models.FloatField(blank=True, help_text='Rank-one rate reported for the real body-scan data, when one exists', null=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='results', to='experiments.experimentrun')),
            ],
            options={
                'ordering': ['run', 'configuration'],
                'constraints': [models.UniqueConstraint(fields=('run', 'configuration'), name='unique_result_per_run')],
            },
        ),
    ]
