from django.apps import AppConfig


class NormalizationConfig(AppConfig):
    name = 'normalization'
