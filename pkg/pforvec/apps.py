from django.apps import AppConfig


class PforvecConfig(AppConfig):
    name = 'pforvec'
    verbose_name = 'pforvec'
