from django.apps import AppConfig


class EventDetectionConfig(AppConfig):
    name = 'event_detection'
