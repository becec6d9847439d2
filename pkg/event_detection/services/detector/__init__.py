from event_detection.services.detector.anchors import AnchorSet, feature_shapes, generate_anchors
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.detector.model import DetectorModel, HeadOutput, RecurrentState, build_model

__all__ = [
    'AnchorSet', 'DetectorModel', 'HeadOutput', 'NetworkConfig', 'RecurrentState', 'build_model',
    'feature_shapes', 'generate_anchors',
]
