class EventDetectionError(Exception):

    error_code = 'EVENT_DETECTION_ERROR'


class DecodeError(EventDetectionError):
    """Raised when an event or label file does not follow its binary/text layout."""

    error_code = 'DECODE_ERROR'

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f'{message} (byte offset {offset})'
        super().__init__(message)
        self.offset = offset


class ArgumentError(EventDetectionError):

    error_code = 'ARGUMENT_ERROR'


class ConfigError(EventDetectionError):

    error_code = 'CONFIG_ERROR'

    def __init__(self, message: str, errors: list | None = None):
        super().__init__(message)
        self.errors = errors or []


class GraphConstructionError(EventDetectionError):
    """Raised when operator inputs have incompatible shapes."""

    error_code = 'GRAPH_CONSTRUCTION_ERROR'


class GradientCheckError(EventDetectionError):

    error_code = 'GRADIENT_CHECK_ERROR'

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ModelConfigError(EventDetectionError):

    error_code = 'MODEL_CONFIG_ERROR'


class TrainingError(EventDetectionError):

    error_code = 'TRAINING_ERROR'


class SequencingError(EventDetectionError):
    """Raised when a detector session receives a slice out of order."""

    error_code = 'SEQUENCING_ERROR'


class EvaluationError(EventDetectionError):

    error_code = 'EVALUATION_ERROR'


class SyncError(EventDetectionError):

    error_code = 'SYNC_ERROR'


class EstimationError(EventDetectionError):

    error_code = 'ESTIMATION_ERROR'
