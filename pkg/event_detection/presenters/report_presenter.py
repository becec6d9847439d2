from event_detection.exceptions import ConfigError, EventDetectionError


def present_success(command: str, result: dict, config: dict, seed: int, deterministic: bool, threads: int,
                    run_id=None) -> dict:

    return {
        'success': True,
        'command': command,
        'run_id': str(run_id) if run_id else None,
        'seed': seed,
        'deterministic': deterministic,
        'threads': threads,
        'config': config,
        'result': result,
    }


def present_error(message: str, error_code: str = 'ERROR') -> dict:

    return {
        'success': False,
        'message': message,
        'error': error_code,
    }


def present_exception(exc: Exception) -> dict:
    if isinstance(exc, ConfigError):
        payload = present_error(str(exc), exc.error_code)
        if exc.errors:
            payload['details'] = exc.errors
        return payload
    if isinstance(exc, EventDetectionError):
        return present_error(str(exc), exc.error_code)
    if isinstance(exc, FileNotFoundError):
        return present_error(str(exc), 'FILE_NOT_FOUND')
    return present_error(f'An error occurred: {exc}', 'INTERNAL_ERROR')
