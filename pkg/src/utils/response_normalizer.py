"""
Response Normalizer Module

This module builds the JSON envelopes the command line prints on stdout, so
every subcommand reports success and failure in the same shape.
"""

from typing import Any, Dict, Optional

from src.exceptions import RepairError

SCHEMA_VERSION = 1


def success_response(message: str, data: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Create a standardized success response.

    Args:
        message: Success message
        data: Optional data to include in the response

    Returns:
        Dict containing the standardized success response
    """
    response = {
        'success': True,
        'schema_version': SCHEMA_VERSION,
        'message': message
    }
    if data is not None:
        response['data'] = data
    return response


def error_response(message: str, error_code: Optional[str] = None) -> Dict[str, Any]:
    """
    Create a standardized error response.

    Args:
        message: Error message
        error_code: Optional error code

    Returns:
        Dict containing the standardized error response
    """
    response = {
        'success': False,
        'schema_version': SCHEMA_VERSION,
        'message': message
    }
    if error_code is not None:
        response['error_code'] = error_code
    return response


def normalize_exception(exc: BaseException) -> Dict[str, Any]:
    """
    Turn any exception into an error response.

    Toolkit errors keep their own code, anything else is reported as ``internal``.
    """
    if isinstance(exc, RepairError):
        return error_response(str(exc), exc.error_code)
    return error_response(f"{type(exc).__name__}: {exc}", 'internal')


def is_valid_response(response: Dict[str, Any]) -> bool:
    """
    Validate if a response envelope is consistent.

    Args:
        response: Envelope built by this module

    Returns:
        bool indicating if the response is valid
    """
    if not isinstance(response, dict) or 'success' not in response:
        return False
    if response['success'] and 'error_code' in response:
        return False
    if not response['success'] and 'data' in response:
        return False
    return True
