"""
Error Handling Module
"""

import logging
from typing import Any, Dict

logger = logging.getLogger(__name__)


class LabError(Exception):
    """Base exception for the reputation laboratory"""
    pass


class ValidationError(LabError):
    """Invalid game parameters or malformed inputs"""
    pass


class ConfigurationError(LabError):
    """Experiment configuration error"""
    pass


class TopologyError(LabError):
    """Interaction structure cannot be built or queried"""
    pass


class AutodiffError(LabError):
    """Tape misuse or shape mismatch in the autodiff engine"""
    pass


class NumericalError(LabError):
    """Non-finite values in losses, gradients or parameters"""
    pass


class ReputationError(LabError):
    """Reputation update or assessment error"""
    pass


class LearnerError(LabError):
    """Learner update error"""
    pass


class SnapshotError(LabError):
    """Snapshot export or parse error"""
    pass


_ERROR_CODES = (
    (ValidationError, "validation", "VAL001"),
    (ConfigurationError, "configuration", "CFG001"),
    (TopologyError, "topology", "TOP001"),
    (AutodiffError, "autodiff", "AD001"),
    (NumericalError, "numerical", "NUM001"),
    (ReputationError, "reputation", "REP001"),
    (LearnerError, "learner", "LRN001"),
    (SnapshotError, "snapshot", "SNP001"),
)


def handle_error(error: Exception) -> Dict[str, Any]:
    """Handle and log errors"""
    logger.error(f"Error occurred: {str(error)}", exc_info=error)

    for error_class, error_type, code in _ERROR_CODES:
        if isinstance(error, error_class):
            return {
                "error_type": error_type,
                "message": str(error),
                "code": code
            }

    return {
        "error_type": "system",
        "message": f"An unexpected error occurred: {error!r}",
        "code": "SYS001"
    }
