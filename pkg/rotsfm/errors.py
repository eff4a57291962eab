#!/usr/bin/env python3
"""
Exception hierarchy. Each class carries the process exit code the CLI
returns when it escapes a subcommand.
"""

import numpy as np


class RotsfmError(Exception):
    exit_code = 2


class UsageError(RotsfmError):
    exit_code = 1


class DataError(RotsfmError, ValueError):
    """Malformed input: files, rotations, graphs, scene specs."""
    exit_code = 2


class DegenerateError(RotsfmError):
    """Geometry that does not determine the requested quantity."""
    exit_code = 3


class NumericalError(RotsfmError):
    exit_code = 3


# raised by numpy and scipy from inside a solve; converted to NumericalError at
# the optimizer boundary
LINALG_FAILURES = (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError)
