"""
Errors
^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Errors raised by the library. Each family derives from `D3piError` so
callers (notably the command line harness) can map them to exit codes.
"""


class D3piError(Exception):
    """
    Base class of every error raised by this library.
    """


class DimensionError(D3piError):
    """
    Raised when matrix or vector dimensions do not conform.
    """


class AsymmetryError(D3piError):
    """
    Raised when a matrix required to be symmetric is not, within tolerance.
    """


class StructureError(D3piError):
    """
    Raised when a matrix is not in the patterned linear group, or when a
    gain violates the required communication structure.
    """


class SingularBlockError(D3piError):
    """
    Occurs when an intermediate block of a patterned computation is
    singular or too ill-conditioned to invert.
    """


class NotPositiveDefiniteError(D3piError):
    """
    Raised when a matrix required to be positive definite is not.
    """


class UncontrollableError(D3piError):
    """
    Raised when an agent model `(A, B)` is not controllable.
    """


class UnstableError(D3piError):
    """
    Raised when a closed loop required to be Schur stable is not.
    """


class DivergenceError(D3piError):
    """
    Raised by the simulator when the network state blows up.
    """


class RegressionError(D3piError):
    """
    Raised when a recursive least-squares update produces non-finite
    values.
    """


class ConvergenceError(D3piError):
    """
    Raised when an iterative procedure exhausts its budget.
    """


class ConfigurationError(D3piError):
    """
    Raised when a run configuration cannot be parsed or validated.
    """
