"""
Utility Functions For Numeric Operations
^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Small dense linear algebra helpers shared by the library modules.
"""
import numpy as np
from numpy.typing import ArrayLike

from ..error import AsymmetryError, DimensionError, SingularBlockError
from .ensure import ensure

SYMMETRY_TOLERANCE = 1e-9
RCOND_THRESHOLD = 1e-12


def as_matrix(value: ArrayLike) -> np.ndarray:
    """
    Convert `value` into a two dimensional float array.

    Scalars become `1x1` matrices and vectors become row vectors.

    Parameters
    ----------
    value :
        Anything `numpy.array` accepts.

    Returns
    -------
    matrix : `numpy.ndarray`
        A fresh two dimensional `float64` array.
    """
    return np.array(np.atleast_2d(np.asarray(value, dtype=float)))


def as_vector(value: ArrayLike) -> np.ndarray:
    """
    Convert `value` into a flat float array.
    """
    return np.asarray(value, dtype=float).reshape(-1)


def ensure_square(matrix: np.ndarray, name: str = "matrix") -> None:
    """
    Raise `DimensionError` unless `matrix` is square.
    """
    ensure(
        matrix.ndim == 2 and matrix.shape[0] == matrix.shape[1],
        DimensionError(f"{name} must be square, got shape {matrix.shape}"),
    )


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """
    Return the symmetric part `(M + M^T) / 2` of a square matrix.
    """
    return 0.5 * (matrix + matrix.T)


def ensure_symmetric(
    matrix: np.ndarray,
    name: str = "matrix",
    tolerance: float = SYMMETRY_TOLERANCE,
) -> None:
    """
    Raise `AsymmetryError` unless `matrix` is symmetric within `tolerance`,
    measured relative to the largest entry (and absolutely below one).
    """
    ensure_square(matrix, name)
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    asymmetry = float(np.max(np.abs(matrix - matrix.T), initial=0.0))
    ensure(
        asymmetry <= tolerance * scale,
        AsymmetryError(f"{name} is not symmetric (deviation {asymmetry:g})"),
    )


def spectral_radius(matrix: np.ndarray) -> float:
    """
    Largest eigenvalue modulus of a square matrix.
    """
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def is_positive_definite(matrix: np.ndarray) -> bool:
    """
    Whether the symmetric part of `matrix` admits a Cholesky factorization.
    """
    try:
        np.linalg.cholesky(symmetrize(matrix))
    except np.linalg.LinAlgError:
        return False
    return True


def is_positive_semidefinite(
    matrix: np.ndarray, tolerance: float = SYMMETRY_TOLERANCE
) -> bool:
    """
    Whether the smallest eigenvalue of the symmetric part of `matrix` is
    above `-tolerance` (relative to the spectral scale).
    """
    eigenvalues = np.linalg.eigvalsh(symmetrize(matrix))
    scale = max(1.0, float(np.max(np.abs(eigenvalues), initial=0.0)))
    return bool(eigenvalues.min(initial=0.0) >= -tolerance * scale)


def checked_inverse(matrix: np.ndarray, name: str = "block") -> np.ndarray:
    """
    Invert `matrix`, refusing blocks whose reciprocal condition number is
    below `RCOND_THRESHOLD`.

    Parameters
    ----------
    matrix :
        Square matrix to invert.
    name :
        Used in the error message.

    Returns
    -------
    inverse : `numpy.ndarray`
        The inverse of `matrix`.
    """
    ensure_square(matrix, name)
    if matrix.size == 0:
        return matrix.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.linalg.cond(matrix)
    ensure(
        np.isfinite(condition) and 1.0 / condition >= RCOND_THRESHOLD,
        SingularBlockError(f"{name} is singular or ill-conditioned"),
    )
    return np.linalg.inv(matrix)
