"""
Patterned Linear Algebra
^^^^^^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Closed-form linear algebra over the patterned linear group: block matrices
with `r` identical diagonal blocks and identical off-diagonal blocks,

    I_r ⊗ (A - B) + 𝟙𝟙ᵀ ⊗ B,

so that every diagonal block equals `A` and every off-diagonal block equals
`B`. The group is closed under products, inverses and discrete Lyapunov
solves, so none of the routines here ever densify an `rn x rn` matrix.

Every patterned matrix shares the same pair of invariant subspaces: the
𝟙-aligned subspace, on which it acts as `A + (r-1)B`, and its orthogonal
complement, on which it acts as `A - B`. Most routines below are two small
computations, one per subspace.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike

from .error import (
    DimensionError,
    NotPositiveDefiniteError,
    StructureError,
    UnstableError,
)
from .utils.ensure import ensure
from .utils.numeric import (
    as_matrix,
    as_vector,
    checked_inverse,
    ensure_symmetric,
    is_positive_definite,
    spectral_radius,
    symmetrize,
)

STRUCTURE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class PatternedMatrix:
    """
    Element of the patterned linear group `PL(r x n)`.

    `diag_part` is the block found at every `(i, i)` position of the dense
    form, `off_part` the block found at every `(i, j)`, `i != j`, position.
    Blocks are symmetric when built through `make_patterned`; products and
    gains use the generalized (possibly rectangular, non-symmetric) form.
    """

    r: int
    diag_part: np.ndarray
    off_part: np.ndarray

    def __post_init__(self) -> None:
        ensure(self.r >= 2, DimensionError("block count r must be >= 2"))
        diag_part = as_matrix(self.diag_part)
        off_part = as_matrix(self.off_part)
        ensure(
            diag_part.shape == off_part.shape,
            DimensionError(
                f"block shapes differ: {diag_part.shape} vs {off_part.shape}"
            ),
        )
        diag_part.flags.writeable = False
        off_part.flags.writeable = False
        object.__setattr__(self, "diag_part", diag_part)
        object.__setattr__(self, "off_part", off_part)

    @property
    def block_shape(self) -> Tuple[int, int]:
        """
        Shape of a single block.
        """
        return self.diag_part.shape  # type: ignore[return-value]

    @property
    def n(self) -> int:
        """
        Number of rows of a single block.
        """
        return self.diag_part.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        """
        Shape of the dense form.
        """
        rows, columns = self.block_shape
        return (self.r * rows, self.r * columns)

    @property
    def difference(self) -> np.ndarray:
        """
        `A - B`: the action on the complement of the 𝟙-aligned subspace.
        """
        return self.diag_part - self.off_part

    @property
    def aligned(self) -> np.ndarray:
        """
        `A + (r-1)B`: the action on the 𝟙-aligned subspace.
        """
        return self.diag_part + (self.r - 1) * self.off_part

    @property
    def T(self) -> "PatternedMatrix":
        """
        Transpose, again patterned.
        """
        return PatternedMatrix(self.r, self.diag_part.T, self.off_part.T)

    def dense(self) -> np.ndarray:
        """
        Materialize the dense `rn x rn` form.
        """
        return dense(self)


def make_patterned(
    r: int,
    diag_part: ArrayLike,
    off_part: ArrayLike,
    tolerance: float = STRUCTURE_TOLERANCE,
) -> PatternedMatrix:
    """
    Build a symmetric patterned matrix from its two blocks.

    Parameters
    ----------
    r :
        Number of blocks along each side, at least two.
    diag_part :
        Symmetric square block placed on the diagonal.
    off_part :
        Symmetric square block placed everywhere else.
    tolerance :
        Allowed relative asymmetry of the blocks.

    Returns
    -------
    matrix : `PatternedMatrix`
        The structured representation; nothing is densified.
    """
    diag_part = as_matrix(diag_part)
    off_part = as_matrix(off_part)
    ensure(
        diag_part.shape == off_part.shape,
        DimensionError("diag_part and off_part must have the same shape"),
    )
    ensure_symmetric(diag_part, "diag_part", tolerance)
    ensure_symmetric(off_part, "off_part", tolerance)
    return PatternedMatrix(r, diag_part, off_part)


def dense(matrix: PatternedMatrix) -> np.ndarray:
    """
    Dense form `I_r ⊗ (A - B) + 𝟙𝟙ᵀ ⊗ B`.
    """
    ones = np.ones((matrix.r, matrix.r))
    return np.kron(np.eye(matrix.r), matrix.difference) + np.kron(
        ones, matrix.off_part
    )


def project(matrix: ArrayLike, r: int) -> Tuple[PatternedMatrix, float]:
    """
    Project a dense block matrix onto the patterned structure by averaging
    its diagonal blocks and its off-diagonal blocks.

    Parameters
    ----------
    matrix :
        Matrix whose both sides are divisible by `r`. Need not be square.
    r :
        Number of blocks along each side.

    Returns
    -------
    projection : `PatternedMatrix`
        Block averages, in generalized (unchecked symmetry) form.
    residual : `float`
        Largest absolute deviation of any block from its average.
    """
    matrix = as_matrix(matrix)
    rows, columns = matrix.shape
    ensure(
        r >= 2 and rows % r == 0 and columns % r == 0,
        DimensionError(f"shape {matrix.shape} is not divisible by r={r}"),
    )
    a, b = rows // r, columns // r
    blocks = matrix.reshape(r, a, r, b).transpose(0, 2, 1, 3)
    on_diagonal = np.eye(r, dtype=bool)
    diag_blocks = blocks[on_diagonal]
    off_blocks = blocks[~on_diagonal]
    diag_part = diag_blocks.mean(axis=0)
    off_part = off_blocks.mean(axis=0)
    residual = max(
        float(np.max(np.abs(diag_blocks - diag_part), initial=0.0)),
        float(np.max(np.abs(off_blocks - off_part), initial=0.0)),
    )
    return PatternedMatrix(r, diag_part, off_part), residual


def from_dense(
    matrix: ArrayLike, r: int, tolerance: float = STRUCTURE_TOLERANCE
) -> PatternedMatrix:
    """
    Recognize a dense matrix as an element of the patterned group.

    Parameters
    ----------
    matrix :
        Dense matrix whose side is divisible by `r`.
    r :
        Number of blocks along each side.
    tolerance :
        Largest admissible block deviation, relative to the largest entry
        (absolute below one).

    Returns
    -------
    matrix : `PatternedMatrix`
        The recognized structure.

    Raises
    ------
    StructureError
        If some diagonal (or off-diagonal) block differs from the others
        beyond `tolerance`; the message reports the residual.
    """
    matrix = as_matrix(matrix)
    projection, residual = project(matrix, r)
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    ensure(
        residual <= tolerance * scale,
        StructureError(f"matrix is not patterned (residual {residual:g})"),
    )
    return projection


def pat_det(matrix: PatternedMatrix) -> float:
    """
    Determinant `det(A - B)^(r-1) det(A + (r-1)B)`.
    """
    return float(
        np.linalg.det(matrix.difference) ** (matrix.r - 1)
        * np.linalg.det(matrix.aligned)
    )


def pat_eigvals(matrix: PatternedMatrix) -> np.ndarray:
    """
    Spectrum of the dense form: the eigenvalues of `A - B`, each with
    multiplicity `r - 1`, followed by those of `A + (r-1)B`.
    """
    return np.concatenate(
        [
            np.tile(np.linalg.eigvals(matrix.difference), matrix.r - 1),
            np.linalg.eigvals(matrix.aligned),
        ]
    )


def pat_is_posdef(matrix: PatternedMatrix) -> bool:
    """
    Whether the (symmetric) patterned matrix is positive definite, which
    holds exactly when both `A - B` and `A + (r-1)B` are.
    """
    return is_positive_definite(matrix.difference) and is_positive_definite(
        matrix.aligned
    )


def pat_inverse(matrix: PatternedMatrix) -> PatternedMatrix:
    """
    Structured inverse.

    With `F = (A - (r-1) B (A + (r-2)B)^-1 B)^-1` and
    `G = (A + (r-1)B)^-1 B (A - B)^-1` the inverse is
    `I_r ⊗ (F + G) - 𝟙𝟙ᵀ ⊗ G`: its diagonal block is `F` and its
    off-diagonal block is `-G`.

    Raises
    ------
    SingularBlockError
        If any of `A - B`, `A + (r-2)B`, `A + (r-1)B` or the bracket defining
        `F` has reciprocal condition number below `1e-12`.
    """
    ensure(
        matrix.block_shape[0] == matrix.block_shape[1],
        DimensionError("only square blocks can be inverted"),
    )
    r = matrix.r
    a, b = matrix.diag_part, matrix.off_part
    inverse_difference = checked_inverse(matrix.difference, "A - B")
    inverse_aligned = checked_inverse(matrix.aligned, "A + (r-1)B")
    inverse_partial = checked_inverse(a + (r - 2) * b, "A + (r-2)B")
    f = checked_inverse(a - (r - 1) * b @ inverse_partial @ b, "F bracket")
    g = inverse_aligned @ b @ inverse_difference
    return PatternedMatrix(r, f, -g)


def pat_mul(left: PatternedMatrix, right: PatternedMatrix) -> PatternedMatrix:
    """
    Structured product.

    For `left = (A, B)` and `right = (C, D)` the product is patterned with
    `(A - B)(C - D)` acting off the 𝟙-aligned subspace and off-diagonal
    block `B(C - D) + (A - B)D + r B D`. The result is returned in
    generalized form; it need not be symmetric.
    """
    ensure(left.r == right.r, DimensionError("block counts differ"))
    ensure(
        left.block_shape[1] == right.block_shape[0],
        DimensionError(
            f"blocks {left.block_shape} and {right.block_shape} do not "
            "conform"
        ),
    )
    r = left.r
    difference = left.difference @ right.difference
    off_part = (
        left.off_part @ right.difference
        + left.difference @ right.off_part
        + r * left.off_part @ right.off_part
    )
    return PatternedMatrix(r, difference + off_part, off_part)


def pat_add(left: PatternedMatrix, right: PatternedMatrix) -> PatternedMatrix:
    """
    Structured sum.
    """
    ensure(left.r == right.r, DimensionError("block counts differ"))
    return PatternedMatrix(
        left.r,
        left.diag_part + right.diag_part,
        left.off_part + right.off_part,
    )


def pat_matvec(matrix: PatternedMatrix, vector: ArrayLike) -> np.ndarray:
    """
    Apply a patterned matrix to a stacked vector without densifying:
    `(A - B)` acts agent-wise and `B` acts on the sum over agents.
    """
    vector = as_vector(vector)
    rows, columns = matrix.block_shape
    ensure(
        vector.size == matrix.r * columns,
        DimensionError(
            f"vector of length {vector.size} does not match {matrix.shape}"
        ),
    )
    stacked = vector.reshape(matrix.r, columns)
    result = stacked @ matrix.difference.T + stacked.sum(axis=0) @ (
        matrix.off_part.T
    )
    return result.reshape(matrix.r * rows)


def pat_lyapunov_solve(
    closed_loop: PatternedMatrix, cost: PatternedMatrix
) -> PatternedMatrix:
    """
    Solve `P = Aclᵀ P Acl + Qc` for patterned `Acl` and `Qc`.

    The equation decouples onto the 𝟙-aligned subspace and its complement,
    leaving two `n x n` discrete Lyapunov equations with system blocks
    `Ad + (r-1) Aoff` and `Ad - Aoff`.

    Parameters
    ----------
    closed_loop :
        Schur stable patterned closed-loop matrix.
    cost :
        Positive definite symmetric patterned cost.

    Returns
    -------
    solution : `PatternedMatrix`
        The unique, positive definite and patterned solution.
    """
    ensure(
        closed_loop.r == cost.r
        and closed_loop.block_shape == cost.block_shape
        and closed_loop.block_shape[0] == closed_loop.block_shape[1],
        DimensionError("closed loop and cost do not conform"),
    )
    ensure(
        max(
            spectral_radius(closed_loop.difference),
            spectral_radius(closed_loop.aligned),
        )
        < 1.0,
        UnstableError("closed loop is not Schur stable"),
    )
    ensure(
        pat_is_posdef(cost),
        NotPositiveDefiniteError("cost is not positive definite"),
    )
    r = cost.r
    # scipy solves X = a X aᴴ + q, so pass the transposed system block.
    complement = scipy.linalg.solve_discrete_lyapunov(
        closed_loop.difference.T, cost.difference
    )
    aligned = scipy.linalg.solve_discrete_lyapunov(
        closed_loop.aligned.T, cost.aligned
    )
    off_part = symmetrize((aligned - complement) / r)
    diag_part = symmetrize(complement) + off_part
    return PatternedMatrix(r, diag_part, off_part)
