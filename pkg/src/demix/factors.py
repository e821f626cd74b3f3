"""Factored matrix representations used throughout the solvers.

All factors are treated as immutable after construction; kernels always
return fresh instances.  Real and complex fields are handled uniformly:
conjugate transposition reduces to plain transposition for real arrays.
"""

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class LowRankFactor:
    """Rank-r factorization U @ diag(s) @ V^H with orthonormal U, V.

    U is n1 x r, V is n2 x r, s holds the r singular values sorted
    nonincreasing.  r may be smaller than the nominal target rank when the
    represented matrix is rank deficient (including r = 0 for zero).
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def dense(self) -> np.ndarray:
        if self.rank == 0:
            dtype = np.result_type(self.U.dtype, self.V.dtype)
            return np.zeros(self.shape, dtype=dtype)
        return (self.U * self.s) @ self.V.conj().T

    def norm(self) -> float:
        return float(np.linalg.norm(self.s))

    def validate(self, tol: float = ORTHO_TOL) -> None:
        r = self.rank
        if self.U.shape[1] != r or self.V.shape[1] != r:
            raise ValueError("factor blocks disagree on rank")
        for name, Q in (("U", self.U), ("V", self.V)):
            dev = Q.conj().T @ Q - np.eye(r)
            if r and np.linalg.norm(dev, 2) > tol:
                raise ValueError(f"{name} columns are not orthonormal")
        if np.any(self.s < 0) or np.any(np.diff(self.s) > 0):
            raise ValueError("singular values must be nonnegative and nonincreasing")


@dataclass(frozen=True)
class HermitianFactor:
    """Hermitian factorization U @ diag(evals) @ U^H with orthonormal U.

    evals are real and sorted nonincreasing; the reconstructed matrix is
    Hermitian by construction.  A zero factor has U of shape (n, 0).
    """

    U: np.ndarray
    evals: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        n = self.U.shape[0]
        return (n, n)

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.evals))

    @property
    def width(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        if self.width == 0:
            return np.zeros(self.shape, dtype=self.U.dtype)
        return (self.U * self.evals) @ self.U.conj().T

    def norm(self) -> float:
        return float(np.linalg.norm(self.evals))

    def trace(self) -> float:
        return float(np.sum(self.evals))

    def validate(self, tol: float = ORTHO_TOL) -> None:
        k = self.width
        if self.evals.shape[0] != k:
            raise ValueError("factor blocks disagree on width")
        dev = self.U.conj().T @ self.U - np.eye(k)
        if k and np.linalg.norm(dev, 2) > tol:
            raise ValueError("U columns are not orthonormal")
        if np.any(np.diff(self.evals) > 0):
            raise ValueError("eigenvalues must be sorted nonincreasing")


@dataclass(frozen=True)
class TangentSpace:
    """Column/row subspace pair defining a tangent space at a rank-r point.

    Members are matrices of the form U @ A^H + B @ V^H.  The Hermitian
    variant shares a single basis (V is U).
    """

    U: np.ndarray
    V: np.ndarray

    @classmethod
    def of(cls, X) -> "TangentSpace":
        if isinstance(X, HermitianFactor):
            return cls(X.U, X.U)
        return cls(X.U, X.V)

    @property
    def hermitian(self) -> bool:
        return self.U is self.V


@dataclass(frozen=True)
class CoreUpdate:
    """Structured representation of W = X + alpha * D for tangent D.

    W = [U Qu] @ M @ [V Qv]^H with M of size 2r x 2r; only M depends on
    alpha, so thresholding W needs a 2r x 2r SVD instead of a dense one.
    The Hermitian variant uses a single complement block (Qv is Qu).
    """

    Qu: np.ndarray
    Qv: np.ndarray
    M: np.ndarray

    @property
    def hermitian(self) -> bool:
        return self.Qu is self.Qv


def zero_low_rank(shape: tuple[int, int], dtype=np.float64) -> LowRankFactor:
    n1, n2 = shape
    return LowRankFactor(
        U=np.zeros((n1, 0), dtype=dtype),
        s=np.zeros(0, dtype=np.float64),
        V=np.zeros((n2, 0), dtype=dtype),
    )


def zero_hermitian(n: int, dtype=np.complex128) -> HermitianFactor:
    return HermitianFactor(U=np.zeros((n, 0), dtype=dtype), evals=np.zeros(0))
