"""Dense kernels: truncated SVD, tangent projections, structured core updates.

The structured update represents X + alpha * P_T(G) as [U Qu] M [V Qv]^H
with a 2r x 2r core M, so rank-r thresholding only needs the SVD (or
eigendecomposition) of M.  This is what makes the fast solver iterations
O(n r^2 + r^3) instead of O(n^2 r).
"""

import numpy as np

from .factors import (
    CoreUpdate,
    HermitianFactor,
    LowRankFactor,
    TangentSpace,
    zero_hermitian,
)
from .validation import as_matrix, check_rank

# Relative cutoff below which an eigenvalue counts as numerically zero for
# the PSD projection.
PSD_EIGENVALUE_CUTOFF = 1e-12


def truncated_svd(Z, r: int) -> LowRankFactor:
    """Best rank-r approximation of Z as an orthonormal factor triple.

    Ties at the rank-r cut keep the first r triplets in LAPACK order, so
    factors are only defined up to rotation; compare reconstructions.
    SVD convergence failures propagate as ``np.linalg.LinAlgError``.
    """
    Z = as_matrix(Z)
    r = check_rank(r, Z.shape)
    U, s, Vh = np.linalg.svd(Z, full_matrices=False)
    return LowRankFactor(
        U=np.ascontiguousarray(U[:, :r]),
        s=np.ascontiguousarray(s[:r]),
        V=np.ascontiguousarray(Vh[:r].conj().T),
    )


def hard_threshold(Z, r: int) -> LowRankFactor:
    """The thresholding operator used by the solvers: keep the top r triplets."""
    return truncated_svd(Z, r)


def tangent_project(T: TangentSpace, Z) -> np.ndarray:
    """Project Z onto T: U U^H Z + Z V V^H - U U^H Z V V^H."""
    Z = as_matrix(Z)
    U, V = T.U, T.V
    if Z.shape != (U.shape[0], V.shape[0]):
        raise ValueError(f"Z has shape {Z.shape}, tangent space expects {(U.shape[0], V.shape[0])}")
    A = U.conj().T @ Z
    ZV = Z @ V
    return U @ A + (ZV - U @ (A @ V)) @ V.conj().T


def _complement_qr(E: np.ndarray, Q0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """QR of E with the Q block orthonormal and orthogonal to range(Q0).

    E is expected to be (numerically) orthogonal to range(Q0) already.  When
    E is rank deficient, Householder QR can leave arbitrary directions in Q
    that overlap Q0; those get rotated out while preserving the product Q R
    (their R rows are zero, so the reconstruction is unaffected).
    """
    E = E - Q0 @ (Q0.conj().T @ E)
    Q, R = np.linalg.qr(E)
    C = Q0.conj().T @ Q
    if Q.shape[1] and np.linalg.norm(C) > 1e-12:
        Q, T = np.linalg.qr(Q - Q0 @ C)
        R = T @ R
    return Q, R


def tangent_components(X: LowRankFactor, D: np.ndarray):
    """Decompose tangent D as U xi V^H + U Rv^H Qv^H + Qu Ru V^H.

    The three terms are mutually orthogonal, so
    ||D||_F^2 = ||xi||_F^2 + ||Ru||_F^2 + ||Rv||_F^2.
    """
    U, V = X.U, X.V
    DV = D @ V
    DhU = D.conj().T @ U
    xi = U.conj().T @ DV
    Qu, Ru = _complement_qr(DV - U @ xi, U)
    Qv, Rv = _complement_qr(DhU - V @ xi.conj().T, V)
    return xi, Qu, Ru, Qv, Rv


def hermitian_tangent_components(X: HermitianFactor, D: np.ndarray):
    """Hermitian analogue: D = U xi U^H + U R^H Q^H + Q R U^H."""
    U = X.U
    DU = D @ U
    xi = U.conj().T @ DU
    xi = (xi + xi.conj().T) / 2
    Q, R = _complement_qr(DU - U @ xi, U)
    return xi, Q, R


def _core_matrix(diag_vals, xi, Ru, Rv, alpha: float) -> np.ndarray:
    k = xi.shape[0]
    dtype = np.result_type(xi.dtype, Ru.dtype, Rv.dtype, np.float64)
    M = np.zeros((2 * k, 2 * k), dtype=dtype)
    M[:k, :k] = np.diag(diag_vals) + alpha * xi
    M[:k, k:] = alpha * Rv.conj().T
    M[k:, :k] = alpha * Ru
    return M


def core_update(X: LowRankFactor, D, alpha: float) -> CoreUpdate:
    """Structured form of W = X + alpha * D for D in the tangent space of X.

    Never forms W densely: Qu comes from QR of (I - U U^H) D V, Qv from QR
    of (I - V V^H) D^H U, and M = [[S + a U^H D V, a Rv^H], [a Ru, 0]].
    Cost O(n r^2 + r^3).
    """
    D = as_matrix(D, "D")
    n1, n2 = X.shape
    if D.shape != (n1, n2):
        raise ValueError(f"D has shape {D.shape}, expected {(n1, n2)}")
    k = X.U.shape[1]
    if 2 * k > min(n1, n2):
        raise ValueError(f"complement blocks of width {k} do not fit in shape {(n1, n2)}")
    xi, Qu, Ru, Qv, Rv = tangent_components(X, D)
    return CoreUpdate(Qu=Qu, Qv=Qv, M=_core_matrix(X.s, xi, Ru, Rv, alpha))


def hermitian_core_update(X: HermitianFactor, D, alpha: float) -> CoreUpdate:
    """Hermitian variant with a single complement block [U Q]."""
    D = as_matrix(D, "D")
    n = X.shape[0]
    if D.shape != (n, n):
        raise ValueError(f"D has shape {D.shape}, expected {(n, n)}")
    k = X.width
    if 2 * k > n:
        raise ValueError(f"complement block of width {k} does not fit in dimension {n}")
    xi, Q, R = hermitian_tangent_components(X, D)
    return CoreUpdate(Qu=Q, Qv=Q, M=_core_matrix(X.evals, xi, R, R, alpha))


def threshold_core(cu: CoreUpdate, X: LowRankFactor, r: int) -> LowRankFactor:
    """Hard-threshold the structured W via the SVD of its 2r x 2r core."""
    Um, sm, Vmh = np.linalg.svd(cu.M)
    k = min(int(r), cu.M.shape[0])
    Bu = np.concatenate([X.U, cu.Qu], axis=1)
    Bv = np.concatenate([X.V, cu.Qv], axis=1)
    return LowRankFactor(
        U=Bu @ Um[:, :k],
        s=np.ascontiguousarray(sm[:k]),
        V=Bv @ Vmh[:k].conj().T,
    )


def psd_rank_project(cu: CoreUpdate, X: HermitianFactor, r: int) -> HermitianFactor:
    """Project the structured Hermitian W onto {Z >= 0, rank <= r}.

    The core M has at most r positive eigenvalues by the inertia argument,
    so keeping the strictly positive ones (largest first, at most r) and
    rotating back through [U Q] yields the projection.  With no positive
    spectrum the zero factor is returned; callers flag that event.
    """
    M = (cu.M + cu.M.conj().T) / 2
    w, Q = np.linalg.eigh(M)
    w, Q = w[::-1], Q[:, ::-1]
    cutoff = PSD_EIGENVALUE_CUTOFF * max(np.max(np.abs(w), initial=0.0), 0.0)
    keep = np.nonzero(w > cutoff)[0][: int(r)]
    n = X.shape[0]
    if keep.size == 0:
        return zero_hermitian(n, dtype=np.result_type(X.U.dtype, cu.M.dtype))
    B = np.concatenate([X.U, cu.Qu], axis=1)
    return HermitianFactor(U=B @ Q[:, keep], evals=np.ascontiguousarray(w[keep].real))


def simplex_project(x) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-based).

    Sort descending, find rho = max{ j : x_(j) - (sum_{i<=j} x_(i) - 1)/j > 0 },
    set tau = (sum_{i<=rho} x_(i) - 1)/rho, and clip x - tau at zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("simplex_project expects a nonempty 1-d vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("simplex_project expects finite entries")
    u = np.sort(x)[::-1]
    shifted = np.cumsum(u) - 1.0
    j = np.arange(1, x.size + 1)
    rho = int(np.nonzero(u - shifted / j > 0)[0][-1]) + 1
    tau = shifted[rho - 1] / rho
    return np.maximum(x - tau, 0.0)


def hermitian_eigen_factor(W, r: int) -> HermitianFactor:
    """Dense analogue of the PSD projection, used at initialization.

    Symmetrizes W, keeps its positive eigenvalues (largest first, at most r),
    and returns the corresponding factor; zero factor if none are positive.
    """
    W = as_matrix(W, "W")
    n = W.shape[0]
    if W.shape[1] != n:
        raise ValueError("hermitian_eigen_factor expects a square matrix")
    H = (W + W.conj().T) / 2
    w, Q = np.linalg.eigh(H)
    w, Q = w[::-1], Q[:, ::-1]
    cutoff = PSD_EIGENVALUE_CUTOFF * max(np.max(np.abs(w), initial=0.0), 0.0)
    keep = np.nonzero(w > cutoff)[0][: int(r)]
    if keep.size == 0:
        return zero_hermitian(n, dtype=H.dtype)
    return HermitianFactor(U=np.ascontiguousarray(Q[:, keep]), evals=np.ascontiguousarray(w[keep]))
