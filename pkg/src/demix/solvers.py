"""Demixing solvers: IHT, FIHT, and the PSD/trace-constrained FIHT variant.

Each iteration computes the shared residual, then updates every constituent
independently (the inner loop is data parallel):

    G_k   = A_k^*(residual)
    alpha = ||P_T(G_k)||_F^2 / ||A_k(P_T(G_k))||^2
    IHT      X_k <- H_r(X_k + alpha * G_k)
    FIHT     X_k <- H_r(X_k + alpha * P_T(G_k))      (via the 2r x 2r core)
    FIHT-PSD X_k <- P_simplex(P_psd(X_k + alpha * P_T(G_k)))

Iterations stop when the relative residual ||y - sum A_k(X_k)|| / ||y||
drops to the configured tolerance or the iteration cap is hit.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ensembles import MeasurementEnsemble
from .factors import HermitianFactor, LowRankFactor, TangentSpace
from .kernels import (
    CoreUpdate,
    _core_matrix,
    hard_threshold,
    hermitian_eigen_factor,
    hermitian_tangent_components,
    psd_rank_project,
    simplex_project,
    tangent_components,
    tangent_project,
    threshold_core,
)
from .validation import DegenerateEnsembleError, as_vector

MODES = ("iht", "fiht", "fiht-psd")

# Success criterion on the stacked relative error, inclusive.
SUCCESS_THRESHOLD = 1e-2


@dataclass
class DemixProblem:
    """One demixing instance: observation, ensemble, target rank.

    noise, when present, is (sigma, e) with y = sum_k A_k(X_k) + e.
    """

    y: np.ndarray
    ens: MeasurementEnsemble
    r: int
    truth: list | None = None
    noise: tuple | None = None

    def __post_init__(self):
        self.y = as_vector(self.y, "y", length=self.ens.m)
        self.r = int(self.r)
        if self.r < 1:
            raise ValueError(f"target rank must be >= 1, got {self.r}")


@dataclass
class SolverConfig:
    mode: str = "fiht"
    max_iters: int = 500
    residual_tol: float = 1e-4
    rank_schedule: str = "fixed"  # "fixed" | "increasing"
    stall_window: int = 20
    stall_ratio: float = 1e-2
    max_rank: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tol <= 0 or self.stall_ratio <= 0:
            raise ValueError("tolerances must be positive")
        if self.rank_schedule not in ("fixed", "increasing"):
            raise ValueError(f"unknown rank_schedule {self.rank_schedule!r}")


@dataclass
class SolveReport:
    estimates: list
    residual_trace: list
    step_sizes: list  # per iteration: list of alpha_k
    converged: bool
    iterations: int
    relative_error: float | None = None
    per_constituent_error: list | None = None
    wall_time: float = 0.0
    error_trace: list | None = None
    rank_trace: list | None = None  # assumed rank per residual_trace entry
    flags: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.residual_trace[-1],
            "relative_error": self.relative_error,
            "wall_time": self.wall_time,
            "flags": list(self.flags),
        }


@dataclass
class ConvergenceDiagnostics:
    """Reported convergence constants; never asserted against runs."""

    gamma1_bound: float
    gamma2_bound: float
    xi_bound: float
    empirical_rate: float


def stacked_error(estimates: list, truth: list) -> float:
    """sqrt(sum ||Xhat_k - X_k||_F^2) / sqrt(sum ||X_k||_F^2)."""
    num = 0.0
    den = 0.0
    for est, ref in zip(estimates, truth):
        num += float(np.linalg.norm(est.dense() - ref.dense()) ** 2)
        den += float(ref.norm() ** 2)
    return float(np.sqrt(num) / np.sqrt(den)) if den > 0 else float(np.sqrt(num))


def per_constituent_errors(estimates: list, truth: list) -> list:
    out = []
    for est, ref in zip(estimates, truth):
        d = float(np.linalg.norm(est.dense() - ref.dense()))
        n = ref.norm()
        out.append(d / n if n > 0 else d)
    return out


def success_test(report: SolveReport, truth: list) -> bool:
    """True iff the stacked relative error is at most 1e-2 (inclusive)."""
    return stacked_error(report.estimates, truth) <= SUCCESS_THRESHOLD


def initialize(prob: DemixProblem, mode: str = "fiht") -> list:
    """One-shot initial guess per constituent.

    General modes threshold the adjoint of the observation; the PSD mode
    instead projects the symmetrized adjoint to a unit-trace PSD factor.
    """
    out = []
    for k in range(prob.ens.s):
        G = prob.ens.adjoint(k, prob.y)
        if mode == "fiht-psd":
            F = hermitian_eigen_factor(G, prob.r)
            if F.width:
                F = HermitianFactor(F.U, simplex_project(F.evals))
            out.append(F)
        else:
            out.append(hard_threshold(G, prob.r))
    return out


def step_size(ens: MeasurementEnsemble, k: int, T: TangentSpace, G) -> float:
    """Steepest-descent step along the projected gradient direction.

    Returns ||P_T(G)||_F^2 / ||A_k(P_T(G))||^2, or 0 when the projected
    gradient vanishes.  A vanishing denominator with a nonzero numerator
    means the measurement null space intersects the tangent space.
    """
    PG = tangent_project(T, G)
    num = float(np.linalg.norm(PG) ** 2)
    if num == 0.0:
        return 0.0
    den = float(np.linalg.norm(ens.forward(k, PG)) ** 2)
    if den == 0.0:
        raise DegenerateEnsembleError(
            f"A_{k} annihilates the projected gradient direction (||P_T(G)||={np.sqrt(num):.3e})"
        )
    return num / den


def _alpha_from(num: float, den: float, k: int) -> float:
    if num == 0.0:
        return 0.0
    if den == 0.0:
        raise DegenerateEnsembleError(f"A_{k} annihilates the projected gradient direction")
    return num / den


def _factor_from_core(X, Qu, Qv, M) -> LowRankFactor:
    """Full-rank factorization of [U Qu] M [V Qv]^H (tangent directions)."""
    Um, sm, Vmh = np.linalg.svd(M)
    Bu = np.concatenate([X.U, Qu], axis=1)
    Bv = np.concatenate([X.V, Qv], axis=1)
    return LowRankFactor(U=Bu @ Um, s=sm, V=Bv @ Vmh.conj().T)


def _hermitian_from_core(X, Q, M) -> HermitianFactor:
    w, W = np.linalg.eigh((M + M.conj().T) / 2)
    B = np.concatenate([X.U, Q], axis=1)
    order = np.argsort(w)[::-1]
    return HermitianFactor(U=B @ W[:, order], evals=w[order])


def _update_iht(prob: DemixProblem, X, resid, k: int, rank: int):
    G = prob.ens.adjoint(k, resid)
    alpha = step_size(prob.ens, k, TangentSpace.of(X), G)
    new = hard_threshold(X.dense() + alpha * G, rank)
    return new, alpha, None


def _update_fiht(prob: DemixProblem, X, resid, k: int, rank: int):
    G = prob.ens.adjoint(k, resid)
    n1, n2 = X.shape
    if 2 * X.U.shape[1] > min(n1, n2):
        # no room for the complement blocks; form the update densely
        PG = tangent_project(TangentSpace.of(X), G)
        alpha = _alpha_from(
            float(np.linalg.norm(PG) ** 2),
            float(np.linalg.norm(prob.ens.forward(k, PG)) ** 2),
            k,
        )
        return hard_threshold(X.dense() + alpha * PG, rank), alpha, None
    xi, Qu, Ru, Qv, Rv = tangent_components(X, G)
    num = float(
        np.linalg.norm(xi) ** 2 + np.linalg.norm(Ru) ** 2 + np.linalg.norm(Rv) ** 2
    )
    if num == 0.0:
        return X, 0.0, None
    PG = _factor_from_core(X, Qu, Qv, _core_matrix(np.zeros(X.U.shape[1]), xi, Ru, Rv, 1.0))
    den = float(np.linalg.norm(prob.ens.forward(k, PG)) ** 2)
    alpha = _alpha_from(num, den, k)
    cu = CoreUpdate(Qu=Qu, Qv=Qv, M=_core_matrix(X.s, xi, Ru, Rv, alpha))
    return threshold_core(cu, X, rank), alpha, None


def _update_fiht_psd(prob: DemixProblem, X, resid, k: int, rank: int):
    G = prob.ens.adjoint(k, resid)
    G = (G + G.conj().T) / 2
    if X.width == 0:
        # frozen failure state: empty tangent space, nothing to update
        return X, 0.0, f"zero_spectrum:k={k}"
    xi, Q, R = hermitian_tangent_components(X, G)
    num = float(np.linalg.norm(xi) ** 2 + 2 * np.linalg.norm(R) ** 2)
    if num == 0.0:
        return X, 0.0, None
    PG = _hermitian_from_core(X, Q, _core_matrix(np.zeros(X.width), xi, R, R, 1.0))
    den = float(np.linalg.norm(prob.ens.forward(k, PG)) ** 2)
    alpha = _alpha_from(num, den, k)
    cu = CoreUpdate(Qu=Q, Qv=Q, M=_core_matrix(X.evals, xi, R, R, alpha))
    F = psd_rank_project(cu, X, rank)
    if F.width == 0:
        return F, alpha, f"zero_spectrum:k={k}"
    return HermitianFactor(F.U, simplex_project(F.evals)), alpha, None


_UPDATES = {"iht": _update_iht, "fiht": _update_fiht, "fiht-psd": _update_fiht_psd}


def _step_all(prob: DemixProblem, Xs: list, resid, mode: str, rank: int, threads: int):
    update = _UPDATES[mode]

    def one(k):
        return update(prob, Xs[k], resid, k, rank)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(prob.ens.s)))
    else:
        results = [one(k) for k in range(prob.ens.s)]
    new = [res[0] for res in results]
    alphas = [res[1] for res in results]
    flags = [res[2] for res in results if res[2]]
    return new, alphas, flags


def iht_step(prob: DemixProblem, Xs: list) -> list:
    """One IHT iteration over all constituents."""
    resid = prob.y - prob.ens.mixed_forward(Xs)
    return _step_all(prob, Xs, resid, "iht", prob.r, 1)[0]


def fiht_step(prob: DemixProblem, Xs: list) -> list:
    """One FIHT iteration (projected search direction, 2r x 2r core SVD)."""
    resid = prob.y - prob.ens.mixed_forward(Xs)
    return _step_all(prob, Xs, resid, "fiht", prob.r, 1)[0]


def fiht_psd_step(prob: DemixProblem, Xs: list) -> list:
    """One FIHT iteration constrained to unit-trace PSD factors."""
    resid = prob.y - prob.ens.mixed_forward(Xs)
    return _step_all(prob, Xs, resid, "fiht-psd", prob.r, 1)[0]


def _relative_residual(resid, y_norm: float) -> float:
    return float(np.linalg.norm(resid) / y_norm)


def solve(prob: DemixProblem, cfg: SolverConfig | None = None, initial: list | None = None) -> SolveReport:
    """Iterate the configured step until the residual tolerance or the cap.

    Non-convergence is reported, not raised.  The first residual entry is
    recorded before any step, so traces always start at the initializer
    (or at `initial` when given).
    """
    cfg = cfg or SolverConfig()
    if cfg.rank_schedule == "increasing":
        return solve_rank_increasing(prob, cfg)
    t0 = time.perf_counter()
    Xs = list(initial) if initial is not None else initialize(prob, cfg.mode)
    flags = [f"zero_spectrum:init:k={k}" for k, X in enumerate(Xs) if _is_zero(X)]
    y_norm = float(np.linalg.norm(prob.y)) or 1.0
    resid = prob.y - prob.ens.mixed_forward(Xs)
    residual_trace = [_relative_residual(resid, y_norm)]
    error_trace = [stacked_error(Xs, prob.truth)] if prob.truth is not None else None
    step_sizes = []
    while residual_trace[-1] > cfg.residual_tol and len(step_sizes) < cfg.max_iters:
        Xs, alphas, step_flags = _step_all(prob, Xs, resid, cfg.mode, prob.r, cfg.threads)
        flags.extend(f"{f}:iter={len(step_sizes)}" for f in step_flags)
        resid = prob.y - prob.ens.mixed_forward(Xs)
        residual_trace.append(_relative_residual(resid, y_norm))
        step_sizes.append(alphas)
        if error_trace is not None:
            error_trace.append(stacked_error(Xs, prob.truth))
    return _finish_report(
        prob, Xs, residual_trace, step_sizes, error_trace, cfg, t0, rank_trace=None, flags=flags
    )


def solve_rank_increasing(prob: DemixProblem, cfg: SolverConfig) -> SolveReport:
    """FIHT with the assumed rank grown whenever the residual stalls.

    Starts at rank one; when the relative residual improves by less than
    stall_ratio over the last stall_window iterations, the assumed rank is
    incremented (factors padded with zero singular values) until max_rank.
    """
    t0 = time.perf_counter()
    mode = cfg.mode if cfg.mode != "iht" else "fiht"
    r_max = cfg.max_rank if cfg.max_rank is not None else prob.r
    rho = 1
    rank_prob = DemixProblem(prob.y, prob.ens, rho, truth=prob.truth, noise=prob.noise)
    Xs = initialize(rank_prob, mode)
    flags = []
    y_norm = float(np.linalg.norm(prob.y)) or 1.0
    resid = prob.y - prob.ens.mixed_forward(Xs)
    residual_trace = [_relative_residual(resid, y_norm)]
    error_trace = [stacked_error(Xs, prob.truth)] if prob.truth is not None else None
    rank_trace = [rho]
    step_sizes = []
    iters_at_rank = 0
    while residual_trace[-1] > cfg.residual_tol and len(step_sizes) < cfg.max_iters:
        Xs, alphas, step_flags = _step_all(prob, Xs, resid, mode, rho, cfg.threads)
        flags.extend(f"{f}:iter={len(step_sizes)}" for f in step_flags)
        resid = prob.y - prob.ens.mixed_forward(Xs)
        residual_trace.append(_relative_residual(resid, y_norm))
        step_sizes.append(alphas)
        iters_at_rank += 1
        if error_trace is not None:
            error_trace.append(stacked_error(Xs, prob.truth))
        if (
            rho < r_max
            and iters_at_rank >= cfg.stall_window
            and _stalled(residual_trace, cfg.stall_window, cfg.stall_ratio)
        ):
            rho += 1
            Xs = [_pad_rank(X, rho) for X in Xs]
            flags.append(f"rank_increase:to={rho}:iter={len(step_sizes)}")
            iters_at_rank = 0
        rank_trace.append(rho)
    converged_report = _finish_report(
        prob, Xs, residual_trace, step_sizes, error_trace, cfg, t0,
        rank_trace=rank_trace, flags=flags,
    )
    return converged_report


def _stalled(trace: list, window: int, ratio: float) -> bool:
    """Relative residual improvement over the last `window` steps < ratio."""
    base = trace[-1 - window]
    if base <= 0:
        return False
    return (base - trace[-1]) / base < ratio


def _pad_rank(X, width: int):
    """Pad a factor to the given width with zero singular values.

    The new directions come from a deterministic orthonormal complement of
    the current column spaces.
    """
    extra = width - (X.width if isinstance(X, HermitianFactor) else X.s.shape[0])
    if extra <= 0:
        return X
    if isinstance(X, HermitianFactor):
        U = _extend_basis(X.U, extra)
        return HermitianFactor(U=U, evals=np.concatenate([X.evals, np.zeros(extra)]))
    return LowRankFactor(
        U=_extend_basis(X.U, extra),
        s=np.concatenate([X.s, np.zeros(extra)]),
        V=_extend_basis(X.V, extra),
    )


def _extend_basis(Q: np.ndarray, extra: int) -> np.ndarray:
    n, k = Q.shape
    if k + extra > n:
        raise ValueError("cannot extend basis beyond the ambient dimension")
    full, _ = np.linalg.qr(np.concatenate([Q, np.eye(n, dtype=Q.dtype)], axis=1))
    comp = full[:, k : k + extra]
    # QR may flip signs of the leading block; keep the original columns
    return np.concatenate([Q, comp], axis=1)


def _is_zero(X) -> bool:
    if isinstance(X, HermitianFactor):
        return X.width == 0 or not np.any(X.evals)
    return X.s.shape[0] == 0 or not np.any(X.s)


def _finish_report(prob, Xs, residual_trace, step_sizes, error_trace, cfg, t0, rank_trace, flags):
    rel_err = stacked_error(Xs, prob.truth) if prob.truth is not None else None
    per_err = per_constituent_errors(Xs, prob.truth) if prob.truth is not None else None
    return SolveReport(
        estimates=Xs,
        residual_trace=residual_trace,
        step_sizes=step_sizes,
        converged=residual_trace[-1] <= cfg.residual_tol,
        iterations=len(step_sizes),
        relative_error=rel_err,
        per_constituent_error=per_err,
        wall_time=time.perf_counter() - t0,
        error_trace=error_trace,
        rank_trace=rank_trace,
        flags=flags,
    )


def diagnostics(
    prob: DemixProblem, report: SolveReport, delta2r: float, delta3r: float
) -> ConvergenceDiagnostics:
    """Evaluate the reported convergence constants for given ARIP estimates.

    gamma1 = 4 d3 / (1 - d3); xi = 2 sqrt(1 + d3) / (1 - d2); gamma2 uses
    the extreme singular values of the truth (sigma_min taken as the min
    over constituents).  The empirical rate is the median ratio of
    successive stacked errors; NaN when the truth is unknown.
    """
    for name, d in (("delta2r", delta2r), ("delta3r", delta3r)):
        if not 0.0 <= d < 1.0:
            raise ValueError(f"{name} must lie in [0, 1), got {d}")
    gamma1 = 4.0 * delta3r / (1.0 - delta3r)
    xi = 2.0 * np.sqrt(1.0 + delta3r) / (1.0 - delta2r)
    gamma2 = float("nan")
    if prob.truth is not None:
        smax = max(_sigma_max(X) for X in prob.truth)
        smin = min(_sigma_min(X) for X in prob.truth)
        rs = prob.r * prob.ens.s
        gamma2 = 2.0 * (
            2.0 * delta2r / (1.0 - delta2r)
            + delta3r / (1.0 - delta2r)
            + 2.0 * delta3r * np.sqrt(rs) * smax / smin
        )
    rate = float("nan")
    if report.error_trace:
        ratios = [
            b / a
            for a, b in zip(report.error_trace[:-1], report.error_trace[1:])
            if a > 0
        ]
        if ratios:
            rate = float(np.median(ratios))
    return ConvergenceDiagnostics(
        gamma1_bound=float(gamma1),
        gamma2_bound=float(gamma2),
        xi_bound=float(xi),
        empirical_rate=rate,
    )


def _sigma_max(X) -> float:
    vals = np.abs(X.evals) if isinstance(X, HermitianFactor) else X.s
    return float(np.max(vals)) if vals.size else 0.0


def _sigma_min(X) -> float:
    vals = np.abs(X.evals) if isinstance(X, HermitianFactor) else X.s
    nz = vals[vals > 0]
    return float(np.min(nz)) if nz.size else 0.0
