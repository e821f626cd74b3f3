"""Scikit-learn style front end for the demixing solvers."""

import numpy as np
from sklearn.base import BaseEstimator

from .ensembles import MeasurementEnsemble
from .solvers import DemixProblem, SolverConfig, solve
from .validation import as_vector


class Demixer(BaseEstimator):
    """Recover s low-rank constituents from one summed measurement vector.

    Follows the estimator protocol: hyperparameters in ``__init__``,
    ``fit(ensemble, y)`` computes the attributes ``estimates_``,
    ``report_``, ``n_iter_`` and ``converged_``, and ``get_params`` /
    ``set_params`` / ``clone`` behave as usual.  The measurement ensemble
    plays the role of the design matrix.

    Examples
    --------
    >>> from demix import generate_ensemble, Demixer
    >>> ens = generate_ensemble("gaussian", s=2, m=900, shape=(20, 20), seed=3)
    >>> # y = ens.mixed_forward(truth) for some rank-2 truth
    >>> model = Demixer(rank=2).fit(ens, y)          # doctest: +SKIP
    >>> estimates = model.estimates_                 # doctest: +SKIP
    """

    def __init__(
        self,
        rank: int = 1,
        mode: str = "fiht",
        max_iters: int = 500,
        residual_tol: float = 1e-4,
        rank_schedule: str = "fixed",
        stall_window: int = 20,
        stall_ratio: float = 1e-2,
        max_rank: int | None = None,
        threads: int = 1,
    ):
        self.rank = rank
        self.mode = mode
        self.max_iters = max_iters
        self.residual_tol = residual_tol
        self.rank_schedule = rank_schedule
        self.stall_window = stall_window
        self.stall_ratio = stall_ratio
        self.max_rank = max_rank
        self.threads = threads

    def _config(self) -> SolverConfig:
        return SolverConfig(
            mode=self.mode,
            max_iters=self.max_iters,
            residual_tol=self.residual_tol,
            rank_schedule=self.rank_schedule,
            stall_window=self.stall_window,
            stall_ratio=self.stall_ratio,
            max_rank=self.max_rank,
            threads=self.threads,
        )

    def fit(self, ensemble: MeasurementEnsemble, y, truth=None) -> "Demixer":
        if not isinstance(ensemble, MeasurementEnsemble):
            raise TypeError("fit expects a MeasurementEnsemble as the design")
        y = as_vector(y, "y", length=ensemble.m)
        prob = DemixProblem(y=y, ens=ensemble, r=self.rank, truth=truth)
        report = solve(prob, self._config())
        self.ensemble_ = ensemble
        self.estimates_ = report.estimates
        self.report_ = report
        self.n_iter_ = report.iterations
        self.converged_ = report.converged
        return self

    def predict(self, ensemble: MeasurementEnsemble | None = None) -> np.ndarray:
        """Measurements the fitted constituents would produce."""
        self._check_fitted()
        ens = ensemble if ensemble is not None else self.ensemble_
        return ens.mixed_forward(self.estimates_)

    def score(self, ensemble: MeasurementEnsemble, y) -> float:
        """Negative relative residual (higher is better, 0 is perfect)."""
        self._check_fitted()
        y = as_vector(y, "y", length=ensemble.m)
        y_norm = float(np.linalg.norm(y)) or 1.0
        return -float(np.linalg.norm(y - ens_forward(ensemble, self.estimates_)) / y_norm)

    def _check_fitted(self) -> None:
        if not hasattr(self, "estimates_"):
            raise AttributeError("this Demixer instance is not fitted yet; call fit first")


def ens_forward(ensemble: MeasurementEnsemble, estimates) -> np.ndarray:
    return ensemble.mixed_forward(estimates)
