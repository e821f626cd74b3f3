"""Empirical isometry-constant estimation for measurement ensembles.

Randomized sampling of rank-r constituent tuples gives the observed range
of the ratio ||sum_k A_k(Z_k)||^2 / sum_k ||Z_k||_F^2.  The resulting
delta_hat is a LOWER bound on the true restricted-isometry constant of the
ensemble: sampling cannot certify the supremum over all tuples.
"""

from dataclasses import dataclass

import numpy as np

from .ensembles import MeasurementEnsemble
from .seeding import ROLE_ARIP, substream


@dataclass
class AripEstimate:
    r: int
    trials: int
    ratio_min: float
    ratio_max: float
    delta_hat: float
    quantiles: dict  # {"q01": ..., "q50": ..., "q99": ...}
    seed: int

    @classmethod
    def from_ratios(cls, ratios: np.ndarray, r: int, seed: int) -> "AripEstimate":
        ratio_min = float(np.min(ratios))
        ratio_max = float(np.max(ratios))
        q01, q50, q99 = np.quantile(ratios, [0.01, 0.50, 0.99])
        return cls(
            r=r,
            trials=int(ratios.size),
            ratio_min=ratio_min,
            ratio_max=ratio_max,
            delta_hat=max(1.0 - ratio_min, ratio_max - 1.0),
            quantiles={"q01": float(q01), "q50": float(q50), "q99": float(q99)},
            seed=seed,
        )


def random_tuple(ens: MeasurementEnsemble, r: int, rng: np.random.Generator) -> list:
    """Rank-r Gaussian factor products, normalized to unit stacked norm."""
    n1, n2 = ens.shape
    Zs = []
    for _ in range(ens.s):
        if ens.field == "complex":
            L = (rng.standard_normal((n1, r)) + 1j * rng.standard_normal((n1, r))) / np.sqrt(2)
            R = (rng.standard_normal((n2, r)) + 1j * rng.standard_normal((n2, r))) / np.sqrt(2)
        else:
            L = rng.standard_normal((n1, r))
            R = rng.standard_normal((n2, r))
        Zs.append(L @ R.conj().T)
    scale = np.sqrt(sum(np.linalg.norm(Z) ** 2 for Z in Zs))
    return [Z / scale for Z in Zs]


def tuple_ratio(ens: MeasurementEnsemble, Zs: list) -> float:
    """||sum_k A_k(Z_k)||^2 for a tuple normalized to unit stacked norm."""
    total = sum(np.linalg.norm(Z) ** 2 for Z in Zs)
    out = ens.forward(0, Zs[0])
    for k in range(1, ens.s):
        out = out + ens.forward(k, Zs[k])
    return float(np.linalg.norm(out) ** 2 / total)


def arip_sample(ens: MeasurementEnsemble, r: int, trials: int, seed: int = 0) -> AripEstimate:
    """Sample the isometry ratio over random rank-r tuples.

    Per-trial RNG streams are keyed by (seed, trial index), so results are
    identical under any execution order and nested for growing trial
    counts.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ratios = np.empty(trials)
    for t in range(trials):
        rng = substream(seed, ROLE_ARIP, t)
        ratios[t] = tuple_ratio(ens, random_tuple(ens, r, rng))
    return AripEstimate.from_ratios(ratios, r=r, seed=seed)


def arip_scaling_report(
    kind: str,
    grid,
    trials: int,
    seed: int = 0,
    field: str = "real",
    encoder: str = "gaussian",
) -> list:
    """delta_hat across a grid of (m, n, r, s) configurations.

    Returns one row dict per grid point with the CSV schema columns
    (kind, n, r, s, m, trials, ratio_min, ratio_max, delta_hat, q01, q50,
    q99, seed).  The trend of delta_hat against m is reported, never
    asserted.
    """
    from .ensembles import generate_ensemble

    rows = []
    for idx, (m, n, r, s) in enumerate(grid):
        ens = generate_ensemble(
            kind, s=s, m=m, shape=(n, n), seed=seed + idx, field=field, encoder=encoder
        )
        est = arip_sample(ens, r=r, trials=trials, seed=seed)
        rows.append(
            {
                "kind": kind,
                "n": n,
                "r": r,
                "s": s,
                "m": m,
                "trials": trials,
                "ratio_min": est.ratio_min,
                "ratio_max": est.ratio_max,
                "delta_hat": est.delta_hat,
                "q01": est.quantiles["q01"],
                "q50": est.quantiles["q50"],
                "q99": est.quantiles["q99"],
                "seed": seed,
            }
        )
    return rows
