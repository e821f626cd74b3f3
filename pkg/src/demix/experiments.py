"""Experiment drivers: phase grids, noise curves, rank seeking, isometry audits.

Every run is fully seeded: randomness derives from (master seed, cell
index, trial index), so grids can be executed with any number of worker
threads and still produce byte-identical CSV output.  Wall-clock timings
are collected in memory but kept out of the deterministic CSV files; the
CLI writes them to an opt-in sidecar.
"""

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .arip import arip_sample
from .ensembles import generate_ensemble
from .factors import HermitianFactor, LowRankFactor
from .kernels import truncated_svd
from .seeding import ROLE_NOISE, ROLE_PAYLOAD, ROLE_TRUTH, substream
from .solvers import DemixProblem, SolverConfig, solve, success_test

SPEC_VERSION = 1

EXPERIMENTS = ("phase", "noise", "rankseek", "arip", "solve-one")
KINDS = ("gaussian", "pauli", "convolutive", "convolutive-hadamard")

# Desk-scale defaults; --full restores the larger published grids.
DESK_S_VALUES = [1, 2, 3, 4]
FULL_S_VALUES = [1, 2, 3, 4, 5, 6, 7]
DESK_MULTIPLIERS = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]


class SpecError(ValueError):
    """Malformed experiment specification."""


@dataclass
class ExperimentSpec:
    experiment: str
    kind: str = "gaussian"
    shape: tuple[int, int] = (50, 50)
    rank: int = 5
    s_values: list = dataclass_field(default_factory=lambda: list(DESK_S_VALUES))
    m_values: list | None = None
    m_multipliers: list | None = None
    sigmas: list = dataclass_field(default_factory=lambda: [0.0])
    trials: int = 10
    seed: int = 0
    solver: SolverConfig = dataclass_field(default_factory=SolverConfig)
    conditioning: dict | None = None  # None = well; {"sigma_min":..,"sigma_max":..} = ill

    @property
    def base_kind(self) -> str:
        return "convolutive" if self.kind.startswith("convolutive") else self.kind

    @property
    def encoder(self) -> str:
        return "hadamard" if self.kind == "convolutive-hadamard" else "gaussian"

    def dof(self, s: int) -> int:
        n1, n2 = self.shape
        if self.base_kind == "convolutive":
            return s * (n1 + n2)
        return s * self.rank * (n1 + n2 - self.rank)

    def m_grid(self, s: int) -> list:
        if self.m_values is not None:
            return [int(m) for m in self.m_values]
        mults = self.m_multipliers if self.m_multipliers is not None else DESK_MULTIPLIERS
        return [max(1, round(c * self.dof(s))) for c in mults]

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise SpecError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.kind not in KINDS:
            raise SpecError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        if self.rank < 1:
            raise SpecError("rank must be >= 1")
        if self.base_kind == "convolutive" and self.rank != 1:
            raise SpecError("convolutive constituents are rank one; set rank = 1")
        if self.kind == "pauli":
            n1, n2 = self.shape
            if n1 != n2 or n1 & (n1 - 1):
                raise SpecError(f"pauli shape must be (2^q, 2^q), got {self.shape}")
        for s in self.s_values:
            for m in self.m_grid(s):
                if m < 1:
                    raise SpecError("m values must be >= 1")
                if self.kind == "convolutive-hadamard" and m & (m - 1):
                    raise SpecError(f"hadamard encoder needs m a power of two, got m={m}")


def spec_from_dict(data: dict, full: bool = False) -> ExperimentSpec:
    """Build and validate a spec from a parsed JSON document."""
    if not isinstance(data, dict):
        raise SpecError("spec document must be a JSON object")
    version = data.get("spec_version")
    if version != SPEC_VERSION:
        raise SpecError(f"spec_version must be {SPEC_VERSION}, got {version!r}")
    known = {
        "spec_version", "experiment", "kind", "n", "n1", "n2", "q", "rank",
        "s_values", "m_values", "m_multipliers", "sigmas", "trials", "seed",
        "solver", "conditioning",
    }
    unknown = set(data) - known
    if unknown:
        raise SpecError(f"unknown spec fields: {sorted(unknown)}")
    if "experiment" not in data:
        raise SpecError("spec is missing the required field 'experiment'")

    kind = data.get("kind", "gaussian")
    if "q" in data:
        n = 2 ** int(data["q"])
        shape = (n, n)
    elif "n1" in data or "n2" in data:
        try:
            shape = (int(data["n1"]), int(data["n2"]))
        except KeyError as exc:
            raise SpecError("n1 and n2 must be given together") from exc
    elif "n" in data:
        shape = (int(data["n"]), int(data["n"]))
    else:
        raise SpecError("spec must give dimensions via 'n', 'n1'/'n2', or 'q'")

    solver_cfg = data.get("solver", {})
    if not isinstance(solver_cfg, dict):
        raise SpecError("'solver' must be an object of SolverConfig fields")
    try:
        solver = SolverConfig(**solver_cfg)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad solver config: {exc}") from exc

    conditioning = data.get("conditioning")
    if conditioning in (None, "well"):
        conditioning = None
    elif conditioning == "ill":
        conditioning = {"sigma_min": 1.0, "sigma_max": 1000.0}
    elif not isinstance(conditioning, dict):
        raise SpecError("conditioning must be 'well', 'ill', or an object")

    s_values = data.get("s_values")
    if s_values is None:
        s_values = list(FULL_S_VALUES if full else DESK_S_VALUES)

    spec = ExperimentSpec(
        experiment=data["experiment"],
        kind=kind,
        shape=shape,
        rank=int(data.get("rank", 1)),
        s_values=[int(s) for s in s_values],
        m_values=data.get("m_values"),
        m_multipliers=data.get("m_multipliers"),
        sigmas=[float(x) for x in data.get("sigmas", [0.0])],
        trials=int(data.get("trials", 10)),
        seed=int(data.get("seed", 0)),
        solver=solver,
        conditioning=conditioning,
    )
    spec.validate()
    return spec


def _draw_truth(spec: ExperimentSpec, s: int, rng: np.random.Generator) -> list:
    n1, n2 = spec.shape
    r = spec.rank
    truth = []
    for _ in range(s):
        if spec.kind == "pauli":
            Z = (rng.standard_normal((n1, r)) + 1j * rng.standard_normal((n1, r))) / np.sqrt(2)
            U, _ = np.linalg.qr(Z)
            truth.append(HermitianFactor(U=U, evals=np.full(r, 1.0 / r)))
        elif spec.base_kind == "convolutive":
            x = (rng.standard_normal(n1) + 1j * rng.standard_normal(n1)) / np.sqrt(2)
            h = (rng.standard_normal(n2) + 1j * rng.standard_normal(n2)) / np.sqrt(2)
            nx, nh = np.linalg.norm(x), np.linalg.norm(h)
            truth.append(
                LowRankFactor(
                    U=(x / nx)[:, None],
                    s=np.array([nx * nh]),
                    V=(np.conj(h) / nh)[:, None],
                )
            )
        elif spec.conditioning is not None:
            U, _ = np.linalg.qr(rng.standard_normal((n1, r)))
            V, _ = np.linalg.qr(rng.standard_normal((n2, r)))
            sv = np.linspace(spec.conditioning["sigma_max"], spec.conditioning["sigma_min"], r)
            truth.append(LowRankFactor(U=U, s=sv, V=V))
        else:
            L = rng.standard_normal((n1, r))
            R = rng.standard_normal((n2, r))
            truth.append(truncated_svd(L @ R.T, r))
    return truth


def generate_problem(spec: ExperimentSpec, s: int, m: int, trial_key, sigma: float = 0.0) -> DemixProblem:
    """Draw truth + ensemble + observation for one seeded trial.

    trial_key is an int or tuple of ints; together with the spec seed it
    addresses disjoint RNG streams for truth, payload, and noise.
    """
    key = tuple(trial_key) if isinstance(trial_key, (tuple, list)) else (int(trial_key),)
    truth = _draw_truth(spec, s, substream(spec.seed, ROLE_TRUTH, *key))
    ens_seed_rng = substream(spec.seed, ROLE_PAYLOAD, *key)
    ens = generate_ensemble(
        spec.base_kind,
        s=s,
        m=m,
        shape=spec.shape,
        seed=int(ens_seed_rng.integers(0, 2**63)),
        encoder=spec.encoder,
    )
    y = ens.mixed_forward(truth)
    noise = None
    if sigma > 0:
        rng = substream(spec.seed, ROLE_NOISE, *key)
        if ens.field == "complex" or np.iscomplexobj(y):
            w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        else:
            w = rng.standard_normal(m)
        e = sigma * np.linalg.norm(y) * w / np.linalg.norm(w)
        y = y + e
        noise = (sigma, e)
    return DemixProblem(y=y, ens=ens, r=spec.rank, truth=truth, noise=noise)


@dataclass
class PhaseCell:
    s: int
    m: int
    m_over_dof: float
    successes: int
    trials: int
    mean_iterations: float
    mean_time: float


def _run_tasks(tasks, worker, threads: int) -> list:
    """Evaluate tasks (already deterministically seeded) in any order."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def run_phase(spec: ExperimentSpec, threads: int = 1) -> list:
    """Success counts over the (s, m) grid; one PhaseCell per grid point."""
    cells = [(s, m) for s in spec.s_values for m in spec.m_grid(s)]
    tasks = [
        (ci, trial, s, m)
        for ci, (s, m) in enumerate(cells)
        for trial in range(spec.trials)
    ]

    def worker(task):
        ci, trial, s, m = task
        prob = generate_problem(spec, s, m, (ci, trial), sigma=spec.sigmas[0] if spec.sigmas else 0.0)
        report = solve(prob, spec.solver)
        return ci, success_test(report, prob.truth), report.iterations, report.wall_time

    results = _run_tasks(tasks, worker, threads)
    out = []
    for ci, (s, m) in enumerate(cells):
        mine = [res for res in results if res[0] == ci]
        out.append(
            PhaseCell(
                s=s,
                m=m,
                m_over_dof=m / spec.dof(s),
                successes=sum(1 for res in mine if res[1]),
                trials=len(mine),
                mean_iterations=float(np.mean([res[2] for res in mine])),
                mean_time=float(np.mean([res[3] for res in mine])),
            )
        )
    return out


def run_noise(spec: ExperimentSpec, threads: int = 1) -> list:
    """Mean relative error per (m, sigma) pair, in dB against SNR."""
    s = spec.s_values[0]
    pairs = [(m, sigma) for m in spec.m_grid(s) for sigma in spec.sigmas]
    tasks = [(ci, trial, m, sigma) for ci, (m, sigma) in enumerate(pairs) for trial in range(spec.trials)]

    def worker(task):
        ci, trial, m, sigma = task
        prob = generate_problem(spec, s, m, (ci, trial), sigma=sigma)
        report = solve(prob, spec.solver)
        return ci, report.relative_error, report.wall_time

    results = _run_tasks(tasks, worker, threads)
    rows = []
    for ci, (m, sigma) in enumerate(pairs):
        errs = [res[1] for res in results if res[0] == ci]
        mean_err = float(np.mean(errs))
        rows.append(
            {
                "m": m,
                "sigma": sigma,
                "snr_db": -20.0 * math.log10(sigma) if sigma > 0 else math.inf,
                "mean_rel_err_db": 20.0 * math.log10(mean_err) if mean_err > 0 else -math.inf,
                "mean_rel_err": mean_err,
                "mean_time": float(np.mean([res[2] for res in results if res[0] == ci])),
            }
        )
    return rows


def run_rankseek(spec: ExperimentSpec, threads: int = 1) -> dict:
    """Rank-increasing traces: per-iteration rows plus per-trial summaries."""
    s = spec.s_values[0]
    m = spec.m_grid(s)[0]
    cfg_fields = {**spec.solver.__dict__, "rank_schedule": "increasing"}
    cfg = SolverConfig(**cfg_fields)

    def worker(trial):
        prob = generate_problem(spec, s, m, (0, trial))
        report = solve(prob, cfg)
        return trial, report

    results = _run_tasks(tasks=list(range(spec.trials)), worker=worker, threads=threads)
    trace_rows = []
    summary_rows = []
    for trial, report in results:
        for it, (rho, res) in enumerate(zip(report.rank_trace, report.residual_trace)):
            trace_rows.append({"trial": trial, "iteration": it, "assumed_rank": rho, "relative_residual": res})
        summary_rows.append(
            {
                "trial": trial,
                "final_rank": report.rank_trace[-1],
                "converged": int(report.converged),
                "final_residual": report.residual_trace[-1],
                "iterations": report.iterations,
            }
        )
    return {"trace": trace_rows, "summary": summary_rows}


def run_arip(spec: ExperimentSpec, threads: int = 1) -> list:
    """delta_hat across the m grid (trend report, nothing asserted)."""
    s = spec.s_values[0]
    rows = []
    for idx, m in enumerate(spec.m_grid(s)):
        ens = generate_ensemble(
            spec.base_kind,
            s=s,
            m=m,
            shape=spec.shape,
            seed=int(substream(spec.seed, ROLE_PAYLOAD, idx).integers(0, 2**63)),
            encoder=spec.encoder,
        )
        est = arip_sample(ens, r=spec.rank, trials=spec.trials, seed=spec.seed)
        n1, n2 = spec.shape
        rows.append(
            {
                "kind": spec.kind,
                "n": n1 if n1 == n2 else f"{n1}x{n2}",
                "r": spec.rank,
                "s": s,
                "m": m,
                "trials": spec.trials,
                "ratio_min": est.ratio_min,
                "ratio_max": est.ratio_max,
                "delta_hat": est.delta_hat,
                "q01": est.quantiles["q01"],
                "q50": est.quantiles["q50"],
                "q99": est.quantiles["q99"],
                "seed": spec.seed,
            }
        )
    return rows


def run_solve_one(spec: ExperimentSpec, threads: int = 1) -> dict:
    s = spec.s_values[0]
    m = spec.m_grid(s)[0]
    sigma = spec.sigmas[0] if spec.sigmas else 0.0
    cfg_fields = {**spec.solver.__dict__, "threads": max(threads, spec.solver.threads)}
    prob = generate_problem(spec, s, m, (0, 0), sigma=sigma)
    report = solve(prob, SolverConfig(**cfg_fields))
    summary = report.summary()
    summary.update({"s": s, "m": m, "rank": spec.rank, "kind": spec.kind, "sigma": sigma})
    return summary


# ---------------------------------------------------------------------------
# CSV / plot-script emission


def format_value(x) -> str:
    """Stable scalar formatting: shortest round-trip repr for floats."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: list, rows: list) -> None:
    """RFC-4180 CSV (CRLF, header row, minimal quoting)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def csv_bytes(header: list, rows: list) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue().encode("utf-8")


def read_csv(path) -> tuple[list, list]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    return rows[0], rows[1:]


PHASE_HEADER = ["s", "m", "m_over_dof", "successes", "trials", "mean_iterations"]
NOISE_HEADER = ["m", "sigma", "snr_db", "mean_rel_err_db"]
RANKSEEK_HEADER = ["trial", "iteration", "assumed_rank", "relative_residual"]
RANKSEEK_SUMMARY_HEADER = ["trial", "final_rank", "converged", "final_residual", "iterations"]
ARIP_HEADER = [
    "kind", "n", "r", "s", "m", "trials",
    "ratio_min", "ratio_max", "delta_hat", "q01", "q50", "q99", "seed",
]


def phase_rows(cells: list) -> list:
    return [
        [c.s, c.m, c.m_over_dof, c.successes, c.trials, c.mean_iterations] for c in cells
    ]


def noise_rows(rows: list) -> list:
    return [[r["m"], r["sigma"], r["snr_db"], r["mean_rel_err_db"]] for r in rows]


def rankseek_rows(result: dict) -> list:
    return [
        [r["trial"], r["iteration"], r["assumed_rank"], r["relative_residual"]]
        for r in result["trace"]
    ]


def rankseek_summary_rows(result: dict) -> list:
    return [
        [r["trial"], r["final_rank"], r["converged"], r["final_residual"], r["iterations"]]
        for r in result["summary"]
    ]


def arip_rows(rows: list) -> list:
    return [[r[k] for k in ARIP_HEADER] for r in rows]


PHASE_PLOT = """\
# gnuplot script: success fraction over the (m/dof, s) grid
set datafile separator ','
set xlabel 'm / dof'
set ylabel 's'
set cblabel 'success fraction'
set cbrange [0:1]
set view map
splot '{csv}' every ::1 using 3:1:($4/$5) with points pt 5 ps 4 palette notitle
"""

NOISE_PLOT = """\
# gnuplot script: reconstruction error (dB) against SNR (dB)
set datafile separator ','
set xlabel 'SNR (dB)'
set ylabel 'mean relative error (dB)'
plot '{csv}' every ::1 using 3:4 with linespoints notitle
"""

RANKSEEK_PLOT = """\
# gnuplot script: relative residual per iteration (rank increments cause jumps)
set datafile separator ','
set xlabel 'iteration'
set ylabel 'relative residual'
set logscale y
plot '{csv}' every ::1 using 2:4 with points pt 7 ps 0.5 notitle
"""

ARIP_PLOT = """\
# gnuplot script: estimated isometry constant against m
set datafile separator ','
set xlabel 'm'
set ylabel 'delta_hat'
plot '{csv}' every ::1 using 5:9 with linespoints notitle
"""


def write_plot_script(path, template: str, csv_name: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(template.format(csv=csv_name))


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
