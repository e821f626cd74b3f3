"""Experiment-driver tests: problem generation, grids, CSV determinism."""

import math

import numpy as np
import pytest

from demix.experiments import (
    ARIP_HEADER,
    NOISE_HEADER,
    PHASE_HEADER,
    ExperimentSpec,
    SpecError,
    arip_rows,
    csv_bytes,
    generate_problem,
    noise_rows,
    phase_rows,
    rankseek_rows,
    run_arip,
    run_noise,
    run_phase,
    run_rankseek,
    run_solve_one,
    spec_from_dict,
    write_csv,
    read_csv,
)
from demix.solvers import SolverConfig


def small_phase_spec(**overrides):
    base = dict(
        experiment="phase",
        kind="gaussian",
        shape=(12, 12),
        rank=2,
        s_values=[1],
        m_multipliers=[4.0],
        trials=3,
        seed=5,
        solver=SolverConfig(max_iters=150),
    )
    base.update(overrides)
    return ExperimentSpec(**base)


class TestSpecParsing:
    def test_minimal_valid(self):
        spec = spec_from_dict(
            {"spec_version": 1, "experiment": "phase", "n": 20, "rank": 2}
        )
        assert spec.shape == (20, 20)
        assert spec.s_values == [1, 2, 3, 4]

    def test_full_flag_widens_grid(self):
        spec = spec_from_dict(
            {"spec_version": 1, "experiment": "phase", "n": 20, "rank": 2}, full=True
        )
        assert spec.s_values == [1, 2, 3, 4, 5, 6, 7]

    def test_q_dimension(self):
        spec = spec_from_dict(
            {"spec_version": 1, "experiment": "phase", "kind": "pauli", "q": 4, "rank": 1}
        )
        assert spec.shape == (16, 16)

    def test_rectangular(self):
        spec = spec_from_dict(
            {
                "spec_version": 1,
                "experiment": "phase",
                "kind": "convolutive",
                "n1": 32,
                "n2": 8,
                "rank": 1,
            }
        )
        assert spec.shape == (32, 8)
        assert spec.dof(2) == 2 * 40

    @pytest.mark.parametrize(
        "doc",
        [
            {},
            {"spec_version": 2, "experiment": "phase", "n": 8},
            {"spec_version": 1, "n": 8},
            {"spec_version": 1, "experiment": "warp", "n": 8},
            {"spec_version": 1, "experiment": "phase"},
            {"spec_version": 1, "experiment": "phase", "n": 8, "bogus": 1},
            {"spec_version": 1, "experiment": "phase", "n": 8, "trials": 0},
            {"spec_version": 1, "experiment": "phase", "kind": "pauli", "n": 12},
            {"spec_version": 1, "experiment": "phase", "n": 8, "solver": {"mode": "x"}},
        ],
    )
    def test_rejects_malformed(self, doc):
        with pytest.raises(SpecError):
            spec_from_dict(doc)

    def test_convolutive_requires_rank_one(self):
        with pytest.raises(SpecError):
            spec_from_dict(
                {
                    "spec_version": 1,
                    "experiment": "phase",
                    "kind": "convolutive",
                    "n1": 16,
                    "n2": 4,
                    "rank": 2,
                }
            )

    def test_hadamard_m_power_of_two(self):
        with pytest.raises(SpecError):
            spec_from_dict(
                {
                    "spec_version": 1,
                    "experiment": "phase",
                    "kind": "convolutive-hadamard",
                    "n1": 16,
                    "n2": 4,
                    "rank": 1,
                    "m_values": [100],
                }
            )


class TestGenerateProblem:
    def test_quantum_truth_unit_trace_psd(self):
        spec = ExperimentSpec(
            experiment="phase", kind="pauli", shape=(16, 16), rank=2,
            s_values=[2], m_values=[200], seed=3,
        )
        prob = generate_problem(spec, 2, 200, (0, 0))
        for X in prob.truth:
            Z = X.dense()
            assert abs(np.trace(Z).real - 1.0) < 1e-12
            w = np.linalg.eigvalsh(Z)
            assert w.min() >= -1e-12
            assert np.sum(w > 1e-10) == 2

    def test_ill_conditioned_truth(self):
        spec = ExperimentSpec(
            experiment="phase", shape=(20, 20), rank=5, s_values=[2],
            m_values=[100], conditioning={"sigma_min": 1.0, "sigma_max": 1000.0},
        )
        prob = generate_problem(spec, 2, 100, (0, 1))
        for X in prob.truth:
            assert X.s[0] / X.s[-1] == 1000.0
            assert np.allclose(np.diff(X.s), X.s[1] - X.s[0])  # uniform spacing

    def test_noiseless_observation_bitwise(self):
        spec = small_phase_spec()
        prob = generate_problem(spec, 1, 200, (0, 0), sigma=0.0)
        expect = prob.ens.mixed_forward(prob.truth)
        assert np.array_equal(prob.y, expect)
        assert prob.noise is None

    def test_noise_model_identity(self):
        spec = small_phase_spec()
        sigma = 1e-2
        prob = generate_problem(spec, 1, 200, (0, 0), sigma=sigma)
        sigma_rec, e = prob.noise
        assert sigma_rec == sigma
        clean = prob.ens.mixed_forward(prob.truth)
        assert np.allclose(prob.y, clean + e, atol=1e-15)
        assert np.linalg.norm(e) == pytest.approx(sigma * np.linalg.norm(clean), rel=1e-12)

    def test_iot_truth_rank_one(self):
        spec = ExperimentSpec(
            experiment="phase", kind="convolutive", shape=(16, 4), rank=1,
            s_values=[2], m_values=[128],
        )
        prob = generate_problem(spec, 2, 128, (0, 0))
        for X in prob.truth:
            assert X.rank == 1
        assert np.iscomplexobj(prob.y)

    def test_trial_keys_decorrelate(self):
        spec = small_phase_spec()
        p0 = generate_problem(spec, 1, 120, (0, 0))
        p1 = generate_problem(spec, 1, 120, (0, 1))
        assert not np.allclose(p0.y, p1.y)


class TestRunPhase:
    def test_oversampled_cell_succeeds(self):
        spec = small_phase_spec(
            shape=(12, 12), rank=2, m_multipliers=[10.0], trials=1,
            solver=SolverConfig(max_iters=300),
        )
        cells = run_phase(spec)
        assert len(cells) == 1
        assert cells[0].successes == 1
        assert cells[0].trials == 1

    def test_undersampled_cell_emitted_with_zero_successes(self):
        spec = small_phase_spec(m_multipliers=[0.5], trials=2)
        cells = run_phase(spec)
        assert cells[0].successes == 0
        assert cells[0].m < spec.dof(1)

    def test_rerun_identical_csv_bytes(self):
        spec = small_phase_spec(trials=2)
        a = csv_bytes(PHASE_HEADER, phase_rows(run_phase(spec)))
        b = csv_bytes(PHASE_HEADER, phase_rows(run_phase(spec)))
        assert a == b

    def test_thread_count_does_not_change_csv(self):
        spec = small_phase_spec(trials=4, m_multipliers=[2.0, 4.0])
        a = csv_bytes(PHASE_HEADER, phase_rows(run_phase(spec, threads=1)))
        b = csv_bytes(PHASE_HEADER, phase_rows(run_phase(spec, threads=4)))
        assert a == b

    def test_success_monotone_in_m_weak(self):
        spec = small_phase_spec(trials=4, m_multipliers=[1.0, 4.0], s_values=[1, 2])
        cells = run_phase(spec)
        for s in (1, 2):
            mine = [c for c in cells if c.s == s]
            lo = min(mine, key=lambda c: c.m)
            hi = max(mine, key=lambda c: c.m)
            assert hi.successes >= lo.successes


class TestRunNoise:
    def test_noiseless_cells_hit_success_threshold(self):
        spec = small_phase_spec(
            experiment="noise", sigmas=[0.0], trials=2, m_multipliers=[4.0]
        )
        rows = run_noise(spec)
        assert rows[0]["mean_rel_err"] <= 1e-2
        assert math.isinf(rows[0]["snr_db"])

    def test_error_scales_with_sigma(self):
        spec = small_phase_spec(
            experiment="noise",
            sigmas=[1e-3, 1e-2, 1e-1],
            trials=3,
            m_multipliers=[4.0],
            solver=SolverConfig(max_iters=120),
        )
        rows = run_noise(spec)
        errs = np.array([r["mean_rel_err"] for r in rows])
        sigmas = np.array([r["sigma"] for r in rows])
        slope = np.polyfit(np.log10(sigmas), np.log10(errs), 1)[0]
        assert 0.8 <= slope <= 1.2

    def test_more_measurements_less_error(self):
        spec = small_phase_spec(
            experiment="noise",
            sigmas=[1e-2],
            trials=3,
            m_multipliers=[3.0, 6.0],
            solver=SolverConfig(max_iters=120),
        )
        rows = run_noise(spec)
        by_m = sorted(rows, key=lambda r: r["m"])
        assert by_m[1]["mean_rel_err"] < by_m[0]["mean_rel_err"]


class TestRunRankseek:
    def test_true_rank_one_trace_constant(self):
        spec = small_phase_spec(
            experiment="rankseek", rank=1, m_multipliers=[4.0], trials=2,
            solver=SolverConfig(max_iters=200, stall_window=10),
        )
        result = run_rankseek(spec)
        assert all(row["assumed_rank"] == 1 for row in result["trace"])
        assert all(row["converged"] for row in result["summary"])

    def test_detects_higher_rank(self):
        spec = ExperimentSpec(
            experiment="rankseek", shape=(20, 20), rank=3, s_values=[1],
            m_multipliers=[3.0], trials=2, seed=8,
            solver=SolverConfig(max_iters=400, stall_window=10),
        )
        result = run_rankseek(spec)
        for row in result["summary"]:
            assert row["final_rank"] == 3
            assert row["converged"] == 1
        # each increment coincides with a residual jump or plateau break
        for trial in {r["trial"] for r in result["trace"]}:
            rows = [r for r in result["trace"] if r["trial"] == trial]
            ranks = [r["assumed_rank"] for r in rows]
            residuals = [r["relative_residual"] for r in rows]
            increments = [i for i in range(1, len(ranks)) if ranks[i] > ranks[i - 1]]
            assert len(increments) >= spec.rank - 1
            for i in increments:
                jumped = i + 1 < len(residuals) and residuals[i + 1] > residuals[i]
                window = residuals[i : min(i + 12, len(residuals))]
                broke = len(window) > 1 and window[-1] < window[0] * (1 - 1e-2)
                assert jumped or broke


class TestRunAripAndSolveOne:
    def test_arip_rows_schema(self):
        spec = ExperimentSpec(
            experiment="arip", shape=(8, 8), rank=1, s_values=[1],
            m_values=[60, 120], trials=40, seed=2,
        )
        rows = run_arip(spec)
        assert len(rows) == 2
        table = arip_rows(rows)
        assert len(table[0]) == len(ARIP_HEADER)

    def test_solve_one_summary(self):
        spec = small_phase_spec(experiment="solve-one")
        summary = run_solve_one(spec)
        assert summary["converged"] is True
        assert summary["m"] == spec.m_grid(1)[0]


class TestCsvLayer:
    def test_roundtrip_fixpoint(self, tmp_path):
        spec = small_phase_spec(trials=2)
        rows = phase_rows(run_phase(spec))
        path = tmp_path / "phase.csv"
        write_csv(path, PHASE_HEADER, rows)
        header, parsed = read_csv(path)
        assert header == PHASE_HEADER
        path2 = tmp_path / "phase2.csv"
        write_csv(path2, header, parsed)
        assert path.read_bytes() == path2.read_bytes()

    def test_rfc4180_crlf(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ["a", "b"], [[1, 2.5]])
        assert path.read_bytes() == b"a,b\r\n1,2.5\r\n"

    def test_float_formatting_roundtrips(self):
        vals = [0.1, 1e-05, 3.0, float("inf"), 1 / 3]
        from demix.experiments import format_value

        for v in vals:
            assert float(format_value(v)) == v
