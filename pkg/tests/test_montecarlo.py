import math

import numpy as np
import pytest

from driftstop.montecarlo import (
    CostEstimate, SimConfig, estimate_cost, estimate_hitting_time, perturbation_suite, policy_cost,
    simulate_path, value_at_variance,
)
from driftstop.policy import ConstantThreshold, StopAtOnce
from driftstop.solver import value_function

from conftest import GEO_S, GEO_TAU2, GEO_U, GEO_V2

SMALL = SimConfig(n_paths=20_000, seed=11)


def test_stop_at_once_path(qc):
    out = simulate_path(qc, StopAtOnce(), 2.0, SMALL, 0)
    assert out.stop_time == 0.0 and out.accumulated_cost == 4.0 and not out.truncated


def test_start_inside_threshold(qc):
    out = simulate_path(qc, ConstantThreshold(-1.0, 1.0), 1.0, SMALL, 0)
    assert out.stop_time == 0.0 and out.accumulated_cost == 1.0


def test_single_path_stops(qc):
    out = simulate_path(qc, ConstantThreshold(-1.0, 1.0), 2.0, SMALL, 5)
    assert 0 < out.stop_time < 50 and out.terminal_x <= 1.0
    assert out.accumulated_cost == pytest.approx(out.terminal_x**2 + 2.0 * out.stop_time, rel=1e-14)


def test_stop_at_once_estimate_exact(qc):
    est = estimate_cost(qc, StopAtOnce(), 2.0, SMALL)
    assert est.mean == 4.0 and est.standard_error == 0.0 and est.valid


def test_negative_start_uses_symmetry(qc):
    a = estimate_cost(qc, ConstantThreshold(-1.0, 1.0), 2.0, SimConfig(n_paths=500))
    b = estimate_cost(qc, ConstantThreshold(-1.0, 1.0), -2.0, SimConfig(n_paths=500))
    assert a.mean == b.mean and b.notes


def test_hitting_time_qc(qc):
    est = estimate_hitting_time(qc, -1.0, 1.0, 2.0, SMALL)
    assert abs(est.mean - 1.0) <= 3 * est.standard_error + 0.02
    assert estimate_hitting_time(qc, -1.0, 1.0, 1.0, SMALL).mean == 0.0


def test_hitting_time_geo(geo):
    est = estimate_hitting_time(geo, GEO_U, GEO_S, 2.0, SMALL)
    assert abs(est.mean - GEO_TAU2) <= 3 * est.standard_error + 0.02


def test_threads_do_not_change_results(qc):
    pol = ConstantThreshold(-1.0, 1.0)
    a = estimate_cost(qc, pol, 2.0, SimConfig(n_paths=9000, seed=5, threads=1))
    b = estimate_cost(qc, pol, 2.0, SimConfig(n_paths=9000, seed=5, threads=3))
    assert a == b
    c = estimate_cost(qc, pol, 2.0, SimConfig(n_paths=9000, seed=6, threads=1))
    assert c.mean != a.mean


def test_threshold_above_start_costs_k(qc):
    pol = ConstantThreshold(-1.0, 2.5)
    assert estimate_cost(qc, pol, 2.0, SMALL).mean == 4.0
    assert policy_cost(qc, pol, 2.0) == 4.0 >= value_function(qc)(2.0)


def test_policy_cost_hand_values(qc):
    assert policy_cost(qc, ConstantThreshold(-1.5, 1.0), 2.0) == pytest.approx(1 + 3.25 * 2 / 3, rel=1e-14)
    assert policy_cost(qc, ConstantThreshold(-1.0, 1.3), 2.0) == pytest.approx(3.09, rel=1e-14)


def test_short_horizon_rejected(qc):
    with pytest.raises(ValueError, match="below 10"):
        estimate_cost(qc, ConstantThreshold(-1.0, 1.0), 2.0, SimConfig(n_paths=10, t_max=5.0))


def test_truncation_marks_estimate_invalid(qc):
    est = estimate_cost(qc, ConstantThreshold(-1.0, 1.0), 1.1, SimConfig(n_paths=2000, t_max=1.01))
    assert est.n_truncated > 20 and not est.valid
    assert any("truncated" in n for n in est.notes)


@pytest.mark.parametrize("kwargs", [dict(dt=0.1), dict(n_paths=0), dict(seed=-1), dict(seed=2**64),
                                    dict(mode="other"), dict(threads=0), dict(t_max=0.0)])
def test_sim_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_perturbation_suite_small(qc):
    rep = perturbation_suite(qc, 2.0, SMALL, [(1.5, 1.0), (1.0, 1.3), (1.0, 1.0)])
    assert [(r.u_scale, r.s_scale) for r in rep.rows] == [(1.0, 1.0), (1.5, 1.0), (1.0, 1.3)]
    assert rep.rows[1].analytic == pytest.approx(3.1666666666666665, rel=1e-14)
    assert rep.passed
    lines = rep.to_csv().split("\n")
    assert lines[0].startswith("u_scale,s_scale,u,s,mean") and len(lines) == 5 and lines[-1] == ""


def test_perturbation_suite_needs_threshold(logcosh):
    from driftstop.montecarlo import SimulationError
    with pytest.raises(SimulationError):
        perturbation_suite(logcosh, 2.0, SMALL, [])


def test_geo_identity_policy(geo):
    rep = perturbation_suite(geo, 2.0, SMALL, [])
    row = rep.rows[0]
    assert rep.value == pytest.approx(GEO_V2, abs=1e-12)
    assert abs(row.estimate.mean - GEO_V2) <= row.tolerance


def test_variance_control_mode(qc):
    pol = ConstantThreshold(-1.0, 1.0)
    cfg = SimConfig(n_paths=20_000, seed=3, mode="variance")
    est = estimate_cost(qc, pol, 2.0, cfg)
    assert value_at_variance(qc, pol, 2.0) == pytest.approx(3.0, abs=1e-14)
    assert abs(est.mean - 3.0) <= 3 * est.standard_error + 0.03


def test_cost_estimate_as_dict():
    est = CostEstimate(1.0, 0.1, 0.8, 1.2, 0, 0.5, 0.01, 10, 50.0)
    d = est.as_dict()
    assert d["valid"] and d["n_paths"] == 10 and math.isfinite(d["mean"])
    assert not CostEstimate(1.0, 0.1, 0.8, 1.2, 2, 0.5, 0.01, 100, 50.0).valid


def test_horizon_floor_without_analytic_time(qc):
    # a nonnegative control has no analytic hitting time: the floor is 10
    with pytest.raises(ValueError, match="below 10"):
        estimate_cost(qc, ConstantThreshold(0.5, 1.0), 2.0, SimConfig(n_paths=10, t_max=5.0))


def test_lower_bound_over_random_policies(qc):
    rng = np.random.default_rng(2024)
    V = value_function(qc)(2.0)
    for i in range(10):
        us, ss = rng.uniform(0.5, 1.5, size=2)
        pol = ConstantThreshold(-us, ss)
        est = estimate_cost(qc, pol, 2.0, SimConfig(n_paths=10_000, seed=100 + i))
        assert est.valid and est.mean >= V - 3 * est.standard_error - 0.03


def test_dt_refinement_shrinks_bias(qc):
    pol = ConstantThreshold(-1.0, 1.0)
    runs = [estimate_cost(qc, pol, 2.0, SimConfig(dt=dt, n_paths=100_000, seed=77)) for dt in (4e-3, 2e-3, 1e-3)]
    bias = [abs(r.mean - 3.0) for r in runs]
    for (b_big, r_big), (b_small, r_small) in zip(zip(bias, runs), zip(bias[1:], runs[1:])):
        noise = 3.0 * math.hypot(r_big.standard_error, r_small.standard_error)
        assert b_small <= b_big + noise
