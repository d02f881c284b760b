import numpy as np
import pytest

from discourse_sheaves import catalog
from discourse_sheaves.generators import random_cochain, random_sheaf
from discourse_sheaves.io import read_csv, write_csv
from discourse_sheaves.joint import joint_flow
from discourse_sheaves.sheaf import laplacian
from discourse_sheaves.structure import AdaptationSpec
from discourse_sheaves.timescale import (
    REQUIRED_COLUMNS,
    check_opinion_stagnation,
    check_structural_stagnation,
    estimate_gaps,
    regime_thresholds,
    samples_from,
)


@pytest.fixture
def run(rng):
    sh = random_sheaf(rng, 4, 2)
    x0 = random_cochain(rng, sh)
    return joint_flow(sh, None, AdaptationSpec.all(sh.graph), x0, alpha=1.0, beta=0.05, t_max=20.0,
                      velocity_tol=None)


def test_structure_ratio_forms_agree(run):
    g = estimate_gaps(run)
    assert g.mu_formula_gap < 1e-10


def test_opinion_gap_without_learning_is_spectral(rng):
    for _ in range(5):
        sh = random_sheaf(rng, 4, 1)
        x0 = random_cochain(rng, sh)
        traj = joint_flow(sh, None, AdaptationSpec.none(sh.graph), x0, alpha=1.0, beta=0.0, t_max=5.0,
                          velocity_tol=None)
        ev = np.linalg.eigvalsh(laplacian(sh))
        smallest = ev[ev > 1e-9].min()
        assert estimate_gaps(traj).lambda_eff >= smallest * (1 - 1e-8)


def test_constant_vertex_norms_give_closed_form_mu():
    # scalar edge with both maps adapting: sum |x_v|^2 over the two incidences is 2 c^2
    sh = catalog.scalar_edge(1.0, 2.0)
    x = sh.stack0({"u": [0.7], "v": [0.7]})
    traj = joint_flow(sh, None, AdaptationSpec.all(sh.graph), x, alpha=0.0, beta=1.0, t_max=1.0,
                      velocity_tol=None)
    g = estimate_gaps(traj)
    assert g.mu_eff == pytest.approx(2 * 0.49, rel=1e-10)


def test_stride_refinement_can_only_lower_the_infimum(rng):
    sh = random_sheaf(rng, 4, 2)
    x0 = random_cochain(rng, sh)
    args = (sh, None, AdaptationSpec.all(sh.graph), x0, 1.0, 0.3, 10.0)
    fine = estimate_gaps(joint_flow(*args, velocity_tol=None))
    coarse = estimate_gaps(joint_flow(*args, velocity_tol=None, stride=5))
    assert fine.lambda_eff <= coarse.lambda_eff + 1e-12
    assert fine.mu_eff <= coarse.mu_eff + 1e-12
    assert coarse.stride == 5


def test_equilibrium_samples_are_skipped(cycle):
    sec = cycle.stack0(catalog.FOUR_CYCLE_SECTION)
    traj = joint_flow(cycle, None, AdaptationSpec.all(cycle.graph), sec, t_max=1.0, velocity_tol=None)
    g = estimate_gaps(traj)
    assert g.undefined and g.equilibrium_reached
    rep = check_structural_stagnation(traj, 1.0, 1.0, g)
    assert rep.passed


def test_bounds_hold_on_random_runs(rng):
    for _ in range(8):
        sh = random_sheaf(rng, int(rng.integers(2, 5)), 1)
        x0 = random_cochain(rng, sh)
        alpha, beta = 1.0, float(rng.uniform(0.01, 3.0))
        traj = joint_flow(sh, None, AdaptationSpec.all(sh.graph), x0, alpha, beta, t_max=15.0,
                          velocity_tol=None)
        g = estimate_gaps(traj)
        for rep in (check_structural_stagnation(traj, alpha, beta, g),
                    check_opinion_stagnation(traj, alpha, beta, g)):
            assert rep.passed, rep
            if rep.applicable and rep.bound > 0:
                assert rep.bound <= rep.bound_horizon_free + 1e-12


def test_sharpened_bound_is_labelled(run):
    rep = check_structural_stagnation(run, 1.0, 0.05)
    if rep.sharpened is not None:
        assert rep.sharpened_label.startswith("conditional")


def test_zero_rate_bounds_are_inapplicable(run):
    assert not check_structural_stagnation(run, 0.0, 1.0).applicable
    assert not check_opinion_stagnation(run, 1.0, 0.0).applicable


def test_thresholds_on_toy_values():
    lo, hi = regime_thresholds(0.1, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert (lo, hi) == pytest.approx((0.1, 10.0))
    with pytest.raises(ValueError):
        regime_thresholds(0.1, 0.0, 1.0, 1.0, 1.0, 1.0)


def test_slow_structure_threshold_controls_displacement(run):
    g = estimate_gaps(run)
    eps = 0.5
    lo, _ = regime_thresholds(eps, g.lambda_eff, max(g.mu_eff, 1e-12), g.B_x, g.B_delta, g.initial_discrepancy)
    # the horizon-free structural bound is linear in beta/alpha and hits eps at the threshold
    scaled = lo * g.B_x * g.initial_discrepancy / g.lambda_eff
    assert scaled == pytest.approx(eps)


def test_csv_round_trip_gives_same_estimate(run, tmp_path):
    cols = {"t": run.t, **{k: run.monitors[k] for k in REQUIRED_COLUMNS if k != "t"}}
    path = tmp_path / "traj.csv"
    write_csv(path, cols)
    table = read_csv(path)
    a, b = estimate_gaps(run), estimate_gaps(table)
    assert a.lambda_eff == b.lambda_eff and a.mu_eff == b.mu_eff


def test_missing_columns_rejected():
    with pytest.raises(ValueError):
        samples_from({"t": [0.0, 1.0]})
    with pytest.raises(TypeError):
        samples_from([1, 2, 3])
