import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from discourse_sheaves import catalog
from discourse_sheaves.errors import ConformanceError, SolvabilityError, ValidationError
from discourse_sheaves.free_opinions import (
    BlockLaplacian,
    Frame,
    StubbornSpec,
    build_free_sheaf,
    compatibility_obstruction,
    complement_basis,
    constrained_diffuse,
    exact_sequence_audit,
    solve_poisson,
)
from discourse_sheaves.generators import random_cochain, random_sheaf, random_stubborn
from discourse_sheaves.sheaf import betti_numbers, coboundary, coboundary_matrix, laplacian


def kkt_poisson(lqq, forcing, y0):
    """Nearest point to y0 on the solution set of lqq y = -forcing, via the KKT system."""
    n = lqq.shape[0]
    kkt = np.block([[np.eye(n), lqq.T], [lqq, np.zeros((n, n))]])
    rhs = np.concatenate([y0, -forcing])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n]


def test_clamped_cycle_equilibrium(cycle, clamp):
    _, blocks = build_free_sheaf(cycle, clamp)
    y0 = blocks.frame.p_q(cycle.stack0(catalog.CLAMPED_X0))
    sol = solve_poisson(blocks, y0=y0)
    assert np.allclose(sol.x, cycle.stack0(catalog.CLAMPED_LIMIT), atol=1e-12)
    r = cycle.split1(coboundary(cycle, sol.x))
    assert np.allclose(np.abs(r["e41"]), [0.0, 1.0], atol=1e-12)
    for e in ("e12", "e23", "e34"):
        assert np.allclose(r[e], 0.0, atol=1e-12)


def test_clamped_cycle_initial_discrepancy(cycle):
    r = coboundary(cycle, cycle.stack0(catalog.CLAMPED_X0))
    assert r @ r == pytest.approx(5.0)


def test_clamped_cycle_flow(cycle, clamp):
    _, blocks = build_free_sheaf(cycle, clamp)
    y0 = blocks.frame.p_q(cycle.stack0(catalog.CLAMPED_X0))
    traj = constrained_diffuse(blocks, y0=y0)
    assert traj.converged
    assert np.allclose(traj.monitors["x"][-1], cycle.stack0(catalog.CLAMPED_LIMIT), atol=1e-6)
    assert traj.monitors["energy"][-1] == pytest.approx(0.5, abs=1e-9)
    # stubborn coordinate never moves
    assert np.all(traj.monitors["x"][:, 4] == 1.0)


def test_clamped_cycle_limit_depends_on_start(cycle, clamp):
    # the free sheaf keeps a global section, so the limit is not unique
    q, blocks = build_free_sheaf(cycle, clamp)
    assert betti_numbers(q)[0] == 1
    a = solve_poisson(blocks, y0=np.zeros(blocks.frame.n_q)).x
    b = solve_poisson(blocks, y0=blocks.frame.p_q(cycle.stack0(catalog.CLAMPED_X0))).x
    assert not np.allclose(a, b)
    assert np.linalg.norm(coboundary(cycle, a)) == pytest.approx(np.linalg.norm(coboundary(cycle, b)))


def test_obstruction_on_clamped_cycle(cycle, clamp):
    obs = compatibility_obstruction(cycle, clamp)
    assert not obs.is_compatible
    assert obs.residual == pytest.approx(1.0, abs=1e-12)


def test_compatible_values_have_no_obstruction(cycle):
    sec = cycle.stack0(catalog.FOUR_CYCLE_SECTION)
    spec = StubbornSpec.coordinates(cycle, {"v2": [0, 1], "v4": [1]}, sec)
    obs = compatibility_obstruction(cycle, spec)
    assert obs.is_compatible
    _, blocks = build_free_sheaf(cycle, spec)
    sol = solve_poisson(blocks)
    assert np.linalg.norm(coboundary(cycle, sol.x)) < 1e-10


def test_obstruction_matches_least_squares_oracle(rng):
    for _ in range(30):
        sh = random_sheaf(rng, 4, 2)
        spec = random_stubborn(rng, sh, p=0.7)
        frame = Frame.build(sh, spec)
        d = coboundary_matrix(sh)
        u = frame.u()
        y = np.linalg.lstsq(d @ frame.iota_q, -d @ frame.iota_s @ u, rcond=None)[0]
        best = np.linalg.norm(d @ (frame.iota_s @ u + frame.iota_q @ y))
        assert compatibility_obstruction(sh, spec).residual == pytest.approx(best, abs=1e-9)


def test_block_identities(rng):
    for _ in range(20):
        sh = random_sheaf(rng, 4, 2)
        spec = random_stubborn(rng, sh, p=0.6)
        q, blocks = build_free_sheaf(sh, spec)
        assert np.allclose(laplacian(q), blocks.L_QQ, atol=1e-12)
        assert np.allclose(blocks.rotated(), blocks.assembled(), atol=1e-12)
        r = np.hstack([blocks.frame.iota_s, blocks.frame.iota_q])
        assert np.allclose(r.T @ r, np.eye(sh.dim0), atol=1e-12)


def test_poisson_matches_kkt_oracle(rng):
    for _ in range(30):
        sh = random_sheaf(rng, 5, 2)
        spec = random_stubborn(rng, sh, p=0.5)
        _, blocks = build_free_sheaf(sh, spec)
        u = blocks.frame.u()
        y0 = rng.standard_normal(blocks.frame.n_q)
        sol = solve_poisson(blocks, u, y0)
        ref = kkt_poisson(blocks.L_QQ, blocks.L_QS @ u, y0)
        assert np.allclose(sol.y, ref, atol=1e-8)


def test_poisson_flow_matches_affine_exponential(rng):
    sh = random_sheaf(rng, 4, 2)
    spec = random_stubborn(rng, sh, p=0.8)
    _, blocks = build_free_sheaf(sh, spec)
    u = blocks.frame.u()
    y0 = rng.standard_normal(blocks.frame.n_q)
    traj = constrained_diffuse(blocks, u, y0, alpha=1.3, t_max=2.0, velocity_tol=None)
    n = blocks.frame.n_q
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = -1.3 * blocks.L_QQ
    aug[:n, n] = -1.3 * blocks.L_QS @ u
    z0 = np.append(y0, 1.0)
    for t, y in zip(traj.t[::4], traj.states[::4]):
        assert np.allclose(y, (scipy.linalg.expm(aug * t) @ z0)[:n], atol=1e-6)


def test_solvability_error_on_corrupted_blocks(cycle, clamp):
    _, blocks = build_free_sheaf(cycle, clamp)
    bad = BlockLaplacian(blocks.frame, blocks.L, blocks.L_SS, blocks.L_SQ, blocks.L_QS + 1.0, blocks.L_QQ)
    with pytest.raises(SolvabilityError):
        solve_poisson(bad)


def test_coordinate_complement_is_exact():
    s = np.eye(3)[:, [1]]
    t = complement_basis(s)
    assert np.array_equal(np.sort(np.argmax(np.abs(t), axis=0)), [0, 2])
    assert set(np.round(np.abs(t).sum(axis=0), 15)) == {1.0}


def test_complement_is_orthonormal(rng):
    for n in range(1, 6):
        for k in range(n + 1):
            q = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :k]
            t = complement_basis(q)
            full = np.hstack([q, t])
            assert np.allclose(full.T @ full, np.eye(n), atol=1e-12)


def test_stubborn_spec_validation(cycle):
    with pytest.raises(ValidationError):
        StubbornSpec({"v2": np.array([[1.0], [1.0]])}, {"v2": [0.0]})
    with pytest.raises(ConformanceError):
        StubbornSpec({"v2": np.eye(2)}, {"v2": [0.0]})
    with pytest.raises(ValidationError):
        StubbornSpec({}, {"v2": [1.0]})
    with pytest.raises(ConformanceError):
        Frame.build(cycle, StubbornSpec({"v1": np.eye(2)}, {"v1": [0.0, 0.0]}))
    with pytest.raises(ValidationError):
        Frame.build(cycle, StubbornSpec({"zz": np.eye(1)}, {"zz": [0.0]}))


def test_fully_stubborn_vertex(cycle):
    spec = StubbornSpec.coordinates(cycle, {"v2": [0, 1]}, cycle.stack0(catalog.FOUR_CYCLE_X0))
    _, blocks = build_free_sheaf(cycle, spec)
    assert blocks.frame.q_dims["v2"] == 0
    sol = solve_poisson(blocks)
    assert np.allclose(cycle.split0(sol.x)["v2"], [1.0, -2.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_sequence_dimensions(seed):
    rng = np.random.default_rng(seed)
    sh = random_sheaf(rng, int(rng.integers(2, 6)), int(rng.integers(0, 4)))
    spec = random_stubborn(rng, sh, p=0.5, aligned=bool(rng.integers(0, 2)))
    rep = exact_sequence_audit(sh, spec)
    assert rep.alternating_sum == 0
    assert rep.injective
    q, _ = build_free_sheaf(sh, spec)
    assert rep.h0_free == scipy.linalg.null_space(coboundary_matrix(q)).shape[1] if q.dim0 else rep.h0_free == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_three_poisson_formulas_agree(seed):
    rng = np.random.default_rng(seed)
    sh = random_sheaf(rng, int(rng.integers(2, 6)), int(rng.integers(0, 3)))
    spec = random_stubborn(rng, sh, p=0.5)
    _, blocks = build_free_sheaf(sh, spec)
    y0 = random_cochain(rng, sh)[: blocks.frame.n_q] if blocks.frame.n_q <= sh.dim0 else None
    sol = solve_poisson(blocks, y0=y0)
    vals = list(sol.candidates.values())
    for a in vals:
        for b in vals:
            assert np.linalg.norm(a - b) <= 1e-9 * max(1.0, np.linalg.norm(sol.y))
