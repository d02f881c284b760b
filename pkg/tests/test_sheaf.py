import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from discourse_sheaves import catalog
from discourse_sheaves.errors import ConformanceError, ValidationError
from discourse_sheaves.generators import random_cochain, random_sheaf
from discourse_sheaves.sheaf import (
    Graph,
    Sheaf,
    betti_numbers,
    build_sheaf,
    coboundary,
    coboundary_matrix,
    diffuse,
    disagreement_energy,
    global_sections,
    h0_projector,
    laplacian,
    null_space,
    numerical_rank,
    pinv,
    project_h0,
)


def blockwise_laplacian(sheaf):
    """Laplacian from the per-incidence formula, without forming the coboundary."""
    n = sheaf.dim0
    lap = np.zeros((n, n))
    for e, t, h in sheaf.graph.edges:
        ft, fh = sheaf.restrictions[(t, e)], sheaf.restrictions[(h, e)]
        st_, sh_ = sheaf.vslice(t), sheaf.vslice(h)
        lap[st_, st_] += ft.T @ ft
        lap[sh_, sh_] += fh.T @ fh
        lap[st_, sh_] -= ft.T @ fh
        lap[sh_, st_] -= fh.T @ ft
    return lap


def test_four_cycle_initial_discrepancy(cycle):
    x0 = cycle.stack0(catalog.FOUR_CYCLE_X0)
    r = coboundary(cycle, x0)
    assert r @ r == pytest.approx(6.0, abs=1e-12)
    assert disagreement_energy(cycle, x0) == pytest.approx(3.0, abs=1e-12)


def test_four_cycle_section(cycle):
    sec = cycle.stack0(catalog.FOUR_CYCLE_SECTION)
    assert np.allclose(coboundary(cycle, sec), 0.0, atol=1e-14)
    assert betti_numbers(cycle) == (1, 0)
    basis = global_sections(cycle)
    assert basis.shape == (6, 1)
    assert abs(abs(basis[:, 0] @ sec) - np.linalg.norm(sec)) < 1e-12
    # expressed values on the edges of the section
    blocks = cycle.split0(sec)
    assert cycle.restrictions[("v1", "e12")] @ blocks["v1"] == pytest.approx([-2.0])
    assert cycle.restrictions[("v2", "e23")] @ blocks["v2"] == pytest.approx([-1.0])
    assert cycle.restrictions[("v3", "e34")] @ blocks["v3"] == pytest.approx([1.0])
    assert cycle.restrictions[("v4", "e41")] @ blocks["v4"] == pytest.approx([1.0, 0.0])


def test_four_cycle_projection_and_flow(cycle):
    x0 = cycle.stack0(catalog.FOUR_CYCLE_X0)
    expected = cycle.stack0(catalog.FOUR_CYCLE_SECTION)
    assert np.allclose(project_h0(cycle, x0), expected, atol=1e-12)
    traj = diffuse(cycle, x0)
    assert traj.converged
    assert np.allclose(traj.final, expected, atol=1e-6)
    assert np.all(np.diff(traj.monitors["energy"]) <= 1e-9)


def test_coboundary_matrix_matches_action(rng):
    for _ in range(20):
        sh = random_sheaf(rng, 5, 3, (0, 3), (0, 2))
        d = coboundary_matrix(sh)
        cols = np.column_stack([coboundary(sh, e) for e in np.eye(sh.dim0)]) if sh.dim0 else d
        assert np.array_equal(d.shape, (sh.dim1, sh.dim0))
        assert np.allclose(d, cols, atol=0)


def test_laplacian_blockwise_oracle(rng):
    for _ in range(30):
        sh = random_sheaf(rng, 5, 3)
        assert np.allclose(laplacian(sh), blockwise_laplacian(sh), atol=1e-12)


def test_diffusion_matches_matrix_exponential(rng):
    sh = random_sheaf(rng, 4, 2)
    x0 = random_cochain(rng, sh)
    lap = laplacian(sh)
    traj = diffuse(sh, x0, alpha=0.7, t_max=3.0, velocity_tol=None)
    for t, x in zip(traj.t[::5], traj.states[::5]):
        assert np.allclose(x, scipy.linalg.expm(-0.7 * t * lap) @ x0, atol=1e-6)


def test_pinv_against_numpy(rng):
    for _ in range(20):
        m = rng.standard_normal((5, 3)) @ rng.standard_normal((3, 6))
        assert np.allclose(pinv(m), np.linalg.pinv(m), atol=1e-10)
        assert numerical_rank(m) == 3
        ns = null_space(m)
        assert ns.shape == (6, 3)
        assert np.allclose(m @ ns, 0, atol=1e-10)


def test_h0_projector_against_scipy_null_space(rng):
    for _ in range(20):
        sh = random_sheaf(rng, 4, 1, (1, 3), (1, 1))
        basis = scipy.linalg.null_space(coboundary_matrix(sh))
        assert np.allclose(h0_projector(sh), basis @ basis.T, atol=1e-9)


def test_global_section_is_stationary(cycle):
    sec = cycle.stack0(catalog.FOUR_CYCLE_SECTION)
    traj = diffuse(cycle, sec)
    assert traj.converged and len(traj) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_laplacian_psd_and_hodge_kernel(seed):
    rng = np.random.default_rng(seed)
    sh = random_sheaf(rng, int(rng.integers(2, 6)), int(rng.integers(0, 4)))
    lap = laplacian(sh)
    assert np.allclose(lap, lap.T)
    assert np.linalg.eigvalsh(lap).min() >= -1e-10 * max(1.0, np.abs(lap).max())
    h0, h1 = betti_numbers(sh)
    assert numerical_rank(lap) == sh.dim0 - h0
    assert h0 - h1 == sh.dim0 - sh.dim1
    d = coboundary_matrix(sh)
    assert global_sections(sh).shape[1] == null_space(d).shape[1]


def test_orientation_flip_preserves_laplacian(rng):
    sh = random_sheaf(rng, 4, 2)
    e = sh.graph.edge_ids[0]
    assert np.allclose(laplacian(sh), laplacian(sh.flipped(e)), atol=1e-12)


def test_validation_errors():
    with pytest.raises(ValidationError):
        Graph(("a", "a"), ())
    with pytest.raises(ValidationError):
        Graph(("a",), (("e", "a", "a"),))
    with pytest.raises(ValidationError):
        Graph(("a", "b"), (("e", "a", "c"),))
    with pytest.raises(ConformanceError):
        build_sheaf({"a": 2, "b": 1}, [("e", "a", "b", 1)], {("a", "e"): [[1.0]], ("b", "e"): [[1.0]]})
    with pytest.raises(ValidationError):
        build_sheaf({"a": 1, "b": 1}, [("e", "a", "b", 1)], {("a", "e"): 1.0})
    with pytest.raises(ConformanceError):
        build_sheaf({"a": 1, "b": 1}, [("e", "a", "b", 1)], {("a", "e"): [1.0], ("b", "e"): 1.0})


def test_cochain_conformance_names_vertex(cycle):
    with pytest.raises(ConformanceError, match="v2"):
        cycle.stack0({"v1": [1.0], "v2": [1.0], "v3": [0.0], "v4": [0.0, 0.0]})
    with pytest.raises(ConformanceError):
        cycle.as_cochain0(np.zeros(5))


def test_zero_dimensional_stalks():
    sh = build_sheaf({"a": 0, "b": 2}, [("e", "a", "b", 1)], {("a", "e"): np.zeros((1, 0)), ("b", "e"): [[1.0, 0.0]]})
    assert sh.dim0 == 2
    assert betti_numbers(sh) == (1, 0)


def test_empty_sheaf():
    sh = Sheaf(Graph((), ()), {}, {}, {})
    assert sh.dim0 == 0 and sh.dim1 == 0
    assert betti_numbers(sh) == (0, 0)
    assert sh.graph.is_connected()


def test_restrictions_are_read_only(cycle):
    with pytest.raises(ValueError):
        cycle.restrictions[("v1", "e12")][0, 0] = 5.0
