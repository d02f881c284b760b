"""Learning restriction maps with opinions held fixed.

With ``x`` frozen, the coboundary is affine in the adapting maps:
``(delta x)_e = (A rho)_e + c_e`` on the edges that carry an adapting
incidence. ``rho`` is the flat vector of adapting blocks, ordered by vertex
then edge (declaration order) and flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg

from .errors import SolvabilityError, ValidationError
from .integrate import Trajectory, integrate
from .sheaf import Graph, Sheaf, coboundary, pinv

AGREEMENT_TOL = 1e-9
CONSISTENCY_TOL = 1e-8

TYPE_S = "S"
TYPE_A = "A"


@dataclass(frozen=True)
class AdaptationSpec:
    """Set of adapting ``(vertex, edge)`` incidences on a fixed graph."""

    graph: Graph
    incidences: frozenset

    def __post_init__(self):
        inc = frozenset(tuple(p) for p in self.incidences)
        valid = set(self.graph.incidences())
        bad = [p for p in inc if p not in valid]
        if bad:
            raise ValidationError(f"not an incidence of the graph: {bad[0]!r}")
        object.__setattr__(self, "incidences", inc)

    @classmethod
    def all(cls, graph: Graph) -> "AdaptationSpec":
        return cls(graph, frozenset(graph.incidences()))

    @classmethod
    def none(cls, graph: Graph) -> "AdaptationSpec":
        return cls(graph, frozenset())

    @classmethod
    def frozen(cls, graph: Graph, frozen: Iterable) -> "AdaptationSpec":
        """Everything adapts except the listed incidences."""
        frozen = {tuple(p) for p in frozen}
        valid = set(graph.incidences())
        bad = [p for p in frozen if p not in valid]
        if bad:
            raise ValidationError(f"not an incidence of the graph: {bad[0]!r}")
        return cls(graph, frozenset(valid - frozen))

    def ordered(self) -> list:
        return [p for p in self.graph.incidences() if p in self.incidences]

    def adapts(self, v, e) -> bool:
        return (v, e) in self.incidences

    @property
    def active_edges(self) -> list:
        """Edges with at least one adapting incidence, in edge order."""
        return [e for e, t, h in self.graph.edges if (t, e) in self.incidences or (h, e) in self.incidences]

    def edge_type(self, e) -> str:
        t, h = self.graph.endpoints(e)
        return TYPE_S if self.adapts(t, e) == self.adapts(h, e) else TYPE_A

    def edge_types(self) -> dict:
        return {e: self.edge_type(e) for e in self.graph.edge_ids}


@dataclass(frozen=True)
class DiscrepancySystem:
    """The affine map ``rho -> A rho + c`` for fixed opinions.

    ``offsets[(v, e)]`` is the slice of the block in ``rho``; ``rows[e]`` the
    slice of edge ``e`` in the target space ``W``.
    """

    sheaf: Sheaf
    x: np.ndarray
    adapt: AdaptationSpec
    A: np.ndarray
    c: np.ndarray
    offsets: dict
    rows: dict

    @property
    def n_maps(self) -> int:
        return self.A.shape[1]

    def discrepancy(self, rho) -> np.ndarray:
        return self.A @ rho + self.c

    def objective(self, rho) -> float:
        r = self.discrepancy(rho)
        return 0.5 * float(r @ r)

    def gradient(self, rho) -> np.ndarray:
        return self.A.T @ self.discrepancy(rho)

    def adjoint(self, y) -> np.ndarray:
        """``A^T y`` blockwise as ``sign * outer(y_e, x_v)``, never forming ``A``."""
        xb = self.sheaf.split0(self.x)
        out = np.zeros(self.n_maps)
        for (v, e), sl in self.offsets.items():
            out[sl] = self.sheaf.graph.sign(v, e) * np.outer(y[self.rows[e]], xb[v]).ravel()
        return out

    def blocks(self, rho) -> dict:
        rho = np.asarray(rho, dtype=float)
        return {
            (v, e): rho[sl].reshape(self.sheaf.edge_dims[e], self.sheaf.vertex_dims[v])
            for (v, e), sl in self.offsets.items()
        }

    def rho_of(self, sheaf: Sheaf | None = None) -> np.ndarray:
        """Current adapting maps of ``sheaf`` (default: the system's own) as a flat vector."""
        sheaf = self.sheaf if sheaf is None else sheaf
        out = np.zeros(self.n_maps)
        for p, sl in self.offsets.items():
            out[sl] = sheaf.restrictions[p].ravel()
        return out

    def sheaf_with(self, rho) -> Sheaf:
        return self.sheaf.with_restrictions(self.blocks(rho))

    def consistent(self, tol: float = CONSISTENCY_TOL) -> bool:
        """Whether ``-c`` lies in the range of ``A`` (relative least-squares residual)."""
        scale = float(np.linalg.norm(self.c))
        if scale == 0.0:
            return True
        resid = self.c - self.A @ (pinv(self.A) @ self.c)
        return float(np.linalg.norm(resid)) <= tol * scale


def _layout(sheaf: Sheaf, adapt: AdaptationSpec) -> tuple[dict, dict]:
    offsets, pos = {}, 0
    for v, e in adapt.ordered():
        size = sheaf.edge_dims[e] * sheaf.vertex_dims[v]
        offsets[(v, e)] = slice(pos, pos + size)
        pos += size
    rows, pos = {}, 0
    for e in adapt.active_edges:
        rows[e] = slice(pos, pos + sheaf.edge_dims[e])
        pos += sheaf.edge_dims[e]
    return offsets, rows


def build_discrepancy_system(sheaf: Sheaf, x, adapt: AdaptationSpec | Iterable) -> DiscrepancySystem:
    if not isinstance(adapt, AdaptationSpec):
        adapt = AdaptationSpec(sheaf.graph, frozenset(map(tuple, adapt)))
    if adapt.graph != sheaf.graph:
        raise ValidationError("adaptation spec belongs to a different graph")
    x = np.array(sheaf.as_cochain0(x), dtype=float)
    xb = sheaf.split0(x)
    offsets, rows = _layout(sheaf, adapt)
    n_rows = sum(sheaf.edge_dims[e] for e in rows)
    n_cols = offsets[next(reversed(offsets))].stop if offsets else 0
    a = np.zeros((n_rows, n_cols))
    c = np.zeros(n_rows)
    for e in rows:
        t, h = sheaf.graph.endpoints(e)
        de = sheaf.edge_dims[e]
        for w in (t, h):
            sign = sheaf.graph.sign(w, e)
            if adapt.adapts(w, e):
                a[rows[e], offsets[(w, e)]] = sign * np.kron(np.eye(de), xb[w][None, :])
            else:
                c[rows[e]] += sign * (sheaf.restrictions[(w, e)] @ xb[w])
    x.setflags(write=False)
    a.setflags(write=False)
    c.setflags(write=False)
    return DiscrepancySystem(sheaf, x, adapt, a, c, offsets, rows)


@dataclass
class LearningLimit:
    rho: np.ndarray
    candidates: dict
    formula_gap: float
    stationarity: float
    consistent: bool
    discrepancy: float


def kernel_projector(a: np.ndarray) -> np.ndarray:
    return np.eye(a.shape[1]) - pinv(a) @ a


def learning_limit(sys: DiscrepancySystem, rho0=None, *, check: bool = True) -> LearningLimit:
    """Limit of the learning flow from ``rho0``: ``rho0 - A^+ (A rho0 + c)``.

    Cross-checked against kernel projection plus minimum-norm particular
    solution and against the normal-equations correction.
    """
    rho0 = sys.rho_of() if rho0 is None else np.asarray(rho0, dtype=float)
    a, c = sys.A, sys.c
    a_pinv = pinv(a)
    ata = a.T @ a
    cands = {
        "correction": rho0 - a_pinv @ (a @ rho0 + c),
        "projection": (rho0 - a_pinv @ (a @ rho0)) - a_pinv @ c,
        "normal_equations": rho0 - pinv(ata) @ (ata @ rho0 + a.T @ c),
    }
    vals = list(cands.values())
    gap = max((float(np.linalg.norm(p - q)) for i, p in enumerate(vals) for q in vals[i + 1:]), default=0.0)
    rho = cands["correction"]
    stat = float(np.linalg.norm(a.T @ (a @ rho + c)))
    cons = sys.consistent()
    disc = float(np.linalg.norm(a @ rho + c))
    if check:
        scale = max(1.0, float(np.linalg.norm(rho)))
        if gap > AGREEMENT_TOL * scale:
            raise SolvabilityError(f"learning limit formulas disagree by {gap:.3e}")
        ascale = max(1.0, float(np.linalg.norm(a)) ** 2 * scale + float(np.linalg.norm(a)) * float(np.linalg.norm(c)))
        if stat > AGREEMENT_TOL * ascale:
            raise SolvabilityError(f"normal-equation residual {stat:.3e} too large")
        if cons and disc > CONSISTENCY_TOL * max(1.0, float(np.linalg.norm(c)), float(np.linalg.norm(a @ rho0))):
            raise SolvabilityError(f"consistent system left discrepancy {disc:.3e}")
    return LearningLimit(rho, cands, gap, stat, cons, disc)


def learning_flow(
    sys: DiscrepancySystem,
    rho0=None,
    beta: float = 1.0,
    t_max: float = 1e4,
    *,
    lam: float = 0.0,
    velocity_tol: float | None = 1e-10,
    stride: int = 1,
    **kwargs,
) -> Trajectory:
    """Integrate ``d rho/dt = -beta (A^T (A rho + c) + lam (rho - rho0))``.

    ``lam = 0`` is the plain gradient flow of half the squared discrepancy.
    The ``objective`` monitor records that energy.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    rho0 = sys.rho_of() if rho0 is None else np.asarray(rho0, dtype=float)
    a, c = sys.A, sys.c
    ata, atc = a.T @ a, a.T @ c
    lip = beta * ((float(np.linalg.norm(a, 2)) ** 2 if a.size else 0.0) + lam)

    def rhs(rho):
        return -beta * (ata @ rho + atc + lam * (rho - rho0))

    return integrate(
        rhs,
        rho0,
        t_max=t_max,
        velocity_tol=velocity_tol,
        stride=stride,
        monitor=lambda t, rho: {"objective": sys.objective(rho)},
        lipschitz=lip,
        **kwargs,
    )


def regularized_learning(sys: DiscrepancySystem, rho0=None, lam: float = 1.0) -> np.ndarray:
    """Solve ``(A^T A + lam I) rho = lam rho0 - A^T c``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    rho0 = sys.rho_of() if rho0 is None else np.asarray(rho0, dtype=float)
    a = sys.A
    if a.shape[1] == 0:
        return rho0.copy()
    m = a.T @ a + lam * np.eye(a.shape[1])
    return scipy.linalg.solve(m, lam * rho0 - a.T @ sys.c, assume_a="pos")


def build_structure_sheaf(sheaf: Sheaf, x, adapt: AdaptationSpec | Iterable) -> Sheaf:
    """Sheaf whose 0-cochains are adapting map configurations.

    The stalk at ``v`` is the row-major flattening of the adapting blocks at
    ``v``; the stalk at ``e`` is that of ``sheaf`` when ``e`` carries an
    adapting incidence and zero otherwise. Restrictions evaluate the
    ``e``-block on ``x_v``, so the coboundary is ``A`` and the Laplacian
    ``A^T A``.
    """
    if not isinstance(adapt, AdaptationSpec):
        adapt = AdaptationSpec(sheaf.graph, frozenset(map(tuple, adapt)))
    xb = sheaf.split0(x)
    active = set(adapt.active_edges)
    edims = {e: (sheaf.edge_dims[e] if e in active else 0) for e in sheaf.graph.edge_ids}
    vdims, local = {}, {}
    for v in sheaf.graph.vertices:
        pos = 0
        for e in sheaf.graph.incident_edges(v):
            if adapt.adapts(v, e):
                size = sheaf.edge_dims[e] * sheaf.vertex_dims[v]
                local[(v, e)] = slice(pos, pos + size)
                pos += size
        vdims[v] = pos
    maps = {}
    for v, e in sheaf.incidences():
        m = np.zeros((edims[e], vdims[v]))
        if (v, e) in local:
            m[:, local[(v, e)]] = np.kron(np.eye(sheaf.edge_dims[e]), xb[v][None, :])
        maps[(v, e)] = m
    return Sheaf(sheaf.graph, vdims, edims, maps)


def stubborn_structure_forcing(sheaf: Sheaf, x, adapt: AdaptationSpec) -> np.ndarray:
    """Forcing from frozen maps computed through the full structure sheaf.

    Builds the structure sheaf with every incidence adapting, embeds the
    frozen maps (adapting blocks zero) as a 0-cochain and applies its
    coboundary; rows on edges with an adapting incidence equal ``c``.
    """
    full = build_structure_sheaf(sheaf, x, AdaptationSpec.all(sheaf.graph))
    blocks = {}
    for v in sheaf.graph.vertices:
        parts = []
        for e in sheaf.graph.incident_edges(v):
            m = sheaf.restrictions[(v, e)]
            parts.append(np.zeros(m.size) if adapt.adapts(v, e) else m.ravel())
        blocks[v] = np.concatenate(parts) if parts else np.zeros(0)
    y = coboundary(full, full.stack0(blocks))
    yb = full.split1(y)
    active = adapt.active_edges
    return np.concatenate([yb[e] for e in active]) if active else np.zeros(0)
