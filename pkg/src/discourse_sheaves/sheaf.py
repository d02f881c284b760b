"""Cellular sheaves on finite graphs, their cochains and Laplacians.

Cochains are flat float arrays laid out vertex block by vertex block (or edge
block by edge block) in declaration order; :meth:`Sheaf.split0` and
:meth:`Sheaf.stack0` convert to and from ``{vertex: block}`` mappings.
Edges are oriented ``tail -> head`` and the coboundary is head minus tail.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConformanceError, ValidationError
from .integrate import Trajectory, integrate

Vertex = Hashable
EdgeId = Hashable
Incidence = tuple  # (vertex, edge)

PINV_RTOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Finite graph with immutable edge orientations.

    ``edges`` holds ``(edge_id, tail, head)`` triples.
    """

    vertices: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if len(set(self.vertices)) != len(self.vertices):
            raise ValidationError("duplicate vertex id")
        vset = set(self.vertices)
        seen = set()
        for eid, tail, head in self.edges:
            if eid in seen:
                raise ValidationError(f"duplicate edge id {eid!r}")
            seen.add(eid)
            if tail not in vset or head not in vset:
                raise ValidationError(f"edge {eid!r} has an unknown endpoint")
            if tail == head:
                raise ValidationError(f"edge {eid!r} is a self-loop")
        object.__setattr__(self, "_vindex", {v: i for i, v in enumerate(self.vertices)})
        object.__setattr__(self, "_eindex", {e[0]: i for i, e in enumerate(self.edges)})

    @property
    def edge_ids(self) -> list:
        return [e[0] for e in self.edges]

    def vertex_index(self, v) -> int:
        return self._vindex[v]

    def edge_index(self, e) -> int:
        return self._eindex[e]

    def endpoints(self, e) -> tuple:
        _, tail, head = self.edges[self._eindex[e]]
        return tail, head

    def sign(self, v, e) -> int:
        tail, head = self.endpoints(e)
        if v == head:
            return 1
        if v == tail:
            return -1
        raise ValidationError(f"{v!r} is not an endpoint of {e!r}")

    def incident_edges(self, v) -> list:
        return [eid for eid, tail, head in self.edges if v in (tail, head)]

    def incidences(self) -> list:
        """All ``(vertex, edge)`` pairs ordered by vertex, then edge."""
        out = []
        for v in self.vertices:
            out.extend((v, e) for e in self.incident_edges(v))
        return out

    def is_connected(self) -> bool:
        n = len(self.vertices)
        if n <= 1:
            return True
        rows = [self._vindex[t] for _, t, _ in self.edges]
        cols = [self._vindex[h] for _, _, h in self.edges]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1

    def flipped(self, e) -> "Graph":
        edges = [(eid, h, t) if eid == e else (eid, t, h) for eid, t, h in self.edges]
        return Graph(self.vertices, edges)


@dataclass(frozen=True)
class Sheaf:
    """A cellular sheaf: stalk dimensions plus one restriction matrix per incidence.

    ``restrictions[(v, e)]`` has shape ``(edge_dims[e], vertex_dims[v])``.
    Zero-dimensional stalks are allowed and simply contribute empty blocks.
    """

    graph: Graph
    vertex_dims: Mapping
    edge_dims: Mapping
    restrictions: Mapping = field(repr=False)

    def __post_init__(self):
        g = self.graph
        vdims = {v: int(self.vertex_dims[v]) for v in g.vertices}
        edims = {e: int(self.edge_dims[e]) for e in g.edge_ids}
        for label, dims in (("vertex", vdims), ("edge", edims)):
            for k, d in dims.items():
                if d < 0:
                    raise ValidationError(f"{label} {k!r} has negative dimension")
        maps = {}
        for eid, tail, head in g.edges:
            for v in (tail, head):
                if (v, eid) not in self.restrictions:
                    raise ValidationError(f"missing restriction map for incidence ({v!r}, {eid!r})")
                m = np.array(self.restrictions[(v, eid)], dtype=float)
                if m.ndim != 2 or m.shape != (edims[eid], vdims[v]):
                    raise ConformanceError(
                        f"restriction ({v!r}, {eid!r}) has shape {m.shape}, "
                        f"expected {(edims[eid], vdims[v])}"
                    )
                m.setflags(write=False)
                maps[(v, eid)] = m
        extra = set(self.restrictions) - set(maps)
        if extra:
            raise ValidationError(f"restriction maps for non-incidences: {sorted(map(str, extra))}")
        object.__setattr__(self, "vertex_dims", vdims)
        object.__setattr__(self, "edge_dims", edims)
        object.__setattr__(self, "restrictions", maps)
        voff = np.concatenate([[0], np.cumsum([vdims[v] for v in g.vertices])]).astype(int)
        eoff = np.concatenate([[0], np.cumsum([edims[e] for e in g.edge_ids])]).astype(int)
        object.__setattr__(self, "_voff", voff)
        object.__setattr__(self, "_eoff", eoff)

    # -- layout -----------------------------------------------------------

    @property
    def dim0(self) -> int:
        return int(self._voff[-1])

    @property
    def dim1(self) -> int:
        return int(self._eoff[-1])

    def vslice(self, v) -> slice:
        i = self.graph.vertex_index(v)
        return slice(int(self._voff[i]), int(self._voff[i + 1]))

    def eslice(self, e) -> slice:
        i = self.graph.edge_index(e)
        return slice(int(self._eoff[i]), int(self._eoff[i + 1]))

    def split0(self, x) -> dict:
        x = self.as_cochain0(x)
        return {v: x[self.vslice(v)] for v in self.graph.vertices}

    def split1(self, y) -> dict:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim1,):
            raise ConformanceError(f"1-cochain has shape {y.shape}, expected ({self.dim1},)")
        return {e: y[self.eslice(e)] for e in self.graph.edge_ids}

    def stack0(self, blocks: Mapping) -> np.ndarray:
        out = np.zeros(self.dim0)
        for v in self.graph.vertices:
            b = np.atleast_1d(np.asarray(blocks[v], dtype=float)).ravel()
            if b.size != self.vertex_dims[v]:
                raise ConformanceError(
                    f"block at vertex {v!r} has length {b.size}, expected {self.vertex_dims[v]}"
                )
            out[self.vslice(v)] = b
        return out

    def as_cochain0(self, x) -> np.ndarray:
        """Accept a flat array or a ``{vertex: block}`` mapping."""
        if isinstance(x, Mapping):
            return self.stack0(x)
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim0,):
            raise ConformanceError(f"0-cochain has shape {x.shape}, expected ({self.dim0},)")
        return x

    def incidences(self) -> list:
        return self.graph.incidences()

    # -- derived sheaves --------------------------------------------------

    def with_restrictions(self, updates: Mapping) -> "Sheaf":
        maps = dict(self.restrictions)
        maps.update(updates)
        return Sheaf(self.graph, self.vertex_dims, self.edge_dims, maps)

    def flipped(self, e) -> "Sheaf":
        """Same sheaf with the orientation of edge ``e`` reversed."""
        return Sheaf(self.graph.flipped(e), self.vertex_dims, self.edge_dims, self.restrictions)


# -- operators --------------------------------------------------------------


def coboundary_matrix(sheaf: Sheaf) -> np.ndarray:
    d = np.zeros((sheaf.dim1, sheaf.dim0))
    for eid, tail, head in sheaf.graph.edges:
        rows = sheaf.eslice(eid)
        d[rows, sheaf.vslice(head)] += sheaf.restrictions[(head, eid)]
        d[rows, sheaf.vslice(tail)] -= sheaf.restrictions[(tail, eid)]
    return d


def laplacian(sheaf: Sheaf) -> np.ndarray:
    d = coboundary_matrix(sheaf)
    return d.T @ d


def coboundary(sheaf: Sheaf, x) -> np.ndarray:
    """Edge discrepancies ``F_{head}(x_head) - F_{tail}(x_tail)`` as a flat 1-cochain."""
    blocks = sheaf.split0(x)
    out = np.zeros(sheaf.dim1)
    for eid, tail, head in sheaf.graph.edges:
        out[sheaf.eslice(eid)] = (
            sheaf.restrictions[(head, eid)] @ blocks[head] - sheaf.restrictions[(tail, eid)] @ blocks[tail]
        )
    return out


def disagreement_energy(sheaf: Sheaf, x) -> float:
    """Half the squared norm of the coboundary."""
    r = coboundary(sheaf, x)
    return 0.5 * float(r @ r)


# -- pseudoinverse utilities -----------------------------------------------


def _cutoff(s: np.ndarray, shape: tuple, rtol: float | None) -> float:
    if s.size == 0:
        return 0.0
    rtol = max(shape) * PINV_RTOL if rtol is None else rtol
    return rtol * s[0]


def pinv(m: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse.

    Singular values below ``rtol * sigma_max`` are dropped; the default
    ``rtol`` is ``max(m, n) * 1e-12``.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return np.zeros(m.shape[::-1])
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    keep = s > _cutoff(s, m.shape, rtol)
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def pinv_apply(m: np.ndarray, b: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Minimum-norm least-squares solution of ``m z = b``."""
    return pinv(m, rtol) @ np.asarray(b, dtype=float)


def numerical_rank(m: np.ndarray, rtol: float | None = None) -> int:
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > _cutoff(s, m.shape, rtol)))


def null_space(m: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of ``ker m``."""
    m = np.asarray(m, dtype=float)
    n = m.shape[1]
    if m.size == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(m, full_matrices=True)
    rank = int(np.sum(s > _cutoff(s, m.shape, rtol)))
    return vt[rank:].T.copy()


# -- cohomology and diffusion ----------------------------------------------


def global_sections(sheaf: Sheaf, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of H^0 = ker L, one column per section.

    ``tol`` is a relative singular-value cutoff on the Laplacian.
    """
    return null_space(laplacian(sheaf), tol)


def h0_projector(sheaf: Sheaf) -> np.ndarray:
    lap = laplacian(sheaf)
    return np.eye(sheaf.dim0) - pinv(lap) @ lap


def project_h0(sheaf: Sheaf, x) -> np.ndarray:
    """Orthogonal projection onto global sections, ``x - L^+ (L x)``."""
    x = sheaf.as_cochain0(x)
    lap = laplacian(sheaf)
    return x - pinv(lap) @ (lap @ x)


def betti_numbers(sheaf: Sheaf) -> tuple[int, int]:
    """``(dim H^0, dim H^1)`` via rank-nullity on the coboundary."""
    rank = numerical_rank(coboundary_matrix(sheaf))
    return sheaf.dim0 - rank, sheaf.dim1 - rank


def diffuse(
    sheaf: Sheaf,
    x0,
    alpha: float = 1.0,
    t_max: float = 1e4,
    *,
    velocity_tol: float | None = 1e-10,
    stride: int = 1,
    **kwargs,
) -> Trajectory:
    """Integrate sheaf diffusion ``dx/dt = -alpha L x``.

    The trajectory carries an ``energy`` monitor (half squared discrepancy).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x0 = sheaf.as_cochain0(x0)
    d = coboundary_matrix(sheaf)
    lap = d.T @ d

    def monitor(t, x):
        r = d @ x
        return {"energy": 0.5 * float(r @ r)}

    return integrate(
        lambda x: -alpha * (lap @ x),
        x0,
        t_max=t_max,
        velocity_tol=velocity_tol,
        stride=stride,
        monitor=monitor,
        lipschitz=alpha * _spectral_norm(lap),
        **kwargs,
    )


def _spectral_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2)) if m.size else 0.0


def build_sheaf(
    vertices: Mapping,
    edges: Sequence,
    restrictions: Mapping,
) -> Sheaf:
    """Convenience constructor.

    ``vertices`` maps id -> dim, ``edges`` is a sequence of
    ``(edge_id, tail, head, dim)`` and ``restrictions`` maps
    ``(vertex, edge)`` -> matrix-like.
    """
    graph = Graph(tuple(vertices), tuple((e, t, h) for e, t, h, _ in edges))
    return Sheaf(
        graph,
        dict(vertices),
        {e: d for e, _, _, d in edges},
        {k: _as_matrix(m) for k, m in restrictions.items()},
    )


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim == 0:
        return m.reshape(1, 1)
    if m.ndim != 2:
        raise ConformanceError(f"restriction map must be a scalar or a 2-D matrix, got shape {m.shape}")
    return m
