"""Random sheaves, stubborn specs and adaptation sets for property tests and sweeps."""

from __future__ import annotations

import numpy as np

from .free_opinions import StubbornSpec
from .sheaf import Graph, Sheaf
from .structure import AdaptationSpec


def random_graph(rng: np.random.Generator, n: int, extra_edges: int = 0, connected: bool = True) -> Graph:
    """Random tree on ``n`` vertices (if ``connected``) plus ``extra_edges`` chords."""
    vertices = [f"v{i}" for i in range(n)]
    pairs = set()
    if connected:
        for i in range(1, n):
            pairs.add((int(rng.integers(0, i)), i))
    candidates = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in pairs]
    if candidates and extra_edges:
        pick = rng.choice(len(candidates), size=min(extra_edges, len(candidates)), replace=False)
        pairs.update(candidates[k] for k in pick)
    edges = []
    for k, (i, j) in enumerate(sorted(pairs)):
        tail, head = (i, j) if rng.random() < 0.5 else (j, i)
        edges.append((f"e{k}", vertices[tail], vertices[head]))
    return Graph(tuple(vertices), tuple(edges))


def random_sheaf(
    rng: np.random.Generator,
    n: int = 4,
    extra_edges: int = 2,
    vertex_dims: tuple[int, int] = (1, 3),
    edge_dims: tuple[int, int] = (1, 2),
    scale: float = 1.0,
    graph: Graph | None = None,
) -> Sheaf:
    """Gaussian restriction maps with stalk dimensions drawn uniformly from the given ranges."""
    g = graph if graph is not None else random_graph(rng, n, extra_edges)
    vd = {v: int(rng.integers(vertex_dims[0], vertex_dims[1] + 1)) for v in g.vertices}
    ed = {e: int(rng.integers(edge_dims[0], edge_dims[1] + 1)) for e in g.edge_ids}
    maps = {(v, e): scale * rng.standard_normal((ed[e], vd[v])) for v, e in g.incidences()}
    return Sheaf(g, vd, ed, maps)


def random_cochain(rng: np.random.Generator, sheaf: Sheaf, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal(sheaf.dim0)


def random_orthonormal(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((n, 0))
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return q * np.sign(np.diag(r))


def random_stubborn(rng: np.random.Generator, sheaf: Sheaf, p: float = 0.4, aligned: bool = False) -> StubbornSpec:
    """Each vertex is stubborn with probability ``p`` in a random subspace of random dimension."""
    bases, values = {}, {}
    for v in sheaf.graph.vertices:
        d = sheaf.vertex_dims[v]
        if d == 0 or rng.random() >= p:
            continue
        k = int(rng.integers(1, d + 1))
        if aligned:
            b = np.eye(d)[:, sorted(rng.choice(d, size=k, replace=False))]
        else:
            b = random_orthonormal(rng, d, k)
        bases[v] = b
        values[v] = rng.standard_normal(k)
    return StubbornSpec(bases, values)


def random_adaptation(rng: np.random.Generator, sheaf: Sheaf, p: float = 0.5, symmetric: bool = False) -> AdaptationSpec:
    """Random adapting incidences; ``symmetric`` makes every edge Type S."""
    g = sheaf.graph
    inc = set()
    for e, t, h in g.edges:
        if symmetric:
            if rng.random() < p:
                inc |= {(t, e), (h, e)}
        else:
            inc |= {(w, e) for w in (t, h) if rng.random() < p}
    return AdaptationSpec(g, frozenset(inc))
