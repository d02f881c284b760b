"""Directional stubbornness: clamped opinion directions and the free-opinion sheaf.

Each vertex stalk splits orthogonally into stubborn directions ``S_v`` (given
as an orthonormal basis) and free directions ``T_v`` (its complement). Free
opinions ``y`` live in the concatenation of the ``T_v`` coordinates, stubborn
values ``u`` in the concatenation of the ``S_v`` coordinates, and the total
opinion is ``x = iota_S u + iota_Q y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConformanceError, SolvabilityError, ValidationError
from .integrate import Trajectory, integrate
from .sheaf import (
    Sheaf,
    betti_numbers,
    coboundary_matrix,
    laplacian,
    numerical_rank,
    null_space,
    pinv,
)

ORTHONORMAL_TOL = 1e-10
AGREEMENT_TOL = 1e-9


def complement_basis(s: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``span(s)``.

    Columns come from greedily deflating the standard basis, so a coordinate
    aligned ``s`` yields exactly the remaining coordinate vectors.
    """
    n, k = s.shape
    resid = np.eye(n) - s @ s.T
    out = []
    for _ in range(n - k):
        norms = np.linalg.norm(resid, axis=0)
        j = int(np.argmax(norms))
        q = resid[:, j] / norms[j]
        out.append(q)
        resid = resid - np.outer(q, q @ resid)
    return np.array(out).T.reshape(n, n - k)


@dataclass(frozen=True)
class StubbornSpec:
    """Per-vertex stubborn subspaces and the values clamped on them.

    ``bases[v]`` is a ``dim_v x k_v`` matrix with orthonormal columns and
    ``values[v]`` a length ``k_v`` vector. Vertices absent from ``bases`` are
    fully free.
    """

    bases: Mapping = field(default_factory=dict)
    values: Mapping = field(default_factory=dict)

    def __post_init__(self):
        bases, values = {}, {}
        for v, b in self.bases.items():
            b = np.array(b, dtype=float)
            if b.ndim != 2:
                raise ValidationError(f"stubborn basis at {v!r} must be a matrix")
            gram = b.T @ b
            if not np.allclose(gram, np.eye(b.shape[1]), rtol=0, atol=ORTHONORMAL_TOL):
                raise ValidationError(f"stubborn basis at {v!r} is not orthonormal")
            val = np.array(self.values.get(v, np.zeros(b.shape[1])), dtype=float).ravel()
            if val.size != b.shape[1]:
                raise ConformanceError(
                    f"stubborn values at {v!r} have length {val.size}, expected {b.shape[1]}"
                )
            b.setflags(write=False)
            val.setflags(write=False)
            bases[v], values[v] = b, val
        unknown = set(self.values) - set(self.bases)
        if unknown:
            raise ValidationError(f"stubborn values given for vertices without a basis: {sorted(map(str, unknown))}")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "values", values)

    @classmethod
    def coordinates(cls, sheaf: Sheaf, directions: Mapping, x=None) -> "StubbornSpec":
        """Clamp coordinate axes: ``directions[v]`` lists stalk indices.

        Values are read from ``x`` when given, else zero.
        """
        bases, values = {}, {}
        xb = sheaf.split0(x) if x is not None else None
        for v, idx in directions.items():
            eye = np.eye(sheaf.vertex_dims[v])
            b = eye[:, list(idx)]
            bases[v] = b
            values[v] = b.T @ xb[v] if xb is not None else np.zeros(b.shape[1])
        return cls(bases, values)

    @classmethod
    def from_cochain(cls, sheaf: Sheaf, bases: Mapping, x) -> "StubbornSpec":
        xb = sheaf.split0(x)
        return cls(bases, {v: np.asarray(b, float).T @ xb[v] for v, b in bases.items()})

    def with_values(self, values: Mapping) -> "StubbornSpec":
        return StubbornSpec(self.bases, values)

    def basis(self, sheaf: Sheaf, v) -> np.ndarray:
        if v in self.bases:
            return self.bases[v]
        return np.zeros((sheaf.vertex_dims[v], 0))

    def stubborn_vertices(self) -> set:
        """The set ``U`` of vertices with at least one clamped direction."""
        return {v for v, b in self.bases.items() if b.shape[1] > 0}

    def check(self, sheaf: Sheaf) -> None:
        for v, b in self.bases.items():
            if v not in sheaf.vertex_dims:
                raise ValidationError(f"stubborn spec names unknown vertex {v!r}")
            if b.shape[0] != sheaf.vertex_dims[v]:
                raise ConformanceError(
                    f"stubborn basis at {v!r} has {b.shape[0]} rows, stalk has dim {sheaf.vertex_dims[v]}"
                )


@dataclass(frozen=True)
class Frame:
    """The orthogonal splitting ``C^0 = C^0(S) + C^0(Q)`` as explicit matrices.

    ``iota_s`` (``n x nS``) and ``iota_q`` (``n x nQ``) embed stubborn and free
    coordinates; their transposes are the projections ``P_S`` and ``P_Q``.
    """

    sheaf: Sheaf
    spec: StubbornSpec
    iota_s: np.ndarray
    iota_q: np.ndarray
    free_bases: dict
    s_dims: dict
    q_dims: dict

    @classmethod
    def build(cls, sheaf: Sheaf, spec: StubbornSpec) -> "Frame":
        spec.check(sheaf)
        s_cols, q_cols = [], []
        free_bases, s_dims, q_dims = {}, {}, {}
        for v in sheaf.graph.vertices:
            s = spec.basis(sheaf, v)
            t = np.eye(sheaf.vertex_dims[v]) if s.shape[1] == 0 else complement_basis(s)
            free_bases[v] = t
            s_dims[v], q_dims[v] = s.shape[1], t.shape[1]
            sl = sheaf.vslice(v)
            for cols, block in ((s_cols, s), (q_cols, t)):
                emb = np.zeros((sheaf.dim0, block.shape[1]))
                emb[sl, :] = block
                cols.append(emb)
        iota_s = np.hstack(s_cols) if s_cols else np.zeros((sheaf.dim0, 0))
        iota_q = np.hstack(q_cols) if q_cols else np.zeros((sheaf.dim0, 0))
        return cls(sheaf, spec, iota_s, iota_q, free_bases, s_dims, q_dims)

    @property
    def n_s(self) -> int:
        return self.iota_s.shape[1]

    @property
    def n_q(self) -> int:
        return self.iota_q.shape[1]

    def u(self) -> np.ndarray:
        """Stubborn values stacked in ``C^0(S)`` order."""
        parts = [self.spec.values[v] for v in self.sheaf.graph.vertices if self.s_dims[v] > 0]
        return np.concatenate(parts) if parts else np.zeros(0)

    def p_s(self, x) -> np.ndarray:
        return self.iota_s.T @ self.sheaf.as_cochain0(x)

    def p_q(self, x) -> np.ndarray:
        return self.iota_q.T @ self.sheaf.as_cochain0(x)

    def total(self, y, u=None) -> np.ndarray:
        u = self.u() if u is None else u
        return self.iota_s @ u + self.iota_q @ y


@dataclass(frozen=True)
class BlockLaplacian:
    """Laplacian blocks in the rotated (stubborn, free) frame."""

    frame: Frame
    L: np.ndarray
    L_SS: np.ndarray
    L_SQ: np.ndarray
    L_QS: np.ndarray
    L_QQ: np.ndarray

    def assembled(self) -> np.ndarray:
        return np.block([[self.L_SS, self.L_SQ], [self.L_QS, self.L_QQ]])

    def rotated(self) -> np.ndarray:
        r = np.hstack([self.frame.iota_s, self.frame.iota_q])
        return r.T @ self.L @ r


def free_sheaf(sheaf: Sheaf, frame: Frame) -> Sheaf:
    maps = {}
    for (v, e), m in sheaf.restrictions.items():
        maps[(v, e)] = m @ frame.free_bases[v]
    return Sheaf(sheaf.graph, frame.q_dims, sheaf.edge_dims, maps)


def build_free_sheaf(sheaf: Sheaf, spec: StubbornSpec) -> tuple[Sheaf, BlockLaplacian]:
    """Return the free-opinion sheaf and the block decomposition of ``L``."""
    frame = Frame.build(sheaf, spec)
    lap = laplacian(sheaf)
    s, q = frame.iota_s, frame.iota_q
    blocks = BlockLaplacian(
        frame=frame,
        L=lap,
        L_SS=s.T @ lap @ s,
        L_SQ=s.T @ lap @ q,
        L_QS=q.T @ lap @ s,
        L_QQ=q.T @ lap @ q,
    )
    return free_sheaf(sheaf, frame), blocks


@dataclass
class PoissonSolution:
    y: np.ndarray
    x: np.ndarray
    residual: float
    formula_gap: float
    candidates: dict


def solve_poisson(blocks: BlockLaplacian, u=None, y0=None, *, check: bool = True) -> PoissonSolution:
    """Equilibrium of the forced free-opinion flow nearest to ``y0``.

    Computes the limit three ways (correction of the full-state gradient,
    kernel projection plus minimum-norm particular solution, correction of
    the free residual) and raises :class:`SolvabilityError` if they disagree
    or the Poisson residual is not small.
    """
    frame = blocks.frame
    u = frame.u() if u is None else np.asarray(u, dtype=float)
    y0 = np.zeros(frame.n_q) if y0 is None else np.asarray(y0, dtype=float)
    if u.shape != (frame.n_s,) or y0.shape != (frame.n_q,):
        raise ConformanceError(f"expected u of length {frame.n_s} and y0 of length {frame.n_q}")
    lq = blocks.L_QQ
    lq_pinv = pinv(lq)
    forcing = blocks.L_QS @ u
    x0 = frame.total(y0, u)

    via_full = y0 - lq_pinv @ (frame.iota_q.T @ (blocks.L @ x0))
    via_projection = (y0 - lq_pinv @ (lq @ y0)) - lq_pinv @ forcing
    via_correction = y0 - lq_pinv @ (lq @ y0 + forcing)
    cands = {"full_gradient": via_full, "projection": via_projection, "correction": via_correction}

    gap = max(
        np.linalg.norm(via_full - via_projection),
        np.linalg.norm(via_full - via_correction),
        np.linalg.norm(via_projection - via_correction),
    )
    y = via_correction
    residual = float(np.linalg.norm(lq @ y + forcing))
    if check:
        scale = max(1.0, np.linalg.norm(lq) * np.linalg.norm(y), np.linalg.norm(forcing))
        if residual > AGREEMENT_TOL * scale:
            raise SolvabilityError(f"Poisson residual {residual:.3e} exceeds tolerance")
        if gap > AGREEMENT_TOL * max(1.0, np.linalg.norm(y)):
            raise SolvabilityError(f"limit formulas disagree by {gap:.3e}")
    return PoissonSolution(y=y, x=frame.total(y, u), residual=residual, formula_gap=float(gap), candidates=cands)


def constrained_diffuse(
    blocks: BlockLaplacian,
    u=None,
    y0=None,
    alpha: float = 1.0,
    t_max: float = 1e4,
    *,
    velocity_tol: float | None = 1e-10,
    stride: int = 1,
    **kwargs,
) -> Trajectory:
    """Integrate ``dy/dt = -alpha (L_QQ y + L_QS u)``.

    States are free coordinates ``y``; the ``x`` monitor carries the total
    opinion and ``energy`` the half squared discrepancy.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    frame = blocks.frame
    u = frame.u() if u is None else np.asarray(u, dtype=float)
    y0 = np.zeros(frame.n_q) if y0 is None else np.asarray(y0, dtype=float)
    forcing = blocks.L_QS @ u
    lq = blocks.L_QQ
    d = coboundary_matrix(frame.sheaf)

    def monitor(t, y):
        x = frame.total(y, u)
        r = d @ x
        return {"x": x, "energy": 0.5 * float(r @ r)}

    return integrate(
        lambda y: -alpha * (lq @ y + forcing),
        y0,
        t_max=t_max,
        velocity_tol=velocity_tol,
        stride=stride,
        monitor=monitor,
        lipschitz=alpha * (float(np.linalg.norm(lq, 2)) if lq.size else 0.0),
        **kwargs,
    )


@dataclass
class Obstruction:
    is_compatible: bool
    residual: float
    tolerance: float


def compatibility_obstruction(sheaf: Sheaf, spec: StubbornSpec, u=None, tol: float | None = None) -> Obstruction:
    """Test whether the clamped values extend to a global section.

    The coboundary of the lifted stubborn values is projected off the image
    of the free coboundary; what remains represents the obstruction class and
    its squared norm equals the minimal attainable ``||delta x||^2``.
    """
    frame = Frame.build(sheaf, spec)
    u = frame.u() if u is None else np.asarray(u, dtype=float)
    d = coboundary_matrix(sheaf)
    r = d @ (frame.iota_s @ u)
    dq = d @ frame.iota_q
    leftover = r - dq @ (pinv(dq) @ r) if dq.size else r
    res = float(np.linalg.norm(leftover))
    if tol is None:
        tol = 1e-8 * float(np.linalg.norm(r))
    return Obstruction(is_compatible=res <= tol, residual=res, tolerance=tol)


@dataclass
class ExactSequenceReport:
    h0_free: int
    h0_full: int
    c0_stubborn: int
    h1_free: int
    h1_full: int
    alternating_sum: int
    injective: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def exact_sequence_audit(sheaf: Sheaf, spec: StubbornSpec) -> ExactSequenceReport:
    """Dimensions of ``0 -> H0(Q) -> H0(F) -> C0(S) -> H1(Q) -> H1(F) -> 0``.

    Raises AssertionError if the alternating sum is nonzero or the first map
    fails to be injective.
    """
    q_sheaf, blocks = build_free_sheaf(sheaf, spec)
    frame = blocks.frame
    h0q, h1q = betti_numbers(q_sheaf)
    h0f, h1f = betti_numbers(sheaf)
    c0s = frame.n_s
    alt = h0q - h0f + c0s - h1q + h1f

    sections = null_space(coboundary_matrix(q_sheaf))
    image = frame.iota_q @ sections
    d = coboundary_matrix(sheaf)
    lands_in_kernel = sections.shape[1] == 0 or np.linalg.norm(d @ image) <= 1e-9 * max(1.0, np.linalg.norm(d))
    injective = bool(lands_in_kernel and numerical_rank(image) == sections.shape[1])

    report = ExactSequenceReport(h0q, h0f, c0s, h1q, h1f, alt, injective)
    assert alt == 0, f"alternating dimension sum is {alt}: {report}"
    assert injective, "H0(Q) -> H0(F) is not injective"
    return report
