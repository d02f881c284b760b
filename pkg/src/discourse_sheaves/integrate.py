"""Adaptive Runge-Kutta driver shared by every flow in the package.

All flows here are autonomous gradient systems, so the driver steps scipy's
Dormand-Prince 5(4) pair one accepted step at a time and watches the
velocity norm to decide when the state has come to rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import RK45

RTOL = 1e-8
ATOL = 1e-10
VELOCITY_TOL = 1e-10
T_MAX = 1e4
MAX_STEPS = 500_000
RTOL_FLOOR = 1e-13

CONVERGED = "converged"
T_MAX_REACHED = "t_max"
DIVERGED = "diverged"
FAILED = "failed"


@dataclass
class Trajectory:
    """Time-stamped states with monitored scalars.

    ``states[k]`` is the integrator state at ``t[k]``; ``monitors`` maps a
    monitor name to an array whose first axis is aligned with ``t``.
    """

    t: np.ndarray
    states: np.ndarray
    monitors: dict[str, np.ndarray] = field(default_factory=dict)
    status: str = CONVERGED
    message: str = ""
    stride: int = 1
    velocity: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def __len__(self) -> int:
        return len(self.t)


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    z0: np.ndarray,
    *,
    t_max: float = T_MAX,
    rtol: float = RTOL,
    atol: float = ATOL,
    velocity_tol: float | None = VELOCITY_TOL,
    consecutive: int = 1,
    stride: int = 1,
    monitor: Callable[[float, np.ndarray], Mapping[str, object]] | None = None,
    ceiling: Callable[[np.ndarray], str | None] | None = None,
    max_steps: int = MAX_STEPS,
    lipschitz: float = 1.0,
) -> Trajectory:
    """Integrate ``dz/dt = rhs(z)`` from ``z0`` until rest or ``t_max``.

    Rest is declared once ``||rhs(z)|| < velocity_tol`` on ``consecutive``
    accepted steps in a row; pass ``velocity_tol=None`` to always run to
    ``t_max``. ``ceiling`` is polled after every step and a non-None return
    stops the run with status ``"diverged"`` and that message.

    Near rest an explicit method sits on its stability boundary and the state
    jitters at roughly the ``atol`` level, which ``rhs`` amplifies by its
    Lipschitz constant. Both tolerances are therefore tightened (``atol`` to
    ``velocity_tol / (100 L)``, ``rtol`` to ``velocity_tol / (10 L |z0|)``,
    floored at ``1e-13``) so the velocity test can actually be met.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    z0 = np.array(z0, dtype=float)
    if velocity_tol is not None:
        lip = max(1.0, lipschitz)
        atol = min(atol, velocity_tol / (100.0 * lip))
        scale = max(1.0, float(np.linalg.norm(z0)))
        rtol = max(min(rtol, velocity_tol / (10.0 * lip * scale)), RTOL_FLOOR)

    ts: list[float] = []
    zs: list[np.ndarray] = []
    mons: dict[str, list] = {}

    def record(t: float, z: np.ndarray) -> None:
        ts.append(t)
        zs.append(z.copy())
        if monitor is not None:
            for key, value in monitor(t, z).items():
                mons.setdefault(key, []).append(value)

    def finish(status: str, message: str, speed: float) -> Trajectory:
        return Trajectory(
            t=np.asarray(ts),
            states=np.asarray(zs).reshape(len(zs), z0.size),
            monitors={k: np.asarray(v) for k, v in mons.items()},
            status=status,
            message=message,
            stride=stride,
            velocity=speed,
        )

    record(0.0, z0)
    speed = float(np.linalg.norm(rhs(z0)))
    if velocity_tol is not None and speed < velocity_tol:
        return finish(CONVERGED, "initial state is stationary", speed)

    solver = RK45(lambda t, z: rhs(z), 0.0, z0, t_bound=t_max, rtol=rtol, atol=atol)
    calm = 0
    steps = 0
    while solver.status == "running":
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            if len(ts) == 0 or ts[-1] != solver.t:
                record(solver.t, solver.y)
            return finish(FAILED, f"integrator failed: {msg}", speed)
        z = solver.y
        speed = float(np.linalg.norm(rhs(z)))
        calm = calm + 1 if velocity_tol is not None and speed < velocity_tol else 0
        done = calm >= consecutive
        blown = ceiling(z) if ceiling is not None else None
        if done or blown or solver.status != "running" or steps % stride == 0:
            record(solver.t, z)
        if blown:
            return finish(DIVERGED, blown, speed)
        if done:
            return finish(CONVERGED, f"velocity {speed:.3e} at t={solver.t:.6g}", speed)
        if steps >= max_steps:
            if ts[-1] != solver.t:
                record(solver.t, z)
            return finish(T_MAX_REACHED, f"step budget {max_steps} exhausted; velocity {speed:.3e}", speed)
    return finish(T_MAX_REACHED, f"t_max={t_max} reached; residual velocity {speed:.3e}", speed)
