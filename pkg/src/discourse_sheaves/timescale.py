"""Effective spectral gaps along joint trajectories and the stagnation bounds they imply.

Everything here is post-processing over sampled quantities, so it works the
same on a live :class:`Trajectory` and on a table read back from CSV.
Infima are taken over the sampled grid only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .integrate import Trajectory

EQUILIBRIUM_TOL = 1e-12
BOUND_SLACK = 1e-9
MONOTONE_TOL = 1e-12

REQUIRED_COLUMNS = (
    "t",
    "dx_norm",
    "x_norm",
    "delta_fro",
    "x_disp",
    "delta_disp",
    "opinion_dissipation",
    "structure_dissipation",
)


def samples_from(source) -> dict:
    """Normalize a joint :class:`Trajectory` or a column mapping into arrays."""
    if isinstance(source, Trajectory):
        table = {"t": source.t, **source.monitors}
        table.setdefault("stride", source.stride)
    elif isinstance(source, Mapping):
        table = dict(source)
    else:
        raise TypeError("expected a Trajectory or a mapping of columns")
    missing = [c for c in REQUIRED_COLUMNS if c not in table]
    if missing:
        raise ValueError(f"trajectory lacks columns {missing}")
    out = {k: np.asarray(v, dtype=float) for k, v in table.items() if k in REQUIRED_COLUMNS or k == "mu_weighted"}
    if len(out["t"]) < 2:
        raise ValueError("need at least two samples")
    out["stride"] = int(table.get("stride", 1))
    return out


@dataclass
class GapEstimate:
    lambda_eff: float
    mu_eff: float
    B_x: float
    B_delta: float
    initial_discrepancy: float
    horizon: float
    stride: int
    equilibrium_reached: bool
    undefined: bool
    mu_formula_gap: float
    ratio_lambda: np.ndarray = field(repr=False)
    ratio_mu: np.ndarray = field(repr=False)
    used: np.ndarray = field(repr=False)


def estimate_gaps(source, tol: float = EQUILIBRIUM_TOL) -> GapEstimate:
    """Sampled infima of the opinion and structure dissipation ratios.

    Samples with ``|delta x| <= tol`` are at equilibrium and skipped. The
    weighted-sum form of the structure ratio is cross-checked against the
    masked-gradient form when both are available.
    """
    s = samples_from(source)
    dx2 = s["dx_norm"] ** 2
    used = s["dx_norm"] > tol
    with np.errstate(divide="ignore", invalid="ignore"):
        rl = np.where(used, s["opinion_dissipation"] / dx2, np.nan)
        rm = np.where(used, s["structure_dissipation"] / dx2, np.nan)
    gap = 0.0
    if "mu_weighted" in s and used.any():
        a, b = s["structure_dissipation"][used], s["mu_weighted"][used]
        gap = float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)))
    undefined = not used.any()
    return GapEstimate(
        lambda_eff=float("nan") if undefined else float(np.nanmin(rl)),
        mu_eff=float("nan") if undefined else float(np.nanmin(rm)),
        B_x=float(s["x_norm"].max()),
        B_delta=float(s["delta_fro"].max()),
        initial_discrepancy=float(s["dx_norm"][0]),
        horizon=float(s["t"][-1]),
        stride=s["stride"],
        equilibrium_reached=bool((~used).any()),
        undefined=undefined,
        mu_formula_gap=gap,
        ratio_lambda=rl,
        ratio_mu=rm,
        used=used,
    )


@dataclass
class BoundReport:
    quantity: str
    observed: float
    bound: float
    bound_horizon_free: float
    slack: float
    applicable: bool
    passed: bool
    premise_holds: bool
    hypotheses: dict
    note: str = ""
    sharpened: float | None = None
    sharpened_label: str = ""

    @property
    def confirmed(self) -> bool:
        """Bound satisfied and its exponential-decay premise verified at the samples."""
        return self.applicable and self.passed and self.premise_holds


def _decay_premise(s: dict, rate: float) -> bool:
    d0 = s["dx_norm"][0]
    env = d0 * np.exp(-rate * s["t"])
    return bool(np.all(s["dx_norm"] <= env * (1 + 1e-9) + 1e-12))


def _report(quantity, observed, prefactor, rate, horizon, gap_name, gap, hyp, s, speed):
    if speed == 0.0 or s["dx_norm"][0] == 0.0:
        return BoundReport(quantity, observed, 0.0, 0.0, -observed, True, observed <= BOUND_SLACK, True, hyp,
                           note="variable is frozen or the initial state is an equilibrium")
    if not (gap > 0) or not math.isfinite(gap):
        return BoundReport(quantity, observed, math.inf, math.inf, math.inf, False, True, False, hyp,
                           note=f"{gap_name} is not positive on the sampled window; bound inapplicable"
                           + ("; use the regularized a-priori bounds instead" if gap_name == "mu_eff" else ""))
    free = prefactor / rate
    # expm1 keeps the bound near prefactor * T when the sampled gap is tiny
    bound = prefactor * (-math.expm1(-rate * horizon)) / rate
    slack = bound - observed
    passed = slack >= -BOUND_SLACK * max(bound, 1.0)
    return BoundReport(quantity, observed, bound, free, slack, True, passed, _decay_premise(s, rate), hyp)


def check_structural_stagnation(source, alpha: float, beta: float, gaps: GapEstimate | None = None) -> BoundReport:
    """Displacement of the restriction maps against the slow-structure bound."""
    s = samples_from(source)
    g = gaps or estimate_gaps(source)
    hyp = {"B_x": g.B_x, "lambda_eff": g.lambda_eff, "T": g.horizon, "stride": g.stride, "alpha": alpha, "beta": beta}
    observed = float(s["delta_disp"][-1])
    if alpha <= 0:
        return BoundReport("structure", observed, math.inf, math.inf, math.inf, False, True, False, hyp,
                           note="alpha must be positive for this bound")
    rep = _report("structure", observed, beta * g.B_x * g.initial_discrepancy, alpha * g.lambda_eff, g.horizon,
                  "lambda_eff", g.lambda_eff, hyp, s, beta)
    if rep.applicable and rep.bound > 0 and g.used.any():
        ratios = g.ratio_lambda[g.used]
        if np.all(np.diff(ratios) <= MONOTONE_TOL * np.maximum(1.0, ratios[:-1])):
            lam = g.lambda_eff
            stop = math.sqrt(float(s["opinion_dissipation"][-1]))
            rep.sharpened = beta * g.B_x / (alpha * lam) * (g.initial_discrepancy - stop / math.sqrt(lam))
            rep.sharpened_label = "conditional: assumes the sampled infimum is attained at T"
    return rep


def check_opinion_stagnation(source, alpha: float, beta: float, gaps: GapEstimate | None = None) -> BoundReport:
    """Displacement of the opinions against the slow-opinion bound."""
    s = samples_from(source)
    g = gaps or estimate_gaps(source)
    hyp = {"B_delta": g.B_delta, "mu_eff": g.mu_eff, "T": g.horizon, "stride": g.stride, "alpha": alpha, "beta": beta}
    observed = float(s["x_disp"][-1])
    if beta <= 0:
        return BoundReport("opinion", observed, math.inf, math.inf, math.inf, False, True, False, hyp,
                           note="beta must be positive for this bound")
    return _report("opinion", observed, alpha * g.B_delta * g.initial_discrepancy, beta * g.mu_eff, g.horizon,
                   "mu_eff", g.mu_eff, hyp, s, alpha)


def regime_thresholds(epsilon: float, lambda_eff: float, mu_eff: float, B_x: float, B_delta: float,
                      initial_discrepancy: float) -> tuple[float, float]:
    """Rate ratios below / above which structure / opinions move by at most ``epsilon``.

    Returns ``(rho_minus, rho_plus)``: with ``beta/alpha <= rho_minus`` the
    structural bound is at most ``epsilon``; with ``beta/alpha >= rho_plus``
    the opinion bound is.
    """
    if not (epsilon > 0 and lambda_eff > 0 and mu_eff > 0):
        raise ValueError("epsilon and both gaps must be positive")
    d0 = initial_discrepancy
    lo = epsilon * lambda_eff / (B_x * d0)
    hi = B_delta * d0 / (epsilon * mu_eff)
    if epsilon ** 2 < B_x * B_delta * d0 ** 2 / (lambda_eff * mu_eff):
        assert lo < hi, (lo, hi)
    return lo, hi
