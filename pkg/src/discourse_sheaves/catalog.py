"""Small hand-checkable sheaves used by tests, the CLI and the bundled models."""

from __future__ import annotations

import numpy as np

from .free_opinions import StubbornSpec
from .sheaf import Sheaf, build_sheaf

FOUR_CYCLE_X0 = {"v1": [2.0], "v2": [1.0, -2.0], "v3": [0.0], "v4": [0.0, 0.0]}
FOUR_CYCLE_SECTION = {"v1": [1.0], "v2": [0.0, -1.0], "v3": [-1.0], "v4": [0.0, -1.0]}
# first coordinate of v4 clamped to 1
CLAMPED_X0 = {"v1": [2.0], "v2": [1.0, -2.0], "v3": [0.0], "v4": [1.0, 0.0]}
CLAMPED_LIMIT = {"v1": [1.25], "v2": [0.0, -1.25], "v3": [-1.25], "v4": [1.0, -0.25]}
ADAPTED_MAPS = {
    ("v1", "e12"): [[-20.0 / 9.0]],
    ("v1", "e41"): [[0.5], [0.5]],
    ("v2", "e12"): [[-8.0 / 9.0, 16.0 / 9.0]],
    ("v2", "e23"): [[1.2, 0.6]],
    ("v3", "e23"): [[1.0]],
    ("v3", "e34"): [[-1.0]],
}


def four_cycle() -> Sheaf:
    """Four agents on a cycle with mixed stalk dimensions and H^0 of dimension one."""
    return build_sheaf(
        {"v1": 1, "v2": 2, "v3": 1, "v4": 2},
        [("e12", "v1", "v2", 1), ("e23", "v2", "v3", 1), ("e34", "v3", "v4", 1), ("e41", "v4", "v1", 2)],
        {
            ("v1", "e12"): [[-2.0]],
            ("v1", "e41"): [[1.0], [0.0]],
            ("v2", "e12"): [[-1.0, 2.0]],
            ("v2", "e23"): [[1.0, 1.0]],
            ("v3", "e23"): [[1.0]],
            ("v3", "e34"): [[-1.0]],
            ("v4", "e34"): [[1.0, -1.0]],
            ("v4", "e41"): [[1.0, -1.0], [1.0, 0.0]],
        },
    )


def four_cycle_clamp() -> StubbornSpec:
    """Clamp the first coordinate of ``v4`` to 1."""
    return StubbornSpec({"v4": np.array([[1.0], [0.0]])}, {"v4": [1.0]})


def four_cycle_adapting() -> list:
    """Every incidence except those at ``v4`` adapts."""
    return [inc for inc in four_cycle().incidences() if inc[0] != "v4"]


def single_edge(a=0.5, b=0.5, c=1.0) -> Sheaf:
    """Edge ``u -> v`` with ``F(u) = R^2``, ``F(v) = F(e) = R``."""
    return build_sheaf(
        {"u": 2, "v": 1},
        [("e", "u", "v", 1)],
        {("u", "e"): [[a, b]], ("v", "e"): [[c]]},
    )


def single_edge_clamp(value: float = 1.0) -> StubbornSpec:
    return StubbornSpec({"u": np.array([[1.0], [0.0]])}, {"u": [value]})


SINGLE_EDGE_X0 = {"u": [1.0, 1.0], "v": [-1.0]}


def scalar_edge(p: float = 1.0, q: float = 1.0) -> Sheaf:
    """Scalar edge ``u -> v`` with maps ``p`` at ``u`` and ``q`` at ``v``."""
    return build_sheaf({"u": 1, "v": 1}, [("e", "u", "v", 1)], {("u", "e"): [[p]], ("v", "e"): [[q]]})


def bundled_models() -> dict:
    """The models shipped in ``models/``, keyed by file stem."""
    from .io import Model
    from .joint import SCENARIOS, ScenarioPolicy
    from .structure import AdaptationSpec

    cyc = four_cycle()
    models = {
        "fig1": Model(cyc, cyc.stack0(FOUR_CYCLE_X0), parameters={"alpha": 1.0}),
        "fig2": Model(cyc, cyc.stack0(CLAMPED_X0), four_cycle_clamp(), parameters={"alpha": 1.0}),
        "fig3": Model(
            cyc,
            cyc.stack0(CLAMPED_X0),
            adaptation=AdaptationSpec(cyc.graph, frozenset(four_cycle_adapting())),
            parameters={"beta": 1.0},
        ),
    }
    edge = single_edge()
    for k, label in SCENARIOS.items():
        models[f"fig6_scenario{k}"] = Model(
            edge,
            edge.stack0(SINGLE_EDGE_X0),
            single_edge_clamp(),
            policy=ScenarioPolicy(default=label),
            parameters={"alpha": 1.0, "beta": 1.0},
        )
    scalar = scalar_edge()
    models["exC1"] = Model(
        scalar,
        scalar.stack0({"u": [1.0], "v": [2.0]}),
        StubbornSpec({"u": np.eye(1)}, {"u": [1.0]}),
        adaptation=AdaptationSpec(scalar.graph, frozenset({("u", "e")})),
        parameters={"alpha": 1.0, "beta": 1.0},
    )
    return models


def bundled_path(name: str):
    """Filesystem path of a bundled model file."""
    from importlib.resources import files

    return files("discourse_sheaves") / "models" / f"{name}.model"
