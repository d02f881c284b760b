"""PNG figures for run outputs, drawn without touching the global pyplot state."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def plot_series(t, series: Mapping[str, np.ndarray], path, *, title: str = "", ylabel: str = "",
                logy: bool = False) -> Path:
    fig = Figure(figsize=(6.0, 3.6), dpi=110)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    t = np.asarray(t, dtype=float)
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        if logy:
            keep = y > 0
            ax.semilogy(t[keep], y[keep], label=name)
        else:
            ax.plot(t, y, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    return path


def run_figures(table: Mapping[str, np.ndarray], outdir) -> list[Path]:
    """Draw whichever standard panels the columns of ``table`` support."""
    outdir = Path(outdir)
    t = table["t"]
    made = []
    energy = "psi" if "psi" in table else "energy" if "energy" in table else "objective" if "objective" in table else None
    if energy:
        made.append(plot_series(t, {energy: table[energy]}, outdir / "energy.png",
                                title="disagreement energy", ylabel=energy, logy=True))
    if "delta_fro" in table:
        made.append(plot_series(t, {"|delta|_F": table["delta_fro"]}, outdir / "frobenius.png",
                                title="restriction map norm", ylabel="Frobenius norm"))
    ratios = {k: table[k] for k in ("ratio_lambda", "ratio_mu") if k in table}
    if ratios:
        made.append(plot_series(t, ratios, outdir / "ratios.png", title="dissipation ratios", ylabel="ratio"))
    return made
