"""Report figures written straight to PNG files (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection

# no version string in the PNG so identical figures give identical bytes
_METADATA = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_METADATA)
    plt.close(fig)


def plot_curves(path, curves: dict, xlabel: str, ylabel: str, title: str = "", logy: bool = False, markers=False):
    """One line per ``label -> (x, y)`` entry."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in curves.items():
        ax.plot(x, y, "o-" if markers else "-", label=label, ms=4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_spectra(path, spectra: dict, title: str = "normalized singular values"):
    curves = {k: (np.arange(1, len(s) + 1), np.asarray(s)) for k, s in spectra.items()}
    plot_curves(path, curves, "index", "sigma_k / sigma_1", title, logy=True, markers=True)


def plot_field(path, mesh, Q, dofs=None, title: str = ""):
    """Cell values painted on the (possibly warped) physical mesh."""
    nodes = mesh.ref_nodes if dofs is None else dofs.phys_nodes
    polys = nodes[mesh.cells]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    coll = PolyCollection(polys, array=np.asarray(Q), cmap="viridis", edgecolors="face", linewidths=0.2)
    ax.add_collection(coll)
    x_lo, x_hi, t_lo, t_hi = mesh.bounds
    ax.set_xlim(x_lo, x_hi)
    ax.set_ylim(t_lo, t_hi)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.colorbar(coll, ax=ax)
    fig.tight_layout()
    _save(fig, path)
