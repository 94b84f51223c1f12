"""Figures written next to the CLI reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import GridFunction  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_grid(g: GridFunction, path: str | Path, title: str = "", overlay: GridFunction | None = None) -> Path:
    """Line plot in one dimension, image in two; higher dimensions show the middle slice."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if g.d == 1:
        x = g.domain.axis_coords(0)
        ax.plot(x, g.values, lw=1.2, label="field")
        if overlay is not None:
            ax.plot(x, overlay.values, lw=1.0, ls="--", label="input")
            ax.legend()
        ax.set_xlabel("x")
    else:
        vals = g.values
        while vals.ndim > 2:
            vals = vals[..., vals.shape[-1] // 2]
        lo, hi = g.domain.origin, g.domain.upper
        im = ax.imshow(vals.T, origin="lower", extent=(lo[0], hi[0], lo[1], hi[1]), cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.set_title(title)
    return _save(fig, path)


def plot_check_summary(reports: dict, path: str | Path) -> Path:
    """Worst slack over tolerance per check; bars above 1 mark points beyond tolerance."""
    names = sorted(reports)
    ratios = []
    for n in names:
        r = reports[n]
        tol = r["tolerance_used"]
        ratios.append(r["violation_quantiles"]["99"] / tol if tol > 0 else r["violation_quantiles"]["99"])
    colors = ["tab:green" if reports[n]["pass"] else "tab:red" for n in names]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(names)), 4.5))
    ax.bar(range(len(names)), ratios, color=colors)
    ax.axhline(1.0, color="k", lw=0.8, ls=":")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("99th-percentile slack / tolerance")
    return _save(fig, path)


def plot_continuity(run: dict, path: str | Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4.2))
    j = np.asarray(run["j"], dtype=float)
    for key in ("w11_gap", "e_j", "modulus_gap", "tail_j"):
        vals = np.maximum(np.asarray(run[key], dtype=float), 1e-300)
        a1.loglog(j, vals, marker="o", label=key)
    if run.get("tau_floor"):
        a1.axhline(run["tau_floor"], color="k", ls=":", lw=0.8, label="floor")
    a1.set_xlabel("j")
    a1.legend(fontsize=8)
    curve = np.asarray(run["delta_curve"], dtype=float)
    if curve.size:
        a2.plot(curve[:, 0], curve[:, 1], marker="s")
        a2.set_xscale("log")
    a2.set_xlabel("delta")
    a2.set_ylabel("truncation error on K")
    return _save(fig, path)


def plot_bench(rows: Sequence[dict], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r["engine"] for r in rows], [r["seconds"] for r in rows], color="tab:blue")
    ax.set_yscale("log")
    ax.set_ylabel("seconds")
    return _save(fig, path)
