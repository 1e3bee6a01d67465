"""Report writers: a CSV table plus a PNG figure next to it."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0]) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return path


def _finish(fig, ax, path: Path) -> Path:
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_bench(rows, fits, path: str | Path) -> Path:
    """Check time against L, one series per (protocol, S), with the fitted lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    series = sorted({(r.protocol, r.S) for r in rows})
    for proto, S in series:
        pts = sorted((r.L, r.seconds) for r in rows if r.protocol == proto and r.S == S)
        xs = np.array([p[0] for p in pts], float)
        ys = np.array([p[1] for p in pts]) * 1e3
        (line,) = ax.plot(xs, ys, "o", ms=4, label=f"{proto}, S={S}")
        for f in fits:
            if f.protocol == proto and f.S == S:
                ax.plot(xs, (f.slope * xs + f.intercept) * 1e3, "-", color=line.get_color(), lw=1,
                        label=f"fit R²={f.r2:.3f}")
    ax.set_xlabel("published reports checked (L)")
    ax.set_ylabel("check time (ms)")
    return _finish(fig, ax, Path(path))


def plot_adoption(rows, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    grid = np.linspace(0, 1, 101)
    ax.plot(grid, grid**2, "-", color="0.5", lw=1, label="p²")
    ax.plot([r.p for r in rows], [r.fraction for r in rows], "o", label="detected fraction")
    ax.set_xlabel("adoption p")
    ax.set_ylabel("fraction of exposures detected")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    return _finish(fig, ax, Path(path))
