"""Figures written next to the CSV output of the experiment commands."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "figure.figsize": (6.0, 3.8),
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_test1(rows: list[dict], path, label: str = "") -> None:
    """Measured and filtered sample variance against sample index."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        n = [r["sample_index"] for r in rows]
        ax.plot(n, [r["v_measured_mean"] for r in rows], ".", ms=3, label="input variance")
        ax.plot(n, [r["v_filtered_mean"] for r in rows], ".", ms=3, label=f"filtered {label}".strip())
        ax.plot(n, [r["v_target"] for r in rows], "k--", lw=0.8, label="target")
        ax.set_yscale("log")
        ax.set_xlabel("sample index (expected input variance)")
        ax.set_ylabel("variance")
        ax.legend()
        _save(fig, path)


def plot_test2(rows: list[dict], path, label: str = "") -> None:
    """After-log variance before and after filtering against the Poisson rate."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        lam = [r["lambda"] for r in rows]
        ax.plot(lam, [r["u_expected"] for r in rows], "-", color="0.6", label="1/lambda")
        ax.plot(lam, [r["u_measured"] for r in rows], ".", ms=3, label="unfiltered")
        ax.plot(lam, [r["u_filtered"] for r in rows], ".", ms=3, label=f"filtered {label}".strip())
        ax.plot(lam, [r["u_target"] for r in rows], "k--", lw=0.8, label="target")
        ax.set_yscale("log")
        ax.set_xlabel("Poisson rate")
        ax.set_ylabel("after-log variance")
        ax.legend()
        _save(fig, path)


def plot_tables(rows: list[dict], path) -> None:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
        it = [r["iteration"] for r in rows]
        for key in rows[0]:
            if key.startswith("p_max_"):
                ax1.plot(it, [r[key] for r in rows], "o-", ms=3, label=key[6:])
            elif key.startswith("r_max_"):
                ax2.plot(it[1:], [r[key] for r in rows[1:]], "o-", ms=3, label=key[6:])
        ax1.set_xlabel("passes")
        ax1.set_ylabel("max cumulative VRP")
        ax2.set_xlabel("passes")
        ax2.set_ylabel("max incremental VRP")
        ax1.legend()
        ax2.legend()
        _save(fig, path)


def plot_rasters(images: dict, path, vmin=None, vmax=None) -> None:
    """Side-by-side greyscale panels, one per ``{title: raster}`` entry."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(images), figsize=(3.0 * len(images), 3.2))
        if len(images) == 1:
            axes = [axes]
        for ax, (title, img) in zip(axes, images.items()):
            ax.imshow(img, cmap="gray", vmin=vmin, vmax=vmax, interpolation="nearest")
            ax.set_title(title)
            ax.set_axis_off()
        _save(fig, path)
