"""Optional figures for CLI runs; matplotlib is imported lazily (Agg backend)."""
from __future__ import annotations

import numpy as np


class PlottingUnavailable(RuntimeError):
    pass


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise PlottingUnavailable("matplotlib is required for --plots (pip install fve2l[plots])") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def convergence_figure(table, path):
    plt = _pyplot()
    h = np.array([r.h for r in table.rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(h, [r.l2 for r in table.rows], "o-", label="L2")
    ax.loglog(h, [r.h1 for r in table.rows], "s-", label="H1 seminorm")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.set_title(f"{table.problem}, k={table.order}")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def conservation_figure(report, path, layer=2, form="flux"):
    """Scatter heatmap of |residual| at dual-element centroids."""
    plt = _pyplot()
    vals = {(1, "flux"): report.layer1_flux, (1, "equa"): report.layer1_equa,
            (2, "flux"): report.layer2_flux, (2, "equa"): report.layer2_equa}[(layer, form)]
    cen = report.layer1_centroids if layer == 1 else report.layer2_centroids
    mag = np.abs(vals).max(axis=1)
    fig, ax = plt.subplots(figsize=(5, 4))
    sc = ax.scatter(cen[:, 0], cen[:, 1], c=np.log10(np.maximum(mag, 1e-300)), s=12, cmap="viridis")
    fig.colorbar(sc, ax=ax, label=f"log10 |{form} residual|")
    ax.set_aspect("equal")
    ax.set_title(f"layer {layer}, k={report.order}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def condition_figure(study, path):
    plt = _pyplot()
    hb = np.array([r.h_bar for r in study.rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(1 / hb, [r.kappa for r in study.rows], "o-", label="FVE-2L")
    ax.loglog(1 / hb, [r.kappa_fem for r in study.rows], "s--", label="FEM")
    ax.set_xlabel("1 / h_bar")
    ax.set_ylabel("kappa")
    ax.set_title(f"{study.problem}, k={study.order}")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def stability_figure(report, path):
    """The sampled boundary curve (r1, r2)."""
    plt = _pyplot()
    pts = np.asarray(report.curve)
    fig, ax = plt.subplots(figsize=(5, 4))
    if len(pts):
        ax.plot(pts[:, 0], pts[:, 1], ".-")
    ax.set_xlabel("r1")
    ax.set_ylabel("r2")
    ax.set_title(f"k={report.order}, B_N={report.BN_degrees:.4g} deg")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
