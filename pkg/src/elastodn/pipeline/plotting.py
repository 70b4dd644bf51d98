"""Matplotlib figures for a reconstruction report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import depth_rows  # noqa: E402
from .run import ReconstructionReport  # noqa: E402

STYLE = {"figure.dpi": 120, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}


def _empty(ax, text: str = "no data") -> None:
    ax.text(0.5, 0.5, text, ha="center", va="center", transform=ax.transAxes)
    ax.set_xticks([])
    ax.set_yticks([])


def plot_error_vs_depth(report: ReconstructionReport, path: Path) -> Path:
    rows = depth_rows(report)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    if rows:
        d = np.array([r["depth"] for r in rows])
        e = np.maximum([r["error"] for r in rows], 1e-17)
        ax.semilogy(d, e, "o-", label="block error")
        up = [(r["depth"], r["upstream_strip_error"]) for r in rows if r["upstream_strip_error"] is not None]
        if up:
            ax.semilogy(*zip(*up), "s--", label="upstream strip error")
        for r, y in zip(rows, e):
            ax.annotate(str(r["label"]), (r["depth"], y), textcoords="offset points", xytext=(4, 4))
        ax.set_xticks(sorted(set(d.tolist())))
        ax.set_xlabel("chain depth")
        ax.set_ylabel("relative error")
        ax.legend()
    else:
        _empty(ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_svd_spectra(report: ReconstructionReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    steps = [s for s in report.steps if s.svd_spectrum]
    if steps:
        for s in steps:
            sv = np.asarray(s.svd_spectrum)
            ax.semilogy(sv / sv[0], label=f"strip {s.label}")
            if s.retained_rank:
                ax.axvline(s.retained_rank, ls=":", lw=0.8)
        ax.set_xlabel("index")
        ax.set_ylabel("singular value / largest")
        ax.legend()
    else:
        _empty(ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_voigt(report: ReconstructionReport, path: Path) -> Path:
    blocks = [b for b in report.blocks if b.voigt is not None]
    n = max(len(blocks), 1)
    fig, axes = plt.subplots(2, n, figsize=(2.6 * n, 4.8), squeeze=False)
    if not blocks:
        _empty(axes[0, 0])
        _empty(axes[1, 0])
    for k, b in enumerate(blocks):
        rec = np.asarray(b.voigt)
        im = axes[0, k].imshow(rec, cmap="viridis")
        axes[0, k].set_title(f"block {b.label}")
        fig.colorbar(im, ax=axes[0, k], shrink=0.7)
        if b.true_voigt is not None:
            diff = np.abs(rec - np.asarray(b.true_voigt))
            im = axes[1, k].imshow(np.log10(np.maximum(diff, 1e-17)), cmap="magma")
            axes[1, k].set_title("log10 |error|")
            fig.colorbar(im, ax=axes[1, k], shrink=0.7)
        else:
            _empty(axes[1, k], "no truth")
        for ax in axes[:, k]:
            ax.set_xticks(range(6))
            ax.set_yticks(range(6))
            ax.grid(False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_figures(report: ReconstructionReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    with plt.rc_context(STYLE):
        return [
            plot_error_vs_depth(report, out / "error_vs_depth.png"),
            plot_svd_spectra(report, out / "svd_spectrum.png"),
            plot_voigt(report, out / "voigt.png"),
        ]
