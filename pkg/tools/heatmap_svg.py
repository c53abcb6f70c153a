"""
SVG heatmap renderer for (sigma, lambda) phase diagrams.

Cells are colored by one numeric channel (|rho_max|^2 by default) on log-scaled
axes. Phase regions are outlined on top: DIVERGENT red, A-dominant black,
B-dominant blue, C-dominant green, the oscillatory (complex) band dashed white
and the saturation region dotted orange. Output bytes are deterministic for a
fixed input.
"""

import io
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure
from matplotlib.lines import Line2D

from core.exceptions import RaggedGridError
from utils.logging import get_service_logger

logger = get_service_logger("heatmap_svg", "tools")

PHASE_COLORS = {
    "DIVERGENT": "red",
    "A_DOMINANT": "black",
    "B_DOMINANT": "blue",
    "C_DOMINANT": "green",
}

_SVG_SALT = "gda-kernel-heatmap"


def _grid(cells: Sequence) -> Tuple[np.ndarray, np.ndarray, Dict[Tuple[float, float], object]]:
    if not cells:
        raise RaggedGridError("no cells to render")
    sigmas = np.unique([c.sigma for c in cells])
    lams = np.unique([c.lam for c in cells])
    index = {(c.sigma, c.lam): c for c in cells}
    if len(index) != len(cells) or len(cells) != sigmas.size * lams.size:
        raise RaggedGridError(
            f"{len(cells)} cells do not form a {sigmas.size} x {lams.size} grid")
    return sigmas, lams, index


def _edges(axis: np.ndarray) -> np.ndarray:
    """Geometric cell edges for a log-spaced axis."""
    if axis.size == 1:
        return np.array([axis[0] / 1.5, axis[0] * 1.5])
    logs = np.log10(axis)
    mids = 0.5 * (logs[1:] + logs[:-1])
    first = logs[0] - (mids[0] - logs[0])
    last = logs[-1] + (logs[-1] - mids[-1])
    return 10.0 ** np.concatenate([[first], mids, [last]])


def _outline(ax, sigmas, lams, mask: np.ndarray, **style) -> bool:
    if not mask.any() or mask.all() or min(mask.shape) < 2:
        return False
    ax.contour(sigmas, lams, mask.astype(float), levels=[0.5], **style)
    return True


def render_heatmap_svg(cells: Sequence, channel: str = "rho_max_sq", title: str = "") -> str:
    """Render cells (objects with sigma, lam, phase, complex_pair, saturated and `channel`) as SVG text."""
    sigmas, lams, index = _grid(cells)
    shape = (lams.size, sigmas.size)
    values = np.empty(shape)
    phase = np.empty(shape, dtype=object)
    complex_mask = np.zeros(shape, dtype=bool)
    saturated = np.zeros(shape, dtype=bool)
    for r, lam in enumerate(lams):
        for c, sigma in enumerate(sigmas):
            cell = index[(sigma, lam)]
            values[r, c] = float(getattr(cell, channel))
            phase[r, c] = getattr(cell.phase, "value", cell.phase)
            complex_mask[r, c] = bool(cell.complex_pair)
            saturated[r, c] = bool(cell.saturated)

    finite = values[np.isfinite(values)]
    vmin, vmax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    degenerate = vmin == vmax
    if degenerate:
        pad = 1e-6 * max(abs(vmin), 1.0)
        vmin, vmax = vmin - pad, vmax + pad

    fig = Figure(figsize=(7.0, 5.5))
    ax = fig.add_subplot(1, 1, 1)
    mesh = ax.pcolormesh(_edges(sigmas), _edges(lams), values, cmap="viridis",
                         vmin=vmin, vmax=vmax, shading="flat")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("kernel width sigma")
    ax.set_ylabel("regularization lambda")
    ax.set_title(title or f"{channel} over (sigma, lambda)")
    cbar = fig.colorbar(mesh, ax=ax)
    cbar.set_label(f"{channel} (constant field)" if degenerate else channel)

    handles: List[Line2D] = []
    for name, color in PHASE_COLORS.items():
        if _outline(ax, sigmas, lams, phase == name, colors=color, linewidths=1.2):
            handles.append(Line2D([], [], color=color, label=name))
    if _outline(ax, sigmas, lams, complex_mask, colors="white", linestyles="dashed", linewidths=1.0):
        handles.append(Line2D([], [], color="white", linestyle="--", label="complex pair"))
    if _outline(ax, sigmas, lams, saturated, colors="orange", linestyles="dotted", linewidths=1.5):
        handles.append(Line2D([], [], color="orange", linestyle=":", label="saturated"))
    if handles:
        ax.legend(handles=handles, loc="lower left", fontsize="small", framealpha=0.6)

    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    svg = buffer.getvalue()
    logger.debug("Rendered heatmap", cells=len(cells), bytes=len(svg), channel=channel)
    return svg
