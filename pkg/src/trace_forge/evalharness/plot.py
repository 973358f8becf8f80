"""Polar SVG overlay of a predicted and a ground-truth trace."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import IoError  # noqa: E402
from ..trace import RadialTrace  # noqa: E402

TRUTH_COLOR = "tab:blue"
PRED_COLOR = "tab:orange"
_RC = {"svg.hashsalt": "trace-forge", "svg.fonttype": "path", "path.simplify": False}


def _closed(trace: RadialTrace):
    th = trace.angles
    r = trace.radii_mm * 100.0
    return np.append(th, th[0] + 2.0 * np.pi), np.append(r, r[0])


def plot_trace(pred: RadialTrace | None, truth: RadialTrace, path, title: str | None = None) -> None:
    """Write an SVG with truth in blue and prediction in orange.

    Radii are drawn in hundredths of a millimetre. The output carries no
    timestamp, so equal inputs give byte-identical files.
    """
    with plt.rc_context(_RC):
        fig = plt.figure(figsize=(5.0, 5.0))
        ax = fig.add_subplot(111, projection="polar")
        th, r = _closed(truth)
        ax.plot(th, r, color=TRUTH_COLOR, lw=1.4, label="ground truth", gid="truth")
        rmax = r.max()
        if pred is not None:
            tp, rp = _closed(pred)
            ax.plot(tp, rp, color=PRED_COLOR, lw=1.2, label="prediction", gid="prediction")
            rmax = max(rmax, np.nanmax(rp))
        ax.set_rlim(0.0, 1.1 * rmax)
        ax.set_rlabel_position(22.5)
        ax.set_xlabel("radius (hundredths of mm)")
        ax.grid(True, lw=0.4, alpha=0.6)
        ax.legend(loc="lower left", bbox_to_anchor=(-0.1, -0.12), frameon=False, fontsize=8)
        if title:
            ax.set_title(title, fontsize=9)
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise IoError(f"cannot write plot {path}: {exc}") from exc
        finally:
            plt.close(fig)


def svg_path_points(svg_text: str, gid: str) -> np.ndarray:
    """Vertices of the first path inside the group with id ``gid`` (SVG units)."""
    import re
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_text)
    for g in root.iter("{http://www.w3.org/2000/svg}g"):
        if g.get("id") == gid:
            for p in g.iter("{http://www.w3.org/2000/svg}path"):
                nums = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?(?:e-?\d+)?", p.get("d", ""))]
                return np.array(nums).reshape(-1, 2)
    raise KeyError(gid)


def write_plot(pred, truth, path) -> Path:
    p = Path(path)
    plot_trace(pred, truth, p)
    return p
