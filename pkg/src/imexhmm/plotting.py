"""Static log-log SVG plots of study results."""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.transforms import blended_transform_factory  # noqa: E402

from .study import StudyResult  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "imexhmm"

_MARKERS = "osD^v<>"


def _parameter(rows: list[dict]) -> str:
    studies = {r["study"] for r in rows}
    if studies <= {"time-ref", "time-exact"}:
        return "tau"
    if studies == {"micro"}:
        return "micro_n"
    return "H"


def _x_value(row: dict, parameter: str) -> float:
    if parameter == "micro_n":
        return row["delta"] / row["micro_n"]
    return row[parameter]


def build_figure(result: StudyResult):
    """Figure and axes for ``result``; raises ``ValueError`` if nothing to plot."""
    rows = [r for r in result.rows if r["E_total"] is not None]
    finite = [r for r in rows if not r["diverged"] and math.isfinite(r["E_total"]) and r["E_total"] > 0]
    diverged = [r for r in rows if r["diverged"]]
    if not finite and not diverged:
        raise ValueError("study result has no rows to plot")
    parameter = _parameter(rows)

    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.set_xscale("log")
    ax.set_yscale("log")
    series: dict[tuple, list[dict]] = {}
    for r in rows:
        series.setdefault((r["study"], r["scheme"]), []).append(r)
    for k, ((study, scheme), rs) in enumerate(series.items()):
        pts = sorted(
            (_x_value(r, parameter), r["E_total"]) for r in rs if r in finite
        )
        label = study if scheme is None else f"{scheme} ({study})"
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker=_MARKERS[k % len(_MARKERS)], label=label, gid=f"series-{k}")

    xs_all = [_x_value(r, parameter) for r in rows]
    ax.set_xlim(min(xs_all) / 1.5, max(xs_all) * 1.5)
    if finite:
        ys = [r["E_total"] for r in finite]
        lo, hi = min(ys), max(ys)
        ax.set_ylim(lo / 4, hi * 4 if hi > lo else hi * 10)
        _slope_triangles(ax, finite, parameter)

    if diverged:
        # off-scale markers pinned to the top edge in axes coordinates
        trans = blended_transform_factory(ax.transData, ax.transAxes)
        ax.plot(
            [_x_value(r, parameter) for r in diverged],
            [1.0] * len(diverged),
            linestyle="none",
            marker="x",
            color="crimson",
            markersize=8,
            transform=trans,
            clip_on=False,
            label="diverged",
            gid="diverged",
        )

    xlabel = {"tau": "time step $\\tau$", "H": "mesh size $H$", "micro_n": "micro mesh width $h$"}[parameter]
    ax.set_xlabel(xlabel)
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    return fig, ax


def _slope_triangles(ax, finite: list[dict], parameter: str) -> None:
    xs = sorted({_x_value(r, parameter) for r in finite})
    if len(xs) < 2:
        return
    ys = [r["E_total"] for r in finite]
    x0, x1 = xs[0], xs[0] * 2.0
    base = min(ys)
    for order, shift in ((1, 1.0), (2, 0.25)):
        y0 = base * shift
        y1 = y0 * 2.0**order
        ax.plot([x0, x1, x1, x0], [y0, y0, y1, y0], color="0.4", linewidth=0.8, gid=f"slope-{order}")
        ax.annotate(str(order), (x1, math.sqrt(y0 * y1)), textcoords="offset points", xytext=(3, 0), fontsize=7)


def emit_plot(result: StudyResult, path) -> Path:
    """Write the SVG atomically; nothing is written if there is nothing to plot."""
    fig, _ = build_figure(result)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".svg")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    finally:
        plt.close(fig)
    return path
