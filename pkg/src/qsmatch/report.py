"""SVG figures of sweep results with the plotted numbers embedded as metadata."""

from __future__ import annotations

import io
import json
import math
from typing import Literal, Sequence
from xml.sax.saxutils import escape

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .state_space import BlochState, ideal_state_after, success_probability  # noqa: E402
from .stats_harness import StatRecord, aggregate  # noqa: E402

METADATA_ID = "qsmatch-series"
PlotKind = Literal["success", "theta1"]


def _nan_to_none(xs) -> list:
    return [None if x is None or (isinstance(x, float) and math.isnan(x)) else x for x in xs]


def plot_series(records: Sequence[StatRecord], kind: PlotKind) -> dict:
    """Numbers behind a plot: per-epsilon markers, error bars and the band at each theta0."""
    if not records:
        raise ValueError("no records to plot")
    if kind not in ("success", "theta1"):
        raise ValueError(f"unknown plot kind {kind!r}")
    rows = aggregate(records)
    iterations = records[0].iterations
    series = []
    for eps in sorted({r.epsilon for r in rows}):
        rs = sorted((r for r in rows if r.epsilon == eps), key=lambda r: r.theta0)
        theta0 = [r.theta0 for r in rs]
        if kind == "success":
            ideal = [r.p_ideal for r in rs]
            mean = [r.p_est_mean for r in rs]
            std = [r.p_est_std for r in rs]
            lo = [r.band_lo for r in rs]
            hi = [r.band_hi for r in rs]
        else:
            ideal = [r.theta1_ideal for r in rs]
            mean = [r.theta1_mean for r in rs]
            std = [r.theta1_std for r in rs]
            shots = records[0].shots
            # three delta-method standard errors of the angle from M*p post-selected shots
            half = [3.0 / math.sqrt(shots * r.p_ideal) if r.p_ideal > 0 else math.pi for r in rs]
            lo = [max(0.0, t - h) for t, h in zip(ideal, half)]
            hi = [min(math.pi, t + h) for t, h in zip(ideal, half)]
        inside = [m is not None and a <= m <= b for m, a, b in zip(mean, lo, hi)]
        series.append(
            {
                "epsilon": eps,
                "theta0": theta0,
                "ideal": ideal,
                "mean": _nan_to_none(mean),
                "std": _nan_to_none(std),
                "band_lo": lo,
                "band_hi": hi,
                "inside_band": inside,
            }
        )
    return {"kind": kind, "iterations": iterations, "shots": records[0].shots, "series": series}


def _theory_curve(kind: PlotKind, eps: float, n: int, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
    th = np.linspace(t0, t1, 200)
    if kind == "success":
        y = [success_probability(t, eps, n) for t in th]
    else:
        y = [ideal_state_after(BlochState(t), eps, n)[0].theta for t in th]
    return th, np.array(y)


def render_svg(records: Sequence[StatRecord], kind: PlotKind) -> str:
    data = plot_series(records, kind)
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, s in enumerate(data["series"]):
        c = colors[i % len(colors)]
        th = np.array(s["theta0"])
        x, y = _theory_curve(kind, s["epsilon"], data["iterations"], th.min(), th.max())
        ax.plot(x, y, color=c, lw=1.4, label=f"eps = {s['epsilon']:g}")
        ax.fill_between(th, s["band_lo"], s["band_hi"], color=c, alpha=0.18, lw=0)
        mean = np.array([np.nan if m is None else m for m in s["mean"]])
        std = np.array([0.0 if v is None else v for v in s["std"]])
        ax.errorbar(th, mean, yerr=std, fmt="o", ms=3.5, color=c, capsize=2, lw=0.8)
    ax.set_xlabel(r"$\theta_0$")
    ax.set_ylabel(r"$p_s$" if kind == "success" else r"$\theta_1$")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return embed_metadata(buf.getvalue(), data)


def embed_metadata(svg: str, data: dict) -> str:
    block = f'<metadata id="{METADATA_ID}">{escape(json.dumps(data))}</metadata>'
    start = svg.index("<svg")
    close = svg.index(">", start) + 1
    return svg[:close] + "\n " + block + svg[close:]


def read_metadata(svg_text: str) -> dict:
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_text)
    for el in root.iter():
        if el.tag.endswith("metadata") and el.get("id") == METADATA_ID:
            return json.loads(el.text)
    raise ValueError("SVG carries no series metadata")
