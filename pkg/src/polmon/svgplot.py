"""Minimal native SVG emission for ROC curves and per-frame score traces."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
W, H, PAD = 480, 360, 48


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _axes(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" '
        'fill="white" stroke="#333"/>',
        f'<text x="{W / 2}" y="{PAD - 16}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{ylabel}</text>',
    ]


def _to_px(x, y, x0, x1, y0, y1):
    px = PAD + (x - x0) / (x1 - x0 or 1.0) * (W - 2 * PAD)
    py = H - PAD - (y - y0) / (y1 - y0 or 1.0) * (H - 2 * PAD)
    return px, py


def _polyline(xs, ys, color, x0, x1, y0, y1) -> str:
    pts = " ".join(f"{_to_px(x, y, x0, x1, y0, y1)[0]:.1f},{_to_px(x, y, x0, x1, y0, y1)[1]:.1f}"
                   for x, y in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def _doc(body: list[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n' + "\n".join(body) + "\n</svg>\n")


def svg_roc(curves: dict[str, np.ndarray], path, title: str = "ROC") -> None:
    """curves: name -> (n, 2) array of (FPR, TPR) points."""
    body = _axes(title, "false positive rate", "true positive rate")
    body.append(_polyline([0, 1], [0, 1], "#bbb", 0, 1, 0, 1))
    for i, (name, pts) in enumerate(sorted(curves.items())):
        pts = np.asarray(pts)
        order = np.argsort(pts[:, 0], kind="stable")
        color = _COLORS[i % len(_COLORS)]
        body.append(_polyline(pts[order, 0], pts[order, 1], color, 0, 1, 0, 1))
        body.append(f'<text x="{W - PAD - 4}" y="{PAD + 16 + 14 * i}" text-anchor="end" '
                    f'font-size="11" fill="{color}">{name}</text>')
    for t in (0.0, 0.5, 1.0):
        px, py = _to_px(t, 0, 0, 1, 0, 1)
        body.append(f'<text x="{px:.0f}" y="{H - PAD + 14}" text-anchor="middle" '
                    f'font-size="10">{_fmt(t)}</text>')
        px, py = _to_px(0, t, 0, 1, 0, 1)
        body.append(f'<text x="{PAD - 6}" y="{py:.0f}" text-anchor="end" '
                    f'font-size="10">{_fmt(t)}</text>')
    Path(path).write_text(_doc(body), encoding="utf-8")


def svg_traces(traces: dict[str, np.ndarray], path, onset: int | None = None,
               threshold: float | None = None, title: str = "per-frame scores") -> None:
    """traces: name -> 1-D score array over frames."""
    n = max(len(v) for v in traces.values())
    lo = min(0.0, min(float(np.min(v)) for v in traces.values()))
    hi = max(1.0, max(float(np.max(v)) for v in traces.values()))
    body = _axes(title, "frame", "score")
    if threshold is not None:
        body.append(_polyline([0, n - 1], [threshold, threshold], "#999", 0, n - 1, lo, hi))
    if onset is not None:
        body.append(_polyline([onset, onset], [lo, hi], "#000", 0, n - 1, lo, hi))
        px, _ = _to_px(onset, lo, 0, n - 1, lo, hi)
        body.append(f'<text x="{px:.0f}" y="{PAD + 10}" font-size="10">onset</text>')
    for i, (name, v) in enumerate(sorted(traces.items())):
        color = _COLORS[i % len(_COLORS)]
        body.append(_polyline(np.arange(len(v)), np.asarray(v), color, 0, n - 1, lo, hi))
        body.append(f'<text x="{W - PAD - 4}" y="{PAD + 16 + 14 * i}" text-anchor="end" '
                    f'font-size="11" fill="{color}">{name}</text>')
    Path(path).write_text(_doc(body), encoding="utf-8")
