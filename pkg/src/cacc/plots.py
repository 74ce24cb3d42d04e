"""Minimal deterministic SVG line plots (hand-emitted polylines)."""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 60

# fixed legend order and palette, keyed by update policy
SERIES_ORDER = ("none", "standard_aci", "conformal_pid", "cost_aware")
SERIES_LABEL = {
    "none": "none",
    "standard_aci": "aci",
    "conformal_pid": "pid",
    "cost_aware": "ours",
}
SERIES_COLOR = {
    "none": "#888888",
    "standard_aci": "#1f77b4",
    "conformal_pid": "#2ca02c",
    "cost_aware": "#d62728",
}


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_plot_svg(series: dict[str, np.ndarray], title: str, y_label: str) -> str:
    """Render one panel; series keys are update-policy names."""
    names = [n for n in SERIES_ORDER if n in series] + sorted(
        n for n in series if n not in SERIES_ORDER
    )
    ys = [np.asarray(series[n], float) for n in names]
    n_max = max((len(y) for y in ys), default=0)
    y_all = np.concatenate([y for y in ys if len(y)]) if n_max else np.zeros(1)
    y_lo, y_hi = float(np.min(y_all)), float(np.max(y_all))
    if y_hi - y_lo < 1e-12:
        y_hi = y_lo + 1.0
    plot_w = WIDTH - 2 * MARGIN
    plot_h = HEIGHT - 2 * MARGIN

    def sx(i, n):
        return MARGIN + plot_w * (i / max(n - 1, 1))

    def sy(v):
        return HEIGHT - MARGIN - plot_h * ((v - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 18}" font-size="11">0</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 18}" text-anchor="end" '
        f'font-size="11">{n_max}</text>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" text-anchor="end" '
        f'font-size="11">{_fmt(y_lo)}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end" font-size="11">{_fmt(y_hi)}</text>',
        f'<text x="16" y="{HEIGHT // 2}" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT // 2})" text-anchor="middle">{y_label}</text>',
    ]
    for idx, (name, y) in enumerate(zip(names, ys)):
        if len(y) == 0:
            continue
        # subsample long series to keep files small and rendering cheap
        stride = max(1, len(y) // 2000)
        pts = " ".join(
            f"{_fmt(sx(i, len(y)))},{_fmt(sy(y[i]))}" for i in range(0, len(y), stride)
        )
        color = SERIES_COLOR.get(name, "#000000")
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        lx = WIDTH - MARGIN - 110
        ly = MARGIN + 16 * idx
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{lx + 30}" y="{ly + 4}" font-size="12">{SERIES_LABEL.get(name, name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
