"""Static SVG overlays of ground truth, predictions and scene points."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2")


class SvgCanvas:
    """Maps data coordinates (meters, y up) onto a fixed-size SVG page."""

    def __init__(self, bounds, size=640, margin=40):
        (self.xmin, self.ymin), (self.xmax, self.ymax) = bounds
        span = max(self.xmax - self.xmin, self.ymax - self.ymin, 1e-9)
        self.scale = (size - 2 * margin) / span
        self.size = size
        self.margin = margin
        self.parts: list[str] = []

    def to_page(self, x: float, y: float) -> tuple[float, float]:
        px = self.margin + (x - self.xmin) * self.scale
        py = self.size - self.margin - (y - self.ymin) * self.scale
        return px, py

    def polyline(self, points, color: str, width: float = 2.0, dashed: bool = False) -> None:
        coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in (self.to_page(x, y) for x, y in points))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>'
        )

    def circle(self, x: float, y: float, r: float, color: str, fill: str = "none") -> None:
        px, py = self.to_page(x, y)
        self.parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" stroke="{color}" fill="{fill}"/>'
        )

    def text(self, x: float, y: float, label: str, color: str = "#000") -> None:
        self.parts.append(
            f'<text x="{x:.1f}" y="{y:.1f}" fill="{color}" font-size="13" '
            f'font-family="sans-serif">{escape(label)}</text>'
        )

    def document(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" height="{self.size}" '
            f'viewBox="0 0 {self.size} {self.size}">\n'
            f'<rect width="{self.size}" height="{self.size}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )


def render_window(
    path,
    window,
    scene_points_m: np.ndarray,
    truth_m: np.ndarray,
    predictions_m: dict[str, np.ndarray],
    point_labels: list[str] | None = None,
) -> None:
    """One window: black ground truth per agent, one dashed color per model,
    static points drawn as circles."""
    scene_points_m = np.asarray(scene_points_m, dtype=np.float64).reshape(-1, 2)
    stack = [truth_m.reshape(-1, 2)]
    if len(scene_points_m):
        stack.append(scene_points_m)
    for p in predictions_m.values():
        stack.append(np.asarray(p).reshape(-1, 2))
    every = np.vstack(stack)
    lo = every.min(axis=0) - 0.5
    hi = every.max(axis=0) + 0.5
    canvas = SvgCanvas((tuple(lo), tuple(hi)))

    for x, y in scene_points_m:
        canvas.circle(x, y, 6.0, "#444", fill="#bbb")
    for ai in range(truth_m.shape[0]):
        canvas.polyline(truth_m[ai], "#000", width=2.5)
        canvas.circle(truth_m[ai, window.t_obs - 1, 0], truth_m[ai, window.t_obs - 1, 1], 3.0, "#000", fill="#000")
    for mi, (name, pred) in enumerate(predictions_m.items()):
        color = PALETTE[mi % len(PALETTE)]
        pred = np.asarray(pred, dtype=np.float64)
        for ai in range(pred.shape[0]):
            # prepend the last observed point so the prediction connects visually
            line = np.vstack([truth_m[ai, window.t_obs - 1 : window.t_obs], pred[ai]])
            canvas.polyline(line, color, width=1.8, dashed=True)

    canvas.text(10, 18, "ground truth: solid black; static points: gray circles")
    for mi, name in enumerate(predictions_m):
        canvas.text(10, 36 + 16 * mi, f"{name}: dashed", PALETTE[mi % len(PALETTE)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canvas.document())
