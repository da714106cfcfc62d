"""Minimal hand-written SVG plots (no plotting dependency)."""

from xml.sax.saxutils import escape

W, H = 640, 400
M = {"l": 70, "r": 70, "t": 40, "b": 60}


def _fmt(v):
    return f"{v:.2f}"


def _scale(lo, hi, a, b):
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _ticks(lo, hi, n=5):
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _pad(lo, hi, frac=0.05):
    span = (hi - lo) or abs(hi) or 1.0
    return lo - frac * span, hi + frac * span


class _Svg:
    def __init__(self, title):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        ]

    def add(self, s):
        self.parts.append(s)

    def text(self, x, y, s, anchor="middle", size=11, color="black", rotate=None):
        tr = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate is not None else ""
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" text-anchor="{anchor}" font-family="sans-serif" '
                 f'font-size="{size}" fill="{color}"{tr}>{escape(s)}</text>')

    def line(self, x1, y1, x2, y2, color="black", width=1, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" stroke="{color}" '
                 f'stroke-width="{width}"{d}/>')

    def polyline(self, pts, color, cls):
        p = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.add(f'<polyline class="{cls}" points="{p}" fill="none" stroke="{color}" stroke-width="2"/>')

    def marker(self, x, y, color, cls, shape="circle", r=4):
        if shape == "square":
            self.add(f'<rect class="{cls}" x="{_fmt(x - r)}" y="{_fmt(y - r)}" width="{2 * r}" height="{2 * r}" '
                     f'fill="{color}"/>')
        else:
            self.add(f'<circle class="{cls}" cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{color}"/>')

    def axis_y(self, x, lo, hi, sy, label, color, side):
        self.line(x, M["t"], x, H - M["b"], color)
        off, anchor = (-6, "end") if side == "left" else (6, "start")
        for v in _ticks(lo, hi):
            self.line(x, sy(v), x - off / 2, sy(v), color)
            self.text(x + off, sy(v) + 4, f"{v:.3g}", anchor, 10, color)
        lx = 18 if side == "left" else W - 14
        self.text(lx, H / 2, label, "middle", 12, color, rotate=-90 if side == "left" else 90)

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def profile_svg(rows, title="Single-layer quantization"):
    """Dual-axis plot over layer index: AI (left axis) and accuracy % (right).

    ``rows`` are profiler ProbeRows.
    """
    svg = _Svg(title)
    n = len(rows)
    sx = _scale(-0.5, n - 0.5, M["l"], W - M["r"])
    ais = [r.ai for r in rows]
    accs = [100.0 * r.accuracy for r in rows]
    ai_lo, ai_hi = _pad(min(ais), max(ais))
    ac_lo, ac_hi = _pad(min(accs), max(accs))
    sy_ai = _scale(ai_lo, ai_hi, H - M["b"], M["t"])
    sy_ac = _scale(ac_lo, ac_hi, H - M["b"], M["t"])
    svg.line(M["l"], H - M["b"], W - M["r"], H - M["b"])
    svg.axis_y(M["l"], ai_lo, ai_hi, sy_ai, "arithmetic intensity (FLOPs/byte)", "#1f77b4", "left")
    svg.axis_y(W - M["r"], ac_lo, ac_hi, sy_ac, "accuracy (%)", "#d62728", "right")
    for i, r in enumerate(rows):
        svg.text(sx(i), H - M["b"] + 14, str(i), size=9)
    svg.text(W / 2, H - 14, "quantized layer index", size=12)
    svg.add('<g class="series" data-metric="ai">')
    svg.polyline([(sx(i), sy_ai(v)) for i, v in enumerate(ais)], "#1f77b4", "ai")
    for i, v in enumerate(ais):
        svg.marker(sx(i), sy_ai(v), "#1f77b4", "ai")
    svg.add("</g>")
    svg.add('<g class="series" data-metric="accuracy">')
    svg.polyline([(sx(i), sy_ac(v)) for i, v in enumerate(accs)], "#d62728", "accuracy")
    for i, v in enumerate(accs):
        svg.marker(sx(i), sy_ac(v), "#d62728", "accuracy", "square", 3)
    svg.add("</g>")
    return svg.render()


_COLORS = {"aiq": "#2ca02c", "uniform:fp32": "#7f7f7f", "uniform:int8": "#1f77b4", "uniform:int4": "#ff7f0e"}


def pareto_svg(points, title="Accuracy vs arithmetic intensity"):
    """Scatter of sweep points (x = AI, y = accuracy %) with the
    non-dominated AIQ points joined as the frontier.  ``points`` are
    search.SweepPoints."""
    svg = _Svg(title)
    ais = [p.record.ai for p in points]
    accs = [100.0 * p.record.accuracy for p in points]
    x_lo, x_hi = _pad(min(ais), max(ais))
    y_lo, y_hi = _pad(min(accs), max(accs))
    sx = _scale(x_lo, x_hi, M["l"], W - M["r"])
    sy = _scale(y_lo, y_hi, H - M["b"], M["t"])
    svg.line(M["l"], H - M["b"], W - M["r"], H - M["b"])
    for v in _ticks(x_lo, x_hi):
        svg.line(sx(v), H - M["b"], sx(v), H - M["b"] + 4)
        svg.text(sx(v), H - M["b"] + 16, f"{v:.3g}", size=10)
    svg.text(W / 2, H - 14, "arithmetic intensity (FLOPs/byte)", size=12)
    svg.axis_y(M["l"], y_lo, y_hi, sy, "accuracy (%)", "black", "left")
    front = sorted((p.record.ai, 100.0 * p.record.accuracy) for p in points if not p.dominated)
    if len(front) > 1:
        svg.polyline([(sx(a), sy(b)) for a, b in front], "#2ca02c", "frontier")
    for p, a, b in zip(points, ais, accs):
        color = _COLORS.get(p.label, "#9467bd")
        cls = "dominated" if p.dominated else "frontier-point"
        svg.marker(sx(a), sy(b), color, f"{p.label} {cls}", "square" if p.label != "aiq" else "circle", 5)
    y = M["t"] + 6
    for label in sorted({p.label for p in points}):
        svg.marker(W - M["r"] - 100, y, _COLORS.get(label, "#9467bd"), "legend")
        svg.text(W - M["r"] - 92, y + 4, label, "start", 10)
        y += 16
    return svg.render()
