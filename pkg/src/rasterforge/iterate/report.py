from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .study import StudyState, TrialRecord

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 80, "right": 30, "top": 30, "bottom": 60}
LOW_COLOR, HIGH_COLOR = (68, 1, 84), (253, 231, 37)
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def write_trials_csv(state: StudyState, path) -> Path:
    path = Path(path)
    params = state.space.paths()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_id", *params, "objective", "status", "seed"])
        for t in sorted(state.trials, key=lambda t: t.trial_id):
            w.writerow([t.trial_id, *(_fmt(t.params.get(p, "")) for p in params), _fmt(t.value), t.status, t.seed])
    return path


def read_trials_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        row = dict(r)
        row["trial_id"] = int(r["trial_id"])
        row["seed"] = int(r["seed"])
        row["objective"] = float(r["objective"])
        out.append(row)
    return out


class _Axis:
    def __init__(self, lo: float, hi: float, log: bool, pix_lo: float, pix_hi: float):
        self.log = log
        self.lo, self.hi = (math.log10(lo), math.log10(hi)) if log else (lo, hi)
        if self.hi == self.lo:
            pad = abs(self.lo) * 0.1 or 0.5
            self.lo, self.hi = self.lo - pad, self.hi + pad
        self.pix_lo, self.pix_hi = pix_lo, pix_hi

    def __call__(self, v: float) -> float:
        u = math.log10(v) if self.log else v
        return self.pix_lo + (u - self.lo) / (self.hi - self.lo) * (self.pix_hi - self.pix_lo)

    def ticks(self, n: int = 5) -> list[float]:
        if self.log:
            first, last = math.ceil(self.lo - 1e-9), math.floor(self.hi + 1e-9)
            decades = list(range(first, last + 1))
            if len(decades) >= 2:
                return [10.0 ** d for d in decades]
        vals = [self.lo + i * (self.hi - self.lo) / (n - 1) for i in range(n)]
        return [10.0 ** v for v in vals] if self.log else vals


def _color(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    r, g, b = (round(a + (b - a) * t) for a, b in zip(LOW_COLOR, HIGH_COLOR))
    return f"#{r:02x}{g:02x}{b:02x}"


def _y_value(t: TrialRecord, metric: str | None) -> float:
    if metric is None:
        return t.value
    return t.metrics.get(metric, t.test_metrics.get(metric, math.nan))


def render_svg(state: StudyState, metric: str | None = None) -> str:
    """Scatter of trials: first continuous parameter against the objective.

    The second parameter, if any, sets the marker colour.  The best trial
    (lowest objective) is drawn as a diamond polygon; all others as circles.
    Markers carry ``data-*`` attributes with their values.
    """
    params = list(state.space)
    x_param = next((p for p in params if p.kind == "continuous"), None)
    c_param = next((p for p in params if p is not x_param), None)
    plotted = [t for t in state.trials if math.isfinite(_y_value(t, metric))]
    best_id = state.best().trial_id if state.completed() else None

    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    if x_param is not None:
        xa = _Axis(x_param.low, x_param.high, x_param.log, x0, x1)
        xval = lambda t: float(t.params[x_param.path])
        x_label = x_param.path
    else:
        xa = _Axis(0, max(state.n_trials - 1, 1), False, x0, x1)
        xval = lambda t: float(t.trial_id)
        x_label = "trial"
    ys = [_y_value(t, metric) for t in plotted] or [0.0]
    lo, hi = min(ys), max(ys)
    pad = (hi - lo) * 0.05
    ya = _Axis(lo - pad, hi + pad, False, y0, y1)
    y_label = metric or "objective"

    def colour(t):
        if c_param is None:
            return PALETTE[0]
        v = t.params.get(c_param.path)
        if c_param.kind == "categorical":
            return PALETTE[c_param.choices.index(v) % len(PALETTE)] if v in c_param.choices else "#000000"
        a, b = c_param.transformed_bounds
        return _color((c_param.to_internal(v) - a) / (b - a))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-x-param="{escape(x_label)}" data-x-log="{str(xa.log).lower()}" '
        f'data-x-min="{_fmt(xa.lo)}" data-x-max="{_fmt(xa.hi)}" data-x-pix-min="{x0}" data-x-pix-max="{x1}" '
        f'data-y-min="{_fmt(ya.lo)}" data-y-max="{_fmt(ya.hi)}" data-y-pix-min="{y0}" data-y-pix-max="{y1}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for v in xa.ticks():
        px = xa(v)
        out.append(f'<line class="tick" x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{y0 + 18}" font-size="11" text-anchor="middle">{v:.3g}</text>')
    for v in ya.ticks():
        py = ya(v)
        out.append(f'<line class="tick" x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{py + 4:.2f}" font-size="11" text-anchor="end">{v:.4g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 15}" font-size="13" text-anchor="middle">'
               f'{escape(x_label)}{" (log)" if xa.log else ""}</text>')
    out.append(f'<text x="18" y="{(y0 + y1) / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 18 {(y0 + y1) / 2})">{escape(y_label)}</text>')
    if c_param is not None:
        out.append(f'<text x="{x1}" y="{y1 - 10}" font-size="11" text-anchor="end">colour: {escape(c_param.path)}</text>')

    for t in sorted(plotted, key=lambda t: t.trial_id == best_id):
        px, py = xa(xval(t)), ya(_y_value(t, metric))
        attrs = (f'class="marker" data-trial-id="{t.trial_id}" data-x="{_fmt(xval(t))}" '
                 f'data-y="{_fmt(_y_value(t, metric))}" fill="{colour(t)}" stroke="black"')
        if t.trial_id == best_id:
            r = 9
            pts = f"{px:.2f},{py - r:.2f} {px + r:.2f},{py:.2f} {px:.2f},{py + r:.2f} {px - r:.2f},{py:.2f}"
            out.append(f'<polygon {attrs} data-marker="diamond" data-best="true" points="{pts}"/>')
        else:
            out.append(f'<circle {attrs} data-marker="circle" cx="{px:.2f}" cy="{py:.2f}" r="5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(state: StudyState, out_dir, metric: str | None = None) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_trials_csv(state, out_dir / "trials.csv")
    svg_path = out_dir / "trials.svg"
    svg_path.write_text(render_svg(state, metric))
    return {"csv": csv_path, "svg": svg_path}
