"""CSV and static SVG renderings of evaluation results.

Files are named ``report_<figure>_<variant>_<g>.{csv,svg}`` with ``all`` in
place of a variant or group size for figures that span several runs.
Output bytes depend only on the inputs.  The ecdf figures use
per-realization errors so that curves for different group sizes compare
like with like; the raw per-sample errors go to ``report_errors_*``.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

from .evaluation import PUBLISHED_REFERENCE, EvalReport, ecdf, estimation_kind

WIDTH, HEIGHT = 480, 320
MARGIN = (56, 16, 28, 44)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return repr(float(x))


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def svg_chart(series, title: str, xlabel: str, ylabel: str, ylim=None) -> str:
    """Line chart; ``series`` is a list of ``(label, xs, ys, step)``."""
    xs_all = [x for _, xs, _, _ in series for x in xs]
    ys_all = [y for _, _, ys, _ in series for y in ys]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = ylim if ylim else (min(0.0, min(ys_all)), max(ys_all))
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 <= y0:
        y1 = y0 + 1.0
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="16" text-anchor="middle" font-size="12">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 14}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{left - 4}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{py(t):.2f}" y2="{py(t):.2f}" '
                   f'stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 12 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for n, (label, xs, ys, step) in enumerate(series):
        pts = []
        for i, (x, y) in enumerate(zip(xs, ys)):
            if step and i:
                pts.append(f"{px(x):.2f},{py(ys[i - 1]):.2f}")
            pts.append(f"{px(x):.2f},{py(y):.2f}")
        color = COLORS[n % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{left + 8}" y="{top + 14 + 13 * n}" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _tag(report: EvalReport) -> str:
    return f"{report.variant}_{report.group_size}"


def _label(report: EvalReport) -> str:
    return f"{report.variant} g={report.group_size} ({estimation_kind(report.group_size)})"


def ecdf_files(report: EvalReport) -> dict[str, str]:
    pts = ecdf(report.realization_errors)
    tag = _tag(report)
    return {
        f"report_fig5_{tag}.csv": _csv(["error", "fraction"], [(_num(v), _num(f)) for v, f in pts]),
        f"report_fig5_{tag}.svg": svg_chart([(_label(report), [0.0] + [v for v, _ in pts],
                                              [0.0] + [f for _, f in pts], True)],
                                             "ecdf of per-realization Frobenius error", "Frobenius error",
                                             "cumulative fraction", ylim=(0.0, 1.0)),
    }


def render_report(reports: list[EvalReport], out_dir, sweep: list[tuple[int, float]] | None = None
                  ) -> list[Path]:
    """Write every figure analogue for ``reports``; returns the paths written."""
    if not reports:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    for r in reports:
        tag = _tag(r)
        files[f"report_errors_{tag}.csv"] = _csv(["sample", "error"],
                                                 [(i, _num(e)) for i, e in enumerate(r.errors)])
        files.update(ecdf_files(r))
        if r.trace_true is not None:
            k = list(range(len(r.trace_true)))
            files[f"report_fig4_{tag}.csv"] = _csv(
                ["subcarrier", "true_amplitude", "predicted_amplitude"],
                [(i, _num(t), _num(p)) for i, t, p in zip(k, r.trace_true, r.trace_pred)])
            files[f"report_fig4_{tag}.svg"] = svg_chart(
                [("ground truth |h11|", k, list(r.trace_true), False),
                 (f"recovered ({_label(r)})", k, list(r.trace_pred), False)],
                "amplitude of h11 across subcarriers", "subcarrier position", "|h11|")

    rows = []
    for r in reports:
        kind = estimation_kind(r.group_size)
        ref = PUBLISHED_REFERENCE.get((r.variant, kind)) if r.group_size in (1, _full_band(reports)) else None
        rows.append((kind, r.variant, r.group_size, _num(r.mean), "" if ref is None else ref))
    files["report_table2_all_all.csv"] = _csv(
        ["estimation", "variant", "group_size", "mean_frobenius_error", "reference_value"], rows)

    curves = []
    for r in reports:
        pts = ecdf(r.realization_errors)
        curves.append((_label(r), [0.0] + [v for v, _ in pts], [0.0] + [f for _, f in pts], True))
    files["report_fig5_all_all.svg"] = svg_chart(curves, "ecdf of per-realization Frobenius error",
                                                 "Frobenius error",
                                                 "cumulative fraction", ylim=(0.0, 1.0))
    if sweep:
        files["report_fig6_cnn_all.csv"] = _csv(["group_size", "mean_frobenius_error"],
                                                [(g, _num(e)) for g, e in sweep])
        files["report_fig6_cnn_all.svg"] = svg_chart(
            [("cnn", [g for g, _ in sweep], [e for _, e in sweep], False)],
            "error vs subcarriers per sample", "subcarriers per sample", "mean Frobenius error")

    written = []
    for name in sorted(files):
        path = out_dir / name
        path.write_bytes(files[name].encode("utf-8"))
        written.append(path)
    return written


def _full_band(reports: list[EvalReport]) -> int:
    return max(r.group_size for r in reports)
