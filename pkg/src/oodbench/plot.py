"""Self-contained SVG charts from a report dict.

Output bytes depend only on the report content: coordinates are formatted
with fixed precision and iteration follows the report's method order.
"""

from __future__ import annotations

from html import escape
from pathlib import Path

PALETTE = ["#0d6efd", "#fd7e14", "#198754", "#6f42c1", "#dc3545", "#20c997"]
IN_COLOR = "#0d6efd"
OOD_COLOR = "#fd7e14"
FONT = "DejaVu Sans, Arial, sans-serif"


def _f(v: float) -> str:
    return f"{v:.2f}"


def _header(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}" font-family="{FONT}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]


def _y_axis(parts, x0, y0, plot_h, y_max, ticks=5, fmt="{:.2f}"):
    for t in range(ticks + 1):
        v = y_max * t / ticks
        y = y0 - plot_h * t / ticks
        parts.append(f'<line x1="{_f(x0)}" y1="{_f(y)}" x2="{_f(x0 - 4)}" y2="{_f(y)}" stroke="#333"/>')
        parts.append(
            f'<text x="{_f(x0 - 7)}" y="{_f(y + 4)}" text-anchor="end" font-size="10">{fmt.format(v)}</text>'
        )


def histogram_svg(method: str, hist: dict, width: int = 640, height: int = 360) -> str:
    """Overlaid ID / OoD score histograms for one method."""
    left, right, top, bottom = 60, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    x0, y0 = left, top + ph
    counts_in, counts_ood, edges = hist.get("in", []), hist.get("ood", []), hist.get("edges", [])
    n = max(len(counts_in), 1)
    y_max = max([1] + list(counts_in) + list(counts_ood))
    parts = _header(width, height, f"Score histogram: {method}")
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="#333"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{top}" stroke="#333"/>')
    _y_axis(parts, x0, y0, ph, y_max, fmt="{:.0f}")
    bw = pw / n
    for counts, color in ((counts_in, IN_COLOR), (counts_ood, OOD_COLOR)):
        for i, c in enumerate(counts):
            if c == 0:
                continue
            h = ph * c / y_max
            parts.append(
                f'<rect x="{_f(x0 + i * bw)}" y="{_f(y0 - h)}" width="{_f(bw)}" height="{_f(h)}" '
                f'fill="{color}" fill-opacity="0.5" stroke="{color}"/>'
            )
    if edges:
        parts.append(f'<text x="{x0}" y="{y0 + 16}" text-anchor="start" font-size="10">{edges[0]:.4g}</text>')
        parts.append(f'<text x="{x0 + pw}" y="{y0 + 16}" text-anchor="end" font-size="10">{edges[-1]:.4g}</text>')
    parts.append(f'<text x="{x0 + pw / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="12">score</text>')
    for k, (label, color) in enumerate(((f"ID (n={sum(counts_in)})", IN_COLOR), (f"OoD (n={sum(counts_ood)})", OOD_COLOR))):
        ly = top + 6 + 16 * k
        parts.append(f'<rect x="{x0 + pw - 120}" y="{ly}" width="10" height="10" fill="{color}" fill-opacity="0.5"/>')
        parts.append(f'<text x="{x0 + pw - 105}" y="{ly + 9}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _auroc_categories(report: dict) -> tuple[str, list[tuple[str, str]]]:
    """(metric shown, [(metric, bin_key)...]) in first-seen order."""
    results = report.get("results", {})
    for metric in ("binned_auroc", "auroc", "pixel_auroc"):
        cats: list[tuple[str, str]] = []
        for per_metric in results.values():
            for key in per_metric.get(metric, {}):
                if (metric, key) not in cats:
                    cats.append((metric, key))
        if cats:
            return metric, cats
    return "auroc", []


def binned_bar_svg(report: dict, width: int = 760, height: int = 380) -> str:
    """Grouped bars: one group per OoD-fraction bin, one bar per method.

    Undefined results are drawn as short hatched bars annotated ``n=0``.
    """
    metric, cats = _auroc_categories(report)
    methods = list(report.get("methods", report.get("results", {}).keys()))
    left, right, top, bottom = 60, 20, 60, 70
    pw, ph = width - left - right, height - top - bottom
    x0, y0 = left, top + ph
    parts = _header(width, height, f"{metric} per OoD-fraction bin" if metric == "binned_auroc" else metric)
    parts.append(
        '<defs><pattern id="hatch" patternUnits="userSpaceOnUse" width="6" height="6" '
        'patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="#888" stroke-width="2"/>'
        "</pattern></defs>"
    )
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="#333"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{top}" stroke="#333"/>')
    _y_axis(parts, x0, y0, ph, 1.0)
    if not cats or not methods:
        parts.append(f'<text x="{x0 + pw / 2:.0f}" y="{y0 - ph / 2:.0f}" text-anchor="middle" font-size="12">no AuROC results</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"
    group_w = pw / len(cats)
    bar_w = group_w * 0.8 / len(methods)
    for g, (m, key) in enumerate(cats):
        gx = x0 + g * group_w + group_w * 0.1
        for j, method in enumerate(methods):
            entry = report["results"].get(method, {}).get(m, {}).get(key, {})
            value = entry.get("value")
            bx = gx + j * bar_w
            color = PALETTE[j % len(PALETTE)]
            if value is None:
                parts.append(
                    f'<rect x="{_f(bx)}" y="{_f(y0 - 4)}" width="{_f(bar_w)}" height="4" fill="url(#hatch)" stroke="#888"/>'
                )
                parts.append(
                    f'<text x="{_f(bx + bar_w / 2)}" y="{_f(y0 - 7)}" text-anchor="middle" font-size="8">n=0</text>'
                )
            else:
                h = ph * float(value)
                parts.append(
                    f'<rect x="{_f(bx)}" y="{_f(y0 - h)}" width="{_f(bar_w)}" height="{_f(h)}" fill="{color}">'
                    f"<title>{escape(method)} {escape(key)}: {float(value):.4f}</title></rect>"
                )
        parts.append(
            f'<text x="{_f(gx + group_w * 0.4)}" y="{y0 + 14}" text-anchor="middle" font-size="9">{escape(key)}</text>'
        )
    parts.append(f'<text x="{x0 + pw / 2:.0f}" y="{height - 28}" text-anchor="middle" font-size="12">OoD pixel fraction bin</text>')
    for j, method in enumerate(methods):
        lx = x0 + 10 + j * 130
        parts.append(f'<rect x="{lx}" y="{top - 22}" width="10" height="10" fill="{PALETTE[j % len(PALETTE)]}"/>')
        parts.append(f'<text x="{lx + 14}" y="{top - 13}" font-size="11">{escape(method)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plots(report: dict, out_dir) -> list[Path]:
    """Write one histogram per method plus the bar chart; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    methods = list(report.get("methods", report.get("results", {}).keys()))
    histograms = report.get("histograms", {})
    for method in methods:
        path = out_dir / f"histogram_{method}.svg"
        path.write_text(histogram_svg(method, histograms.get(method, {})))
        written.append(path)
    path = out_dir / "binned_auroc.svg"
    path.write_text(binned_bar_svg(report))
    written.append(path)
    return written
