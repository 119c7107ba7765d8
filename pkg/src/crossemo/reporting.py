"""Deterministic report emission: CSV/JSON tables and static SVG line charts.

Every writer here is a pure function of its table: fixed column order,
fixed float formatting, sorted JSON keys, no timestamps or generated ids.
Re-running a pipeline with the same seeds must reproduce artifacts byte for
byte, which the test suite asserts.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .probe import LayerProbeRow
from .store import EMOTIONS

PROBE_COLUMNS = (
    "model_tag",
    "task",
    "layer",
    "val_ua",
    "test_ua",
    *[f"recall_{e}" for e in EMOTIONS],
)
SUMMARY_COLUMNS = ("model_tag", "task", "row", "test_ua", "layers")
ADAPT_COLUMNS = (
    "model_tag",
    "approach",
    "direction",
    "stage_one_ua",
    "stage_two_ua",
    "scratch_ua",
    "stage_one_val_ua",
    "stage_two_val_ua",
    "seed_stage_one",
    "seed_stage_two",
    "error",
)
FAD_COLUMNS = ("model_tag", "layer", "emotion", "fad", "n_speech", "n_music")

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
)


def fmt(value) -> str:
    """Fixed textual form for table cells; empty string for missing values."""
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, ".10g")
    return str(value)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(cell) for cell in row])


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _jsonable(obj.item())
    return obj


# ---------------------------------------------------------------------------
# Probe artifacts
# ---------------------------------------------------------------------------


def probe_table_rows(results: dict[tuple[str, str], list[LayerProbeRow]]):
    """Flatten {(model_tag, task): rows} into PROBE_COLUMNS order."""
    out = []
    for (tag, task) in sorted(results):
        for row in results[(tag, task)]:
            out.append(
                (
                    tag,
                    task,
                    row.layer,
                    row.val_ua,
                    row.test_ua,
                    *[float(r) for r in row.per_class_recall],
                )
            )
    return out


def probe_summary_rows(results: dict[tuple[str, str], list[LayerProbeRow]]):
    """Best / Worst / Mean summary per (model, task), with the layer indices.

    Ties on test UA list every tying layer, comma-joined, mirroring the usual
    layerwise summary tables.
    """
    out = []
    for (tag, task) in sorted(results):
        rows = results[(tag, task)]
        uas = [row.test_ua for row in rows]
        best, worst = max(uas), min(uas)
        best_layers = [str(r.layer) for r in rows if r.test_ua == best]
        worst_layers = [str(r.layer) for r in rows if r.test_ua == worst]
        out.append((tag, task, "Best", best, ", ".join(best_layers)))
        out.append((tag, task, "Worst", worst, ", ".join(worst_layers)))
        out.append((tag, task, "Mean", sum(uas) / len(uas), ""))
    return out


def write_probe_artifacts(out_dir, results) -> list[Path]:
    """CSV + JSON tables, a summary table, and one SVG per task."""
    out_dir = Path(out_dir)
    rows = probe_table_rows(results)
    summary = probe_summary_rows(results)
    paths = []

    csv_path = out_dir / "probe_layers.csv"
    write_csv(csv_path, PROBE_COLUMNS, rows)
    paths.append(csv_path)

    json_path = out_dir / "probe_layers.json"
    write_json(json_path, [dict(zip(PROBE_COLUMNS, row)) for row in rows])
    paths.append(json_path)

    summary_path = out_dir / "probe_summary.csv"
    write_csv(summary_path, SUMMARY_COLUMNS, summary)
    paths.append(summary_path)

    for task in sorted({task for _, task in results}):
        series = []
        for (tag, row_task) in sorted(results):
            if row_task != task:
                continue
            layer_rows = results[(tag, row_task)]
            series.append(
                (
                    tag,
                    [row.layer for row in layer_rows],
                    [row.test_ua for row in layer_rows],
                )
            )
        svg_path = out_dir / f"probe_{task.lower()}.svg"
        svg_path.parent.mkdir(parents=True, exist_ok=True)
        svg_path.write_text(
            svg_line_chart(
                series,
                title=f"Layerwise {task} test UA",
                x_label="layer",
                y_label="UA",
            )
        )
        paths.append(svg_path)
    return paths


# ---------------------------------------------------------------------------
# Adaptation artifacts
# ---------------------------------------------------------------------------


def adapt_table_rows(grid_rows):
    return [
        (
            row.model_tag,
            row.approach,
            row.direction,
            row.stage_one_ua,
            row.stage_two_ua,
            row.scratch_ua,
            row.stage_one_val_ua,
            row.stage_two_val_ua,
            row.seed_stage_one,
            row.seed_stage_two,
            row.error,
        )
        for row in grid_rows
    ]


def write_adapt_artifacts(out_dir, grid_rows) -> list[Path]:
    out_dir = Path(out_dir)
    rows = adapt_table_rows(grid_rows)
    csv_path = out_dir / "adaptation.csv"
    write_csv(csv_path, ADAPT_COLUMNS, rows)
    json_path = out_dir / "adaptation.json"
    write_json(json_path, [dict(zip(ADAPT_COLUMNS, row)) for row in rows])
    return [csv_path, json_path]


# ---------------------------------------------------------------------------
# FAD artifacts
# ---------------------------------------------------------------------------


def fad_table_rows(results):
    return [
        (r.model_tag, r.layer, r.emotion, r.score, r.n_speech, r.n_music)
        for r in results
    ]


def write_fad_artifacts(out_dir, results_by_tag: dict[str, list]) -> list[Path]:
    """Tables plus one SVG per model with one line per emotion (and "all")."""
    out_dir = Path(out_dir)
    paths = []
    all_rows = []
    for tag in sorted(results_by_tag):
        all_rows.extend(fad_table_rows(results_by_tag[tag]))
    csv_path = out_dir / "fad.csv"
    write_csv(csv_path, FAD_COLUMNS, all_rows)
    paths.append(csv_path)
    json_path = out_dir / "fad.json"
    write_json(
        json_path,
        [
            dict(zip(FAD_COLUMNS, row), error=res.error)
            for tag in sorted(results_by_tag)
            for row, res in zip(
                fad_table_rows(results_by_tag[tag]), results_by_tag[tag]
            )
        ],
    )
    paths.append(json_path)

    for tag in sorted(results_by_tag):
        results = results_by_tag[tag]
        emotions = [*EMOTIONS, "all"]
        series = []
        for emotion in emotions:
            points = [
                (r.layer, r.score)
                for r in results
                if r.emotion == emotion and r.score is not None
            ]
            if points:
                series.append(
                    (emotion, [p[0] for p in points], [p[1] for p in points])
                )
        svg_path = out_dir / f"fad_{tag}.svg"
        svg_path.parent.mkdir(parents=True, exist_ok=True)
        svg_path.write_text(
            svg_line_chart(
                series,
                title=f"Layerwise speech-music FAD ({tag})",
                x_label="layer",
                y_label="FAD",
            )
        )
        paths.append(svg_path)
    return paths


# ---------------------------------------------------------------------------
# SVG line chart
# ---------------------------------------------------------------------------


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def svg_line_chart(
    series,
    *,
    title: str,
    x_label: str,
    y_label: str,
    width: int = 640,
    height: int = 400,
) -> str:
    """Static line chart; output depends only on the arguments.

    ``series`` is a list of (label, xs, ys). Coordinates are emitted with
    fixed precision so identical inputs give identical bytes.
    """
    margin_l, margin_r, margin_t, margin_b = 60, 150, 40, 50
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    x_lo, x_hi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y_lo, y_hi = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    y_pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def px(x: float) -> float:
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return margin_t + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    def f(v: float) -> str:
        return format(v, ".2f")

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" '
        f'x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
    ]
    for tick in _ticks(x_lo, x_hi):
        x = px(tick)
        parts.append(
            f'<line x1="{f(x)}" y1="{margin_t + plot_h}" x2="{f(x)}" '
            f'y2="{margin_t + plot_h + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{f(x)}" y="{margin_t + plot_h + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{format(tick, ".4g")}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        y = py(tick)
        parts.append(
            f'<line x1="{margin_l - 5}" y1="{f(y)}" x2="{margin_l}" '
            f'y2="{f(y)}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{margin_l - 8}" y="{f(y + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{format(tick, ".4g")}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w // 2}" y="{height - 10}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="13">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{margin_t + plot_h // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {margin_t + plot_h // 2})">{y_label}</text>'
    )

    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{f(px(x))},{f(py(y))}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{points}"/>'
        )
        legend_y = margin_t + 16 * i
        parts.append(
            f'<line x1="{margin_l + plot_w + 10}" y1="{legend_y + 6}" '
            f'x2="{margin_l + plot_w + 30}" y2="{legend_y + 6}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{margin_l + plot_w + 35}" y="{legend_y + 10}" '
            f'font-family="sans-serif" font-size="12">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
