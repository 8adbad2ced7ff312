"""
Run artifacts: Pareto CSV, JSONL histories, architecture manifests, weight
dumps, held-out and baseline reports, and the SVG plots.
"""
import json
import logging
import math
import re
from html import escape, unescape
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from core.exceptions import SchemaMismatch, ShapeMismatch
from models.genotype import GENE_NAMES, Genotype
from models.response import (
    ArchitectureManifest, BaselineEntry, EvalRecord, HoldoutReportEntry, IterationSnapshot, IterationTiming,
    ParetoEntry, WeightEntry, WeightsManifest,
)
from services.search_service import dominates

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PARETO_COLUMNS = ("genotype_hash",) + GENE_NAMES + ("measured_error", "param_count")


# Pareto CSV

def write_pareto_csv(path: PathLike, front: Iterable[Union[EvalRecord, ParetoEntry]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for item in front:
        row = {"genotype_hash": item.genotype_hash}
        row.update(item.genotype.labels())
        row["measured_error"] = item.measured_error
        row["param_count"] = item.param_count
        rows.append(row)
    pd.DataFrame(rows, columns=list(PARETO_COLUMNS)).to_csv(path, index=False)
    logger.info(f"Wrote {len(rows)} Pareto row(s) to {path}")
    return path


def read_pareto_csv(path: PathLike) -> List[ParetoEntry]:
    """Re-parse pareto.csv and check that its rows are mutually non-dominated"""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if tuple(df.columns) != PARETO_COLUMNS:
        raise SchemaMismatch(f"Unexpected pareto.csv columns: {list(df.columns)}")
    entries = [
        ParetoEntry(
            genotype_hash=row["genotype_hash"],
            genotype=Genotype.from_dict({gene: row[gene] for gene in GENE_NAMES}),
            measured_error=float(row["measured_error"]),
            param_count=int(row["param_count"]),
        )
        for _, row in df.iterrows()
    ]
    for a in entries:
        for b in entries:
            if dominates((a.measured_error, a.param_count), (b.measured_error, b.param_count)):
                raise SchemaMismatch(f"pareto.csv row {b.genotype_hash} is dominated by {a.genotype_hash}")
    return entries


# JSONL logs

def append_jsonl(path: PathLike, item: BaseModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(item.model_dump_json() + "\n")


def write_jsonl(path: PathLike, items: Iterable[BaseModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for item in items:
            handle.write(item.model_dump_json() + "\n")
    return path


def read_history(path: PathLike) -> List[IterationSnapshot]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [IterationSnapshot.model_validate_json(line) for line in lines if line.strip()]


def read_timings(path: PathLike) -> List[IterationTiming]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [IterationTiming.model_validate_json(line) for line in lines if line.strip()]


# Weights

def export_weights(state: Dict[str, np.ndarray], directory: PathLike,
                   filename: str = "weights.bin") -> WeightsManifest:
    """Flat little-endian float64 dump plus a JSON manifest of names, shapes and offsets"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        array = np.ascontiguousarray(state[name], dtype="<f8")
        entries.append(WeightEntry(name=name, shape=list(array.shape), offset=offset))
        chunks.append(array.ravel())
        offset += array.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    (directory / filename).write_bytes(flat.astype("<f8").tobytes())
    manifest = WeightsManifest(total=offset, entries=entries)
    (directory / Path(filename).with_suffix(".json").name).write_text(manifest.model_dump_json(indent=2),
                                                                      encoding="utf-8")
    return manifest


def load_weights(path: PathLike, manifest_path: Optional[PathLike] = None) -> Dict[str, np.ndarray]:
    path = Path(path)
    manifest_path = Path(manifest_path) if manifest_path else path.with_suffix(".json")
    manifest = WeightsManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    if flat.size != manifest.total:
        raise ShapeMismatch("load_weights", (flat.size,), (manifest.total,), detail=f"{path} is truncated")
    state = {}
    for entry in manifest.entries:
        size = int(np.prod(entry.shape)) if entry.shape else 1
        state[entry.name] = flat[entry.offset:entry.offset + size].reshape(entry.shape).astype(np.float64)
    return state


# Architecture manifests

def write_manifest(path: PathLike, manifest: ArchitectureManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_manifest(path: PathLike) -> ArchitectureManifest:
    """Parse arch.json; an unknown gene option raises InvalidOption naming the gene"""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    Genotype.from_dict(payload.get("genotype") or {})
    return ArchitectureManifest.model_validate(payload)


# Reports

def write_test_report(path: PathLike, entries: Sequence[HoldoutReportEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [json.loads(entry.model_dump_json()) for entry in entries]
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def write_baselines_csv(path: PathLike, entries: Sequence[BaselineEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame([entry.model_dump(mode="json") for entry in entries],
                      columns=["name", "genotype_hash", "measured_error", "param_count", "status"])
    df.to_csv(path, index=False)
    return path


# SVG plots

def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return out_lo + (values - lo) / span * (out_hi - out_lo)


def line_chart_svg(series: Dict[str, Tuple[Sequence[float], Sequence[float]]], title: str,
                   x_label: str = "", y_label: str = "", width: int = 800, height: int = 400,
                   data_series: Optional[Dict[str, Sequence[float]]] = None) -> str:
    """Polyline chart with plain axes; `data_series` values are embedded verbatim as attributes"""
    margin = 60
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    finite_x = [x for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(y)]
    finite_y = [y for _, ys in series.values() for y in ys if math.isfinite(y)]
    x_lo, x_hi = (min(finite_x), max(finite_x)) if finite_x else (0.0, 1.0)
    y_lo, y_hi = (min(finite_y), max(finite_y)) if finite_y else (0.0, 1.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="12">{escape(x_label)}</text>',
        f'<text x="15" y="{height / 2}" font-size="12" transform="rotate(-90 15 {height / 2})" '
        f'text-anchor="middle">{escape(y_label)}</text>',
        f'<text x="{margin - 5}" y="{height - margin}" text-anchor="end" font-size="10">{y_lo:.4g}</text>',
        f'<text x="{margin - 5}" y="{margin + 4}" text-anchor="end" font-size="10">{y_hi:.4g}</text>',
    ]
    for i, (name, (xs, ys)) in enumerate(series.items()):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        keep = np.isfinite(ys)
        px = _scale(xs[keep], x_lo, x_hi, margin, width - margin)
        py = _scale(ys[keep], y_lo, y_hi, height - margin, margin)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        color = colors[i % len(colors)]
        attrs = f'class="series" data-name="{escape(name)}"'
        if data_series and name in data_series:
            attrs += f' data-series="{escape(json.dumps([float(v) for v in data_series[name]]))}"'
        parts.append(f'<polyline {attrs} fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(f'<text x="{width - margin}" y="{margin + 14 * i}" text-anchor="end" font-size="11" '
                     f'fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def convergence_svg(history: Sequence[IterationSnapshot]) -> str:
    iterations = [s.iteration for s in history]
    best = [s.best_error for s in history]
    return line_chart_svg(
        {"best measured error": (iterations, best)}, "Search convergence", "iteration", "validation MAE",
        data_series={"best measured error": best},
    )


def forecast_svg(times: Sequence[pd.Timestamp], actual: Sequence[float], forecast: Sequence[float],
                 title: str = "Forecast vs actual") -> str:
    x = np.arange(len(times), dtype=np.float64)
    return line_chart_svg(
        {"actual": (x, actual), "forecast": (x, forecast)}, title,
        f"{times[0]} .. {times[-1]}" if len(times) else "", "power",
        data_series={"actual": actual, "forecast": forecast},
    )


def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_series(svg_text: str, name: str) -> List[float]:
    """Values embedded in a chart's data-series attribute"""
    match = re.search(rf'data-name="{re.escape(escape(name))}" data-series="([^"]*)"', svg_text)
    if match is None:
        raise SchemaMismatch(f"No series named '{name}' in chart")
    return [float(v) for v in json.loads(unescape(match.group(1)))]
