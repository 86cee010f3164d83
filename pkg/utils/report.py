"""
Run artifacts: CSV tables, JSON documents and small SVG plots.

Every file carries the same metadata (artifact version, command, resolved config,
master seed, wall-clock duration):
- CSV: '# key: value' preamble lines, then the header row; column 'schema' first
- JSON: top-level 'meta' block
- SVG: matplotlib <metadata>, with the JSON-encoded metadata as dc:description

SVGs are drawn with matplotlib on the Agg backend; text stays as text and element ids
are salted.
"""

from __future__ import annotations

import io
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from utils.config import VERSION

# Column order is part of each schema.
SCHEMAS: Dict[str, List[str]] = {
    "qfi/1": ["d", "n", "state", "trace_qfi", "trace_inverse", "bound", "gap", "defect", "min_eig", "max_eig"],
    "approx/1": ["repeat", "d", "n", "m", "eps", "q", "low", "high", "violated"],
    "simulate/1": [
        "d", "n", "N", "state", "measurement", "trials", "excluded",
        "trace_mse", "n_times_trace", "bound", "ratio", "crb", "scaled", "seed",
    ],
    "verify/1": ["name", "passed", "value", "threshold", "seconds", "detail"],
}


def run_meta(command: str, config: Dict[str, Any], seed: int, seconds: float) -> Dict[str, Any]:
    return {
        "version": VERSION,
        "command": command,
        "config": config,
        "seed": int(seed),
        "duration_s": round(float(seconds), 3),
        "created": datetime.now().isoformat(timespec="seconds"),
    }


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def to_json_text(payload: Dict[str, Any], meta: Optional[Dict[str, Any]] = None) -> str:
    doc = {"meta": meta, **payload} if meta is not None else payload
    return json.dumps(_jsonable(doc), ensure_ascii=False, indent=2)


def write_json(payload: Dict[str, Any], path: str | Path, meta: Optional[Dict[str, Any]] = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(to_json_text(payload, meta) + "\n", encoding="utf-8")
    print(f"💾 Sparade {p}")
    return p


def write_csv(rows: Sequence[Dict[str, Any]], path: str | Path, schema: str, meta: Dict[str, Any]) -> Path:
    if schema not in SCHEMAS:
        raise KeyError(f"write_csv: unknown schema {schema!r}")
    columns = SCHEMAS[schema]
    df = pd.DataFrame(list(rows), columns=columns)
    df.insert(0, "schema", schema)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="") as f:
        for key, value in meta.items():
            text = json.dumps(_jsonable(value), ensure_ascii=False) if isinstance(value, (dict, list)) else value
            f.write(f"# {key}: {text}\n")
        df.to_csv(f, index=False, lineterminator="\n")
    print(f"💾 Sparade {p}")
    return p


def read_csv(path: str | Path) -> pd.DataFrame:
    """Läser tabelldelen av en CSV från write_csv (preamble hoppas över)."""
    return pd.read_csv(path, comment="#")


# ---------- SVG ----------
_FIGSIZE = (6.4, 4.0)
# Textnoder i klartext och stabila id:n, så två körningar ger samma SVG.
_SVG_RC = {"svg.fonttype": "none", "svg.hashsalt": "sudest"}


def _svg_text(fig, title: str, meta: Dict[str, Any]) -> str:
    buf = io.StringIO()
    fig.savefig(
        buf,
        format="svg",
        metadata={
            "Title": title,
            "Description": json.dumps(_jsonable(meta), ensure_ascii=False),
            "Creator": f"sudest {VERSION}",
            "Date": None,
        },
    )
    plt.close(fig)
    return buf.getvalue()


def render_line_svg(
    xs: Sequence[float],
    ys: Sequence[float],
    title: str,
    xlabel: str,
    ylabel: str,
    meta: Dict[str, Any],
    reference: Optional[float] = None,
) -> str:
    """Linje med punktmarkörer; `reference` ritas som streckad horisontell linje (t.ex. gränsen)."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        ax.plot(xs, ys, marker="o", color="tab:blue", label=ylabel)
        if reference is not None:
            ax.axhline(reference, color="tab:red", linestyle="--", label=f"{reference:.6g}")
        ax.set_xticks(list(xs))
        ax.set_ylim(bottom=0.0)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(loc="lower right")
        fig.tight_layout()
        return _svg_text(fig, title, meta)


def render_histogram_svg(
    values: Sequence[float],
    title: str,
    xlabel: str,
    meta: Dict[str, Any],
    bins: int = 30,
    markers: Sequence[float] = (),
) -> str:
    """Histogram; `markers` ritas som streckade vertikala linjer (t.ex. +-eps)."""
    values = np.asarray(values, dtype=float)
    lo = min([float(values.min())] + [float(m) for m in markers])
    hi = max([float(values.max())] + [float(m) for m in markers])
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        ax.hist(values, bins=bins, range=(lo, hi) if hi > lo else None, color="tab:blue", edgecolor="white")
        for m in markers:
            ax.axvline(float(m), color="tab:red", linestyle="--")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        fig.tight_layout()
        return _svg_text(fig, title, meta)


def write_svg(svg: str, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(svg, encoding="utf-8")
    print(f"💾 Sparade {p}")
    return p
