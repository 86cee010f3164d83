"""
Run snapshots + diff utilities.

Purpose:
- Save each run as <output_dir>/<command>_<timestamp>.json and refresh latest_<command>.json.
- Load the previous latest snapshot if it exists.
- Compare this run's rows with the previous ones:
    Changed (value moved), New (configuration not seen before), Removed (missing now).
"""

from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from utils.report import to_json_text

SIMULATE_KEY = ("d", "n", "N", "state", "measurement")


# -------- Helpers -------------------------------------------------------------

def _norm(x: Any) -> str:
    return str(x).strip().lower() if x is not None else ""


def _row_key(row: Dict[str, Any], key_fields: Sequence[str]) -> Tuple[str, ...]:
    return tuple(_norm(row.get(k)) for k in key_fields)


def _as_float(x: Any) -> Optional[float]:
    try:
        return float(x)
    except (TypeError, ValueError):
        return None


def _to_map(rows: Iterable[Dict[str, Any]], key_fields: Sequence[str]) -> Dict[Tuple[str, ...], Dict[str, Any]]:
    return {_row_key(r, key_fields): r for r in rows or []}


def latest_path(output_dir: str | Path, command: str) -> Path:
    return Path(output_dir) / f"latest_{command}.json"


# -------- Public API ----------------------------------------------------------

def load_previous(file_path: str | Path) -> List[Dict[str, Any]]:
    """
    Raderna från en tidigare snapshot; tom lista om filen saknas eller inte går att läsa.
    """
    p = Path(file_path)
    if not p.exists():
        return []
    try:
        with p.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        print(f"⚠️ Kunde inte läsa {p}: {e}")
        return []
    if isinstance(data, dict) and isinstance(data.get("rows"), list):
        return list(data["rows"])
    if isinstance(data, list):
        return data
    return []


def save_snapshot(
    rows: List[Dict[str, Any]],
    command: str,
    output_dir: str | Path,
    meta: Dict[str, Any],
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Skriver <command>_<timestamp>.json och uppdaterar latest_<command>.json bredvid.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ts = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    path = out / f"{command}_{ts}.json"
    text = to_json_text({"rows": rows, **(extra or {})}, meta) + "\n"
    path.write_text(text, encoding="utf-8")
    latest_path(out, command).write_text(text, encoding="utf-8")
    print(f"💾 Snapshot {path}")
    return path


def compare_rows(
    current: List[Dict[str, Any]],
    previous: List[Dict[str, Any]],
    key_fields: Sequence[str] = SIMULATE_KEY,
    value_field: str = "n_times_trace",
    tol: float = 1e-12,
) -> Dict[str, Any]:
    """
    Diff two row sets keyed by `key_fields`:
      {
        "changed": [{"before": {...}, "after": {...}, "delta": +0.0123}, ...],
        "new":     [{...}, ...],
        "removed": [{...}, ...],
        "summary": {"changed": N, "new": M, "removed": K, "unchanged": U}
      }
    """
    cur_map = _to_map(current, key_fields)
    prev_map = _to_map(previous, key_fields)

    changed: List[Dict[str, Any]] = []
    new: List[Dict[str, Any]] = []
    removed: List[Dict[str, Any]] = []
    unchanged = 0

    for k, cur in cur_map.items():
        prev = prev_map.get(k)
        if prev is None:
            new.append(cur)
            continue
        a, b = _as_float(prev.get(value_field)), _as_float(cur.get(value_field))
        if a is None or b is None:
            if json.dumps(cur, sort_keys=True, default=str) != json.dumps(prev, sort_keys=True, default=str):
                changed.append({"before": prev, "after": cur, "delta": None})
            else:
                unchanged += 1
        elif abs(b - a) > tol:
            changed.append({"before": prev, "after": cur, "delta": b - a})
        else:
            unchanged += 1

    for k, prev in prev_map.items():
        if k not in cur_map:
            removed.append(prev)

    return {
        "changed": changed,
        "new": new,
        "removed": removed,
        "summary": {"changed": len(changed), "new": len(new), "removed": len(removed), "unchanged": unchanged},
    }


def format_diff(diff: Dict[str, Any], key_fields: Sequence[str] = SIMULATE_KEY, value_field: str = "n_times_trace") -> str:
    s = diff["summary"]
    lines = [f"Changed: {s['changed']} · New: {s['new']} · Removed: {s['removed']} · Unchanged: {s['unchanged']}"]

    def label(row):
        return ", ".join(f"{k}={row.get(k)}" for k in key_fields)

    for c in diff["changed"]:
        delta = "" if c["delta"] is None else f" ({c['delta']:+.6g})"
        lines.append(f"  ~ {label(c['after'])}: {c['before'].get(value_field)} -> {c['after'].get(value_field)}{delta}")
    lines += [f"  + {label(r)}" for r in diff["new"]]
    lines += [f"  - {label(r)}" for r in diff["removed"]]
    return "\n".join(lines)
