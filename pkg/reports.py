"""
Report Emission
Tidy CSV tables, the JSON summary, and the SHA-256 manifest of a run directory.

All CSVs are RFC-4180 with LF line endings and repr() floats, so identical
inputs give byte-identical files.
"""

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

from calculus import ItoReport

REPORT_COLUMNS = [
    "replicate", "functional", "dt", "lhs", "term_time", "term_gen",
    "term_quad", "term_mart", "residual", "residual_rel",
]
REPLICATE_COLUMNS = ["replicate", "final_mass", "extinct", "qv_phi0"]
MANIFEST_NAME = "manifest.json"
FAILED_MARKER = ".failed"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_report_csv(path: Union[str, Path], reports: Sequence[ItoReport]) -> Path:
    return write_rows_csv(path, REPORT_COLUMNS, (
        [r.replicate, r.functional, r.dt, r.lhs, r.term_time, r.term_generator,
         r.term_quadratic, r.term_martingale, r.residual, r.residual_rel]
        for r in reports
    ))


def read_report_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open("r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _json_safe(value.item())
    return value


def write_summary_json(path: Union[str, Path], summary: Mapping[str, Any]) -> Path:
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as f:
        json.dump(_json_safe(summary), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def sha256_file(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(output_dir: Union[str, Path], files: Sequence[Union[str, Path]], meta: Mapping[str, Any]) -> Path:
    """manifest.json: run metadata plus a hash for every output file."""
    output_dir = Path(output_dir)
    entries = {}
    for file_path in sorted(Path(p) for p in files):
        entries[file_path.name] = sha256_file(file_path)
    manifest = dict(meta)
    manifest["files"] = entries
    return write_summary_json(output_dir / MANIFEST_NAME, manifest)


def check_manifest(output_dir: Union[str, Path]) -> List[str]:
    """Problems found re-hashing the listed files; empty when everything matches."""
    output_dir = Path(output_dir)
    manifest_path = output_dir / MANIFEST_NAME
    if not manifest_path.exists():
        return [f"{manifest_path} not found"]
    with manifest_path.open("r", encoding="utf-8") as f:
        manifest = json.load(f)

    problems = []
    for name, digest in manifest.get("files", {}).items():
        file_path = output_dir / name
        if not file_path.exists():
            problems.append(f"{name}: missing")
        elif sha256_file(file_path) != digest:
            problems.append(f"{name}: hash mismatch")
    return problems


def mark_failed(output_dir: Union[str, Path], reason: str) -> Path:
    marker = Path(output_dir) / FAILED_MARKER
    marker.write_text(reason.rstrip() + "\n", encoding="utf-8")
    return marker


def clear_failed(output_dir: Union[str, Path]):
    marker = Path(output_dir) / FAILED_MARKER
    if marker.exists():
        marker.unlink()
