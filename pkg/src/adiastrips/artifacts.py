"""Deterministic text artifacts: CSV tables, JSON reports, SVG plots, manifests."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .strip_solver import StripField

FLOAT_FMT = "%.17g"


class ArtifactError(ValueError):
    """Missing or malformed artifact."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT % float(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """``(header, float array)``; raises :class:`ArtifactError` on malformed input."""
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise ArtifactError(f"empty CSV {path}")
    header = lines[0].split(",")
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise ArtifactError(f"{path}: {exc}") from None
    if data.size and (data.ndim != 2 or data.shape[1] != len(header)):
        raise ArtifactError(f"{path}: ragged rows")
    if not text.endswith("\n"):
        raise ArtifactError(f"{path}: truncated (no final newline)")
    return header, data.reshape(-1, len(header))


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, ensure_ascii=False, allow_nan=True) + "\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: {exc}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# strips


def strip_header(dim: int) -> list:
    return ["s", "t"] + [f"q{k}" for k in range(dim)] + [f"p{k}" for k in range(dim)]


def write_strip(path, u: StripField) -> Path:
    """One row per node, s-major; Q is wrapped into ``[0, 1)``."""
    d = u.dim
    S, T = np.meshgrid(u.s, u.t, indexing="ij")
    Qw = u.Q - np.floor(u.Q)
    cols = [S.ravel(), T.ravel()] + [Qw[..., k].ravel() for k in range(d)] + [u.P[..., k].ravel() for k in range(d)]
    return write_csv(path, strip_header(d), np.column_stack(cols))


def read_strip(path, shape=None) -> StripField:
    """Inverse of :func:`write_strip`; Q is unwrapped with period 1."""
    header, data = read_csv(path)
    if len(header) < 4 or (len(header) - 2) % 2 or header[:2] != ["s", "t"]:
        raise ArtifactError(f"{path}: not a strip file")
    d = (len(header) - 2) // 2
    if header != strip_header(d):
        raise ArtifactError(f"{path}: unexpected columns {header}")
    s = np.unique(data[:, 0])
    t = np.unique(data[:, 1])
    if shape is not None and (s.size, t.size) != tuple(shape):
        raise ArtifactError(f"{path}: grid {s.size}x{t.size}, expected {shape[0]}x{shape[1]}")
    if data.shape[0] != s.size * t.size or s.size < 3 or t.size < 3:
        raise ArtifactError(f"{path}: incomplete grid ({data.shape[0]} rows)")
    Q = data[:, 2 : 2 + d].reshape(s.size, t.size, d)
    P = data[:, 2 + d :].reshape(s.size, t.size, d)
    Q = np.unwrap(Q, period=1.0, axis=1)
    base = np.unwrap(Q[:, 0], period=1.0, axis=0)
    Q = Q + (base - Q[:, 0])[:, None, :]
    return StripField(s, t, Q, P)


# ---------------------------------------------------------------------------
# SVG


def _polyline(xs, ys, box, color, width=1.5):
    x0, x1, y0, y1 = box
    W, H, pad = 640.0, 400.0, 40.0
    sx = (W - 2 * pad) / (x1 - x0 if x1 > x0 else 1.0)
    sy = (H - 2 * pad) / (y1 - y0 if y1 > y0 else 1.0)
    pts = " ".join(
        f"{pad + (x - x0) * sx:.2f},{H - pad - (y - y0) * sy:.2f}" for x, y in zip(xs, ys) if math.isfinite(y)
    )
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'


def line_plot_svg(path, series, title="", xlabel="", ylabel="") -> Path:
    """Fixed 640x400 viewbox; ``series`` is ``[(label, xs, ys, color), ...]``."""
    finite = [np.asarray(ys, float)[np.isfinite(ys)] for _, _, ys, _ in series]
    allx = np.concatenate([np.asarray(xs, float) for _, xs, _, _ in series])
    ally = np.concatenate(finite) if finite else np.zeros(1)
    if ally.size == 0:
        ally = np.zeros(1)
    box = (float(allx.min()), float(allx.max()), float(ally.min()), float(ally.max()))
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 640 400" width="640" height="400">',
        '<rect x="0" y="0" width="640" height="400" fill="white"/>',
        '<rect x="40" y="40" width="560" height="320" fill="none" stroke="#888"/>',
        f'<text x="320" y="24" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="320" y="392" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="200" font-size="12" transform="rotate(-90 12 200)">{ylabel}</text>',
        f'<text x="40" y="376" font-size="10">{box[0]:.3g}</text>',
        f'<text x="600" y="376" text-anchor="end" font-size="10">{box[1]:.3g}</text>',
        f'<text x="36" y="360" text-anchor="end" font-size="10">{box[2]:.3g}</text>',
        f'<text x="36" y="46" text-anchor="end" font-size="10">{box[3]:.3g}</text>',
    ]
    for i, (label, xs, ys, color) in enumerate(series):
        parts.append(_polyline(xs, ys, box, color))
        parts.append(f'<text x="{600 - 4}" y="{56 + 14 * i}" text-anchor="end" font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


# ---------------------------------------------------------------------------
# manifests


def write_manifest(out_dir, command, config_path, seed, version, wall_time, extra=None) -> Path:
    """Record every file in ``out_dir`` (except the manifest) with its sha256."""
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out_dir).as_posix()] = sha256(p)
    manifest = {
        "command": command,
        "config": None if config_path is None else str(config_path),
        "output_dir": str(out_dir),
        "seed": seed,
        "version": version,
        "wall_time": wall_time,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    return write_json(out_dir / "manifest.json", manifest)
