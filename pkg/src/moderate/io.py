"""File formats: binary fields and trajectories, solution archives, CSV tables and SVG plots."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .particles import ParticleEnsemble
from .spectral import GridField

__all__ = [
    "write_field",
    "read_field",
    "write_field_csv",
    "write_trajectory",
    "read_trajectory",
    "write_archive",
    "read_archive",
    "write_csv",
    "write_json",
    "loglog_svg",
    "file_sha256",
]

_FIELD_MAGIC = b"MGF1"
_FIELD_HEADER = struct.Struct("<4sIIIdd")      # magic, dim, resolution, ncomp, time, length
_TRAJ_MAGIC = b"MPT1"
_TRAJ_HEADER = struct.Struct("<4sQIdQQI")      # magic, N, d, t, seed, step, has_increments


def write_field(path, f: GridField, t: float = 0.0) -> None:
    """Little-endian header ``{dim, resolution, ncomp, time, length}`` then float64 values."""
    hdr = _FIELD_HEADER.pack(_FIELD_MAGIC, f.dim, f.resolution, f.ncomp if f.is_vector else 0, float(t), f.length)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> GridField:
    """Inverse of :func:`write_field`; the stored time is available as ``read_field.last_time``."""
    data = Path(path).read_bytes()
    magic, dim, M, ncomp, t, length = _FIELD_HEADER.unpack_from(data)
    if magic != _FIELD_MAGIC:
        raise ValueError(f"{path}: not a field file")
    shape = ((ncomp,) if ncomp else ()) + (M,) * dim
    vals = np.frombuffer(data, dtype="<f8", offset=_FIELD_HEADER.size)
    if vals.size != math.prod(shape):
        raise ValueError(f"{path}: expected {math.prod(shape)} values, found {vals.size}")
    read_field.last_time = t
    return GridField(vals.reshape(shape).copy(), dim, length)


def write_field_csv(path, f: GridField, max_points: int = 1 << 16) -> Path:
    """One line per grid point: coordinates ``x1..xd`` then the component values."""
    if f.resolution**f.dim > max_points:
        raise ValueError(f"field has {f.resolution**f.dim} points; CSV export is limited to {max_points}")
    X = [x.ravel() for x in f.coords()]
    comps = f.values.reshape(f.ncomp, -1) if f.is_vector else f.values.reshape(1, -1)
    names = [f"x{a + 1}" for a in range(f.dim)]
    names += [f"v{c + 1}" for c in range(len(comps))] if f.is_vector else ["value"]
    cols = X + list(comps)
    rows = [dict(zip(names, (repr(float(c[i])) for c in cols))) for i in range(len(X[0]))]
    return write_csv(path, rows, names)


def write_trajectory(path, ens: ParticleEnsemble, increments: np.ndarray | None = None) -> None:
    """Header ``{N, d, t, seed}`` then positions; increments follow when retained."""
    hdr = _TRAJ_HEADER.pack(_TRAJ_MAGIC, ens.N, ens.dim, ens.t, ens.seed, ens.step, increments is not None)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(np.ascontiguousarray(ens.positions, dtype="<f8").tobytes())
        if increments is not None:
            fh.write(np.ascontiguousarray(increments, dtype="<f8").tobytes())


def read_trajectory(path) -> tuple[ParticleEnsemble, np.ndarray | None]:
    data = Path(path).read_bytes()
    magic, N, d, t, seed, step, has_inc = _TRAJ_HEADER.unpack_from(data)
    if magic != _TRAJ_MAGIC:
        raise ValueError(f"{path}: not a trajectory file")
    vals = np.frombuffer(data, dtype="<f8", offset=_TRAJ_HEADER.size)
    X = vals[: N * d].reshape(N, d).copy()
    inc = vals[N * d:].reshape(-1, N, d).copy() if has_inc else None
    return ParticleEnsemble(X, t=t, seed=seed, step=step), inc


def write_archive(directory, sol, name: str = "p") -> list[Path]:
    """Snapshots ``{name}_0000.bin, ...`` plus ``{name}_meta.json``; returns the files written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for i, (t, f) in enumerate(zip(sol.times, sol.fields)):
        p = d / f"{name}_{i:04d}.bin"
        write_field(p, f, float(t))
        out.append(p)
    meta = {"times": [float(t) for t in sol.times], "solver_meta": _jsonable(sol.solver_meta)}
    out.append(write_json(d / f"{name}_meta.json", meta))
    return out


def read_archive(directory, name: str = "p"):
    from .pde import MildSolution

    d = Path(directory)
    meta = json.loads((d / f"{name}_meta.json").read_text())
    fields = [read_field(d / f"{name}_{i:04d}.bin") for i in range(len(meta["times"]))]
    return MildSolution(np.array(meta["times"]), fields, meta["solver_meta"])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    return x


def write_json(path, obj) -> Path:
    p = Path(path)
    p.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return p


def write_csv(path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> Path:
    p = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(p, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return p


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def loglog_svg(path, series: dict, rho: float | None = None, title: str = "", width: int = 640,
               height: int = 420) -> Path:
    """Log-log error plot.

    ``series`` maps a label to ``{"N": [...], "err": [...], "slope": s, "intercept": c}``.
    Points, the fitted line and (when given) a reference line of slope
    ``-rho`` through the first fitted point are drawn with text annotations.
    """
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    allN = np.concatenate([np.asarray(s["N"], float) for s in series.values()])
    allE = np.concatenate([np.asarray(s["err"], float) for s in series.values()])
    x0, x1 = np.log10(allN.min()) - 0.1, np.log10(allN.max()) + 0.1
    y0, y1 = np.log10(allE.min()) - 0.3, np.log10(allE.max()) + 0.3
    ml, mr, mt, mb = 70, 20, 40, 50

    def px(lx):
        return ml + (lx - x0) / (x1 - x0) * (width - ml - mr)

    def py(ly):
        return height - mb - (ly - y0) / (y1 - y0) * (height - mt - mb)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
             f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle">log10 N</text>',
             f'<text x="16" y="{height / 2:.1f}" transform="rotate(-90 16 {height / 2:.1f})" '
             f'text-anchor="middle">log10 sup_t error</text>']
    for k in range(math.ceil(x0), math.floor(x1) + 1):
        parts.append(f'<text x="{px(k):.1f}" y="{height - mb + 16}" text-anchor="middle">{k}</text>')
    for k in np.arange(math.ceil(y0 * 2) / 2, y1, 0.5):
        parts.append(f'<text x="{ml - 6}" y="{py(k) + 4:.1f}" text-anchor="end">{k:g}</text>')
    for i, (lab, s) in enumerate(series.items()):
        c = colours[i % len(colours)]
        lN, lE = np.log10(np.asarray(s["N"], float)), np.log10(np.asarray(s["err"], float))
        for a, b in zip(lN, lE):
            parts.append(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="3.5" fill="{c}"/>')
        slope, icpt = s["slope"], s["intercept"]
        fy = lambda lx: (icpt + slope * lx * math.log(10)) / math.log(10)
        parts.append(f'<line x1="{px(lN[0]):.1f}" y1="{py(fy(lN[0])):.1f}" x2="{px(lN[-1]):.1f}" '
                     f'y2="{py(fy(lN[-1])):.1f}" stroke="{c}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - mr - 8}" y="{mt + 16 * (i + 1)}" text-anchor="end" fill="{c}" '
                     f'class="fit">{lab}: fitted slope {slope:.3f}</text>')
        if rho is not None:
            ry = lambda lx: fy(lN[0]) - rho * (lx - lN[0])
            parts.append(f'<line x1="{px(lN[0]):.1f}" y1="{py(ry(lN[0])):.1f}" x2="{px(lN[-1]):.1f}" '
                         f'y2="{py(ry(lN[-1])):.1f}" stroke="{c}" stroke-dasharray="5,4" stroke-width="1"/>')
    if rho is not None:
        n = len(series)
        parts.append(f'<text x="{width - mr - 8}" y="{mt + 16 * (n + 1)}" text-anchor="end" class="rho">'
                     f'reference slope -rho = {-rho:.3f} (dashed)</text>')
    parts.append("</svg>")
    p = Path(path)
    p.write_text("\n".join(parts) + "\n")
    return p
