"""Builders turning plain-dict descriptions into kernels, densities, costs and drift laws.

Used by the configuration layer and by the canonical acceptance experiments.
Every builder rejects unknown keys.
"""
from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from .kernels import Kernel
from .spectral import GridField, grid_coords

__all__ = [
    "ConfigError",
    "check_keys",
    "build_kernel",
    "build_density",
    "build_terminal_cost",
    "build_drift_law",
    "build_running_cost",
    "ACCEPTANCE_KERNEL",
    "acceptance_density",
    "hopf_cole_problem",
]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        path = path.lstrip(".")
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


def check_keys(d: Mapping, allowed: set, path: str, required: set = frozenset()):
    if not isinstance(d, Mapping):
        raise ConfigError(path, f"expected a mapping, got {type(d).__name__}")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", f"unknown key (allowed: {', '.join(sorted(allowed))})")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{path}.{sorted(missing)[0]}", "required key missing")


def _num(d, key, path, default=None, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"{path}.{key}", "required number missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", f"expected a finite number, got {v!r}")
    bad = (v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi))
    if bad:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"{path}.{key}", f"value {v} outside the legal range {lb}{lo:g}, {hi:g}{rb}")
    return float(v)


def build_kernel(spec: Mapping, dim: int, path: str = "kernel") -> Kernel:
    """``{"form": "Zero" | "SineSeries" | "BiotSavart2d" | "BesselSingular", ...}``."""
    check_keys(spec, {"form", "amplitudes", "a"}, path, {"form"})
    form = spec["form"]
    if form == "Zero":
        return Kernel.zero(dim)
    if form == "SineSeries":
        if dim != 1:
            raise ConfigError(f"{path}.form", "SineSeries kernels are one-dimensional")
        amps = spec.get("amplitudes")
        if not isinstance(amps, Mapping) or not amps:
            raise ConfigError(f"{path}.amplitudes", "expected a non-empty mapping mode -> amplitude")
        out = {}
        for k, v in amps.items():
            try:
                m = int(k)
            except ValueError:
                raise ConfigError(f"{path}.amplitudes.{k}", "mode must be a positive integer") from None
            if m < 1:
                raise ConfigError(f"{path}.amplitudes.{k}", "mode must be a positive integer")
            out[m] = _num(amps, k, f"{path}.amplitudes")
        return Kernel.sine_series(out)
    if form == "BiotSavart2d":
        if dim != 2:
            raise ConfigError(f"{path}.form", "BiotSavart2d needs d = 2")
        return Kernel.biot_savart()
    if form == "BesselSingular":
        return Kernel.bessel_singular(_num(spec, "a", path, lo=0.0))
    raise ConfigError(f"{path}.form", f"unknown kernel form {form!r}")


def _bump(r):
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def build_density(spec: Mapping, resolution: int, dim: int, length: float = 1.0, path: str = "p0") -> GridField:
    """Probability density on the grid, normalised to unit mass.

    Formulas: ``uniform``; ``cosine`` (``1 + amplitude cos(2 pi mode x_1 / L)``);
    ``bump`` (smooth compact bump of ``radius`` at ``centre``); ``gaussian``.
    ``{"file": path}`` loads a binary field.
    """
    if "file" in spec:
        from .io import read_field

        check_keys(spec, {"file"}, path)
        f = read_field(spec["file"])
        if f.resolution != resolution or f.dim != dim or abs(f.length - length) > 1e-12:
            raise ConfigError(f"{path}.file", "field grid does not match the run grid")
        vals = f.values
    else:
        check_keys(spec, {"formula", "amplitude", "mode", "centre", "radius", "sigma"}, path, {"formula"})
        X = grid_coords(resolution, dim, length)
        form = spec["formula"]
        c = spec.get("centre", length / 2)
        if form == "uniform":
            vals = np.ones((resolution,) * dim)
        elif form == "cosine":
            a = _num(spec, "amplitude", path, 0.5, lo=0.0, hi=1.0)
            m = int(_num(spec, "mode", path, 1, lo=1))
            vals = 1 + a * np.cos(2 * np.pi * m * X[0] / length)
        elif form == "bump":
            rad = _num(spec, "radius", path, 0.5, lo=0.0, lo_open=True)
            r = np.sqrt(sum((x - c) ** 2 for x in X)) / rad
            vals = _bump(r)
        elif form == "gaussian":
            s = _num(spec, "sigma", path, 0.25, lo=0.0, lo_open=True)
            vals = np.exp(-sum((x - c) ** 2 for x in X) / (2 * s * s))
        else:
            raise ConfigError(f"{path}.formula", f"unknown density formula {form!r}")
    if vals.min() < 0:
        raise ConfigError(path, "density must be non-negative")
    f = GridField(vals, dim, length)
    mass = f.integral()
    if mass <= 0:
        raise ConfigError(path, "density has zero mass")
    return f * (1.0 / mass)


def build_terminal_cost(spec: Mapping, resolution: int, dim: int, length: float, path: str = "g") -> GridField:
    """``zero``, ``constant``, ``gaussian_well`` or ``cusp`` (``|sin|^(1+eta)`` profile, gradient in C^eta only)."""
    check_keys(spec, {"formula", "value", "depth", "shift", "width", "eta", "amplitude"}, path, {"formula"})
    X = grid_coords(resolution, dim, length)
    c = length / 2
    form = spec["formula"]
    if form == "zero":
        vals = np.zeros((resolution,) * dim)
    elif form == "constant":
        vals = np.full((resolution,) * dim, _num(spec, "value", path))
    elif form == "gaussian_well":
        depth = _num(spec, "depth", path, 1.5)
        shift = _num(spec, "shift", path, 0.5)
        w = _num(spec, "width", path, 0.5, lo=0.0, lo_open=True)
        r2 = (X[0] - c - shift) ** 2 + sum((x - c) ** 2 for x in X[1:])
        vals = -depth * np.exp(-r2 / (2 * w * w))
    elif form == "cusp":
        eta = _num(spec, "eta", path, 0.5, lo=0.0, hi=1.0, lo_open=True)
        amp = _num(spec, "amplitude", path, 1.0)
        s = np.abs(np.sin(np.pi * (X[0] - c) / length)) * length / np.pi
        vals = amp * s ** (1 + eta)
    else:
        raise ConfigError(f"{path}.formula", f"unknown terminal cost {form!r}")
    return GridField(vals, dim, length)


def build_drift_law(spec: Mapping | None, dim: int, path: str = "b") -> Callable | None:
    """``none``, ``constant`` (vector ``c``) or ``density_push`` (``strength tanh(u) e_1``)."""
    if spec is None:
        return None
    check_keys(spec, {"form", "vector", "strength"}, path, {"form"})
    form = spec["form"]
    if form == "none":
        return None
    if form == "constant":
        vec = spec.get("vector")
        if not isinstance(vec, (list, tuple)) or len(vec) != dim:
            raise ConfigError(f"{path}.vector", f"expected a list of {dim} numbers")
        c = np.array([_num({"v": v}, "v", f"{path}.vector") for v in vec])

        def law(x, u, c=c):
            return np.broadcast_to(c, np.shape(u) + (dim,)).copy()

        return law
    if form == "density_push":
        s = _num(spec, "strength", path)
        e1 = np.eye(dim)[0]

        def law(x, u, s=s):
            return s * np.tanh(np.asarray(u))[..., None] * e1

        return law
    raise ConfigError(f"{path}.form", f"unknown drift law {form!r}")


def build_running_cost(spec: Mapping | None, path: str = "f") -> Callable | None:
    """``none`` or ``congestion`` (``strength tanh(u)``, scalar valued)."""
    if spec is None:
        return None
    check_keys(spec, {"form", "strength"}, path, {"form"})
    if spec["form"] == "none":
        return None
    if spec["form"] == "congestion":
        s = _num(spec, "strength", path)
        return lambda x, u, s=s: s * np.tanh(np.asarray(u))
    raise ConfigError(f"{path}.form", f"unknown running cost {spec['form']!r}")


# attractive kernel K(x) = -15 sin(2 pi x); amplitude above 4 pi, so the force visibly reshapes p by T = 0.1
ACCEPTANCE_KERNEL = {"form": "SineSeries", "amplitudes": {"1": -15.0}}


def acceptance_density(resolution: int) -> GridField:
    return build_density({"formula": "cosine", "amplitude": 0.5, "mode": 1}, resolution, 1)


def hopf_cole_problem(resolution: int = 256, length: float = 8.0, T: float = 0.5, eta: float = 0.5):
    """Decoupled game on the box: bump initial law, smooth Gaussian-well terminal cost."""
    from .mfg import MfgProblem

    p0 = build_density({"formula": "bump", "radius": 0.5}, resolution, 1, length)
    g = build_terminal_cost({"formula": "gaussian_well", "depth": 1.5, "shift": 0.5, "width": 0.5},
                            resolution, 1, length)
    return MfgProblem(g, p0, T, eta=eta)
