"""JSON run configurations for the command-line tool.

Each command reads one JSON document whose sections mirror the library
configuration types.  Unknown keys are rejected and every number is range
checked before any solver sees it; errors carry the dotted path of the
offending field.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .function_spaces import NormSpec
from .kernels import Kernel
from .mfg import MfgConfig, MfgProblem
from .pde import SolverConfig
from .rates import ExperimentPlan, RateParams
from .setups import (ConfigError, _num, build_density, build_drift_law, build_kernel, build_running_cost,
                     build_terminal_cost, check_keys)
from .spectral import GridField

__all__ = [
    "load_config",
    "config_hash",
    "parse_norm",
    "SolveJob",
    "SimulateJob",
    "MfgJob",
    "parse_solve",
    "parse_simulate",
    "parse_plan",
    "parse_mfg",
]


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(str(path), "top level must be an object")
    return cfg


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON encoding."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _int(d, key, path, default=None, lo=-math.inf, hi=math.inf):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {v!r}")
    if not lo <= v <= hi:
        raise ConfigError(f"{path}.{key}", f"value {v} outside the legal range [{lo:g}, {hi:g}]")
    return v


def _choice(d, key, path, options, default=None):
    v = d.get(key, default)
    if v not in options:
        raise ConfigError(f"{path}.{key}", f"expected one of {', '.join(map(str, options))}, got {v!r}")
    return v


def _seed(cfg, path="seed"):
    return _int(cfg, "seed", "", 0, lo=0, hi=2**63 - 1) if "seed" in cfg else 0


def parse_grid(d, path="grid") -> tuple[int, int, float]:
    check_keys(d, {"dim", "resolution", "length"}, path, {"resolution"})
    dim = _int(d, "dim", path, 1, lo=1, hi=3)
    M = _int(d, "resolution", path, lo=8, hi=2**14)
    if M % 2:
        raise ConfigError(f"{path}.resolution", "must be even")
    L = _num(d, "length", path, 1.0, lo=0.0, lo_open=True)
    return dim, M, L


def parse_model(d, path="model") -> RateParams:
    """Exponents ``beta, q, lam, delta, eta`` of the rate formulas."""
    check_keys(d, {"beta", "q", "lam", "delta", "eta", "d"}, path, {"beta"})
    beta = _num(d, "beta", path, lo=0.0, hi=1.0)
    q = _num(d, "q", path, 2.0, lo=1.0)
    lam = _num(d, "lam", path, 0.5, lo=0.0)
    delta = _num(d, "delta", path, 0.01, lo=0.0, lo_open=True)
    eta = _num(d, "eta", path, 0.5, lo=0.0, hi=1.0, lo_open=True) if "eta" in d else None
    dim = _int(d, "d", path, 1, lo=1, hi=3)
    try:
        return RateParams(beta, dim, q, lam, eta, delta)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_norm(d, path="norm") -> NormSpec:
    check_keys(d, {"kind", "s", "lam", "q", "r", "gamma"}, path, {"kind"})
    kind = _choice(d, "kind", path, NormSpec.KINDS)
    kw = {}
    if "q" in d:
        kw["q"] = _num(d, "q", path, lo=1.0)
    if "r" in d:
        kw["r"] = _num(d, "r", path, lo=1.0)
    if "s" in d or "lam" in d:
        key = "s" if "s" in d else "lam"
        kw["s"] = _num(d, key, path)
    if "gamma" in d:
        kw["gamma"] = _num(d, "gamma", path, lo=0.0, hi=1.0, lo_open=True)
    return NormSpec(kind, **kw)


def _norm_list(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list of norm objects")
    return [parse_norm(n, f"{path}[{i}]") for i, n in enumerate(v)]


def _solver_config(d, path, M) -> tuple[float, SolverConfig]:
    check_keys(d, {"T", "dt", "substeps", "diffusivity", "store", "picard_tol", "picard_max", "blowup_factor"},
               path, {"T"})
    T = _num(d, "T", path, lo=0.0, lo_open=True)
    dt = _num(d, "dt", path, 1e-3, lo=0.0, hi=T, lo_open=True)
    steps = T / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"{path}.dt", f"T/dt = {steps:g} must be an integer")
    store = d.get("store", "all")
    if store != "all":
        store = _int(d, "store", path, lo=2, hi=round(steps) + 1)
    cfg = SolverConfig(dt=dt, substeps=_int(d, "substeps", path, 1, lo=1, hi=1000),
                       diffusivity=_num(d, "diffusivity", path, 1.0, lo=0.0),
                       picard_tol=_num(d, "picard_tol", path, 1e-10, lo=0.0, lo_open=True),
                       picard_max=_int(d, "picard_max", path, 50, lo=1, hi=10_000),
                       blowup_factor=_num(d, "blowup_factor", path, 1e3, lo=1.0, lo_open=True),
                       resolution=M, store=store)
    return T, cfg


@dataclass
class SolveJob:
    domain: str
    p0: GridField
    T: float
    solver: SolverConfig
    kernel: Kernel | None
    b: object
    rate_params: RateParams | None
    seed: int


def parse_solve(cfg: dict) -> SolveJob:
    """``{grid, domain?, kernel?, b?, p0, solver, model?, seed?}``."""
    check_keys(cfg, {"grid", "domain", "kernel", "b", "p0", "solver", "model", "seed", "comment"}, "",
               {"grid", "p0", "solver"})
    dim, M, L = parse_grid(cfg["grid"])
    domain = _choice(cfg, "domain", "", ("torus", "box"), "torus")
    T, solver = _solver_config(cfg["solver"], "solver", M)
    p0 = build_density(cfg["p0"], M, dim, L)
    kernel = b = None
    if domain == "torus":
        if "b" in cfg:
            raise ConfigError("b", "drift laws apply to the box domain only")
        kernel = build_kernel(cfg.get("kernel", {"form": "Zero"}), dim)
    else:
        if "kernel" in cfg:
            raise ConfigError("kernel", "interaction kernels apply to the torus domain only")
        b = build_drift_law(cfg.get("b"), dim)
    model = parse_model(cfg["model"]) if "model" in cfg else None
    return SolveJob(domain, p0, T, solver, kernel, b, model, _seed(cfg))


@dataclass
class SimulateJob:
    p0: GridField
    kernel: Kernel
    N: int
    beta: float
    interpolation: str
    T: float
    dt: float
    diffusivity: float
    checkpoints: int
    norms: list
    ref_dt: float
    seed: int


def parse_simulate(cfg: dict) -> SimulateJob:
    """``{grid, kernel?, p0, particles, sde, norms?, reference?, seed?}``."""
    check_keys(cfg, {"grid", "kernel", "p0", "particles", "sde", "norms", "reference", "seed", "comment"}, "",
               {"grid", "p0", "particles", "sde"})
    dim, M, L = parse_grid(cfg["grid"])
    parts = cfg["particles"]
    check_keys(parts, {"N", "beta", "interpolation"}, "particles", {"N", "beta"})
    N = _int(parts, "N", "particles", lo=1, hi=2**24)
    beta = _num(parts, "beta", "particles", lo=0.0, hi=1.0)
    interp = _choice(parts, "interpolation", "particles", ("linear", "cubic"), "cubic")
    sde = cfg["sde"]
    check_keys(sde, {"T", "dt", "diffusivity", "checkpoints"}, "sde", {"T"})
    T = _num(sde, "T", "sde", lo=0.0, lo_open=True)
    dt = _num(sde, "dt", "sde", 1e-3, lo=0.0, hi=min(T, 1e-2), lo_open=True)
    steps = T / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("sde.dt", f"T/dt = {steps:g} must be an integer")
    checkpoints = _int(sde, "checkpoints", "sde", 11, lo=2, hi=round(steps) + 1)
    nu = _num(sde, "diffusivity", "sde", 1.0, lo=0.0)
    norms = _norm_list(cfg.get("norms", [{"kind": "Lq", "q": 2}]), "norms")
    ref = cfg.get("reference", {})
    check_keys(ref, {"dt"}, "reference")
    ref_dt = _num(ref, "dt", "reference", dt / 4, lo=0.0, hi=dt, lo_open=True)
    if abs(dt / ref_dt - round(dt / ref_dt)) > 1e-9 * dt / ref_dt:
        raise ConfigError("reference.dt", "must divide sde.dt")
    return SimulateJob(build_density(cfg["p0"], M, dim, L), build_kernel(cfg.get("kernel", {"form": "Zero"}), dim),
                       N, beta, interp, T, dt, nu, checkpoints, norms, ref_dt, _seed(cfg))


_PLAN_FIELDS = {f.name for f in fields(ExperimentPlan)}


def parse_plan(cfg: dict) -> ExperimentPlan:
    """``{plan: {ExperimentPlan fields}, comment?}``; kernel and p0 use the builder formats."""
    check_keys(cfg, {"plan", "comment"}, "", {"plan"})
    d = cfg["plan"]
    check_keys(d, _PLAN_FIELDS, "plan", {"N_list", "replicas", "norms", "T", "beta", "q", "lam"})
    path = "plan"
    N_list = d["N_list"]
    if not isinstance(N_list, list) or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1
                                               for n in N_list):
        raise ConfigError("plan.N_list", "expected a list of positive integers")
    kw = {"N_list": N_list, "norms": _norm_list(d["norms"], "plan.norms"),
          "replicas": _int(d, "replicas", path, lo=3, hi=10_000),
          "T": _num(d, "T", path, lo=0.0, lo_open=True),
          "beta": _num(d, "beta", path, lo=0.0, hi=1.0),
          "q": _num(d, "q", path, lo=1.0),
          "lam": _num(d, "lam", path)}
    for key, lo, hi, lo_open in (("dt", 0.0, 1e-2, True), ("ref_dt", 0.0, 1e-2, True), ("delta", 0.0, 1.0, True),
                                 ("eta", 0.0, 1.0, True), ("min_decay", 0.0, 1.0, False)):
        if key in d and d[key] is not None:
            kw[key] = _num(d, key, path, lo=lo, hi=hi, lo_open=lo_open)
    for key, lo, hi in (("resolution", 8, 2**14), ("ref_resolution", 8, 2**14), ("seed_base", 0, 2**63 - 1),
                        ("checkpoints", 2, 10_000), ("d", 1, 3), ("spectrum_kmax", 8, 2**16),
                        ("bootstrap", 100, 10**6)):
        if key in d and d[key] is not None:
            kw[key] = _int(d, key, path, lo=lo, hi=hi)
    if "system" in d:
        kw["system"] = _choice(d, "system", path, ("theorem1", "theorem2"))
    if "negative_control" in d:
        if not isinstance(d["negative_control"], bool):
            raise ConfigError("plan.negative_control", "expected true or false")
        kw["negative_control"] = d["negative_control"]
    for key in ("kernel", "p0"):
        if key in d and d[key] is not None:
            kw[key] = d[key]
    dim = kw.get("d", 1)
    M = kw.get("resolution", 512)
    if "kernel" in kw:
        build_kernel(kw["kernel"], dim, "plan.kernel")
    if "p0" in kw:
        build_density(kw["p0"], M, dim, path="plan.p0")
    if kw.get("system") == "theorem2" and dim != 1:
        raise ConfigError("plan.d", "the particle-game plan is one-dimensional")
    try:
        plan = ExperimentPlan(**kw)
        plan.rho()
    except ValueError as exc:
        raise ConfigError("plan", str(exc)) from None
    return plan


@dataclass
class MfgJob:
    problem: MfgProblem
    solver: MfgConfig
    nash: dict


def parse_mfg(cfg: dict) -> MfgJob:
    """``{grid, p0, g, b?, f?, T, eta?, nu?, bound?, solver?, nash?}``."""
    check_keys(cfg, {"grid", "p0", "g", "b", "f", "T", "eta", "nu", "bound", "solver", "nash", "comment"}, "",
               {"grid", "p0", "g", "T"})
    dim, M, L = parse_grid(cfg["grid"])
    T = _num(cfg, "T", "", lo=0.0, lo_open=True)
    eta = _num(cfg, "eta", "", 1.0, lo=0.0, hi=1.0, lo_open=True)
    nu = _num(cfg, "nu", "", 0.5, lo=0.0, lo_open=True)
    bound = _num(cfg, "bound", "", 1e6, lo=0.0) if "bound" in cfg else math.inf
    p0 = build_density(cfg["p0"], M, dim, L)
    g = build_terminal_cost(cfg["g"], M, dim, L)
    b = build_drift_law(cfg.get("b"), dim)
    f = build_running_cost(cfg.get("f"))
    s = cfg.get("solver", {})
    check_keys(s, {"dt", "inner_tol", "inner_max", "outer_tol", "outer_max", "damping"}, "solver")
    dt = _num(s, "dt", "solver", 1e-3, lo=0.0, hi=T, lo_open=True)
    if abs(T / dt - round(T / dt)) > 1e-9 * max(1.0, T / dt):
        raise ConfigError("solver.dt", f"T/dt = {T / dt:g} must be an integer")
    solver = MfgConfig(dt=dt, inner_tol=_num(s, "inner_tol", "solver", 1e-10, lo=0.0, lo_open=True),
                       inner_max=_int(s, "inner_max", "solver", 20, lo=1, hi=1000),
                       outer_tol=_num(s, "outer_tol", "solver", 1e-8, lo=0.0, lo_open=True),
                       outer_max=_int(s, "outer_max", "solver", 100, lo=1, hi=10_000),
                       damping=_num(s, "damping", "solver", 0.5, lo=0.0, hi=1.0, lo_open=True))
    n = cfg.get("nash", {})
    check_keys(n, {"n_perturb", "eps", "n_paths", "seed"}, "nash")
    nash = {"n_perturb": _int(n, "n_perturb", "nash", 5, lo=0, hi=1000),
            "eps": _num(n, "eps", "nash", 0.5, lo=0.0, lo_open=True),
            "n_paths": _int(n, "n_paths", "nash", 10_000, lo=2, hi=10**7),
            "seed": _int(n, "seed", "nash", 0, lo=0, hi=2**63 - 1)}
    try:
        problem = MfgProblem(g, p0, T, eta=eta, b=b, f=f, nu=nu, bound=bound)
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None
    return MfgJob(problem, solver, nash)
