"""Scenario files: YAML with a documented schema and located diagnostics.

Physics parameters (gamma, nu, b0) have no defaults; numerics do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .collision_kernels import AngularKernel
from .evolution_solver import SolverConfig
from .velocity_domain import (
    GridSpec,
    VelocityGrid,
    annulus,
    heavy_tail,
    maxwellian,
    mixture,
    normalize,
    shifted_maxwellian,
    tempered_maxwellian,
)

__all__ = ["ScenarioError", "Scenario", "load_scenario", "parse_scenario", "build_initial", "SCHEMA"]

SCHEMA = """\
seed: int                               # randomized sampling seed (default 0)
output: str                             # output directory (overridden by --out)
grid: {d: int, N: odd int, R: float}    # velocity box [-R, R]^d, N nodes per axis
kernel:                                 # physics: every key below is required
  gamma: float                          # in (-d, 0]
  b: constant | grad | noncutoff
  nu: float                             # grad: [0, 1]; noncutoff: (0, 2); constant: 0
  b0: float                             # grad prefactor / noncutoff c0; > 0
numerics: {gh_order: 32, exterior: true, band: 4.5}
initial:                                # unit mass after truncation
  kind: maxwellian | shifted-maxwellian (u) | tempered-maxwellian (T)
        | heavy-tail (exponent) | annulus (r1, r2) | mixture (components)
solver: {t_end, dt, dt_factor: 0.1, scheme: RK4, snapshot_stride: 1, s: 2, k: 2, p: 2,
         lambda1, mu, zero: false, gamma_aq: {a, q}, dump_times: []}
probes: [{type: ..., ...}]              # see README
scan: {...}                             # inequality-scan block
gap: {...}                              # spectral-gap block
slow: {...}                             # slow-convergence block
"""


class ScenarioError(ValueError):
    """Invalid scenario; message carries the field path and source line."""


def _node_lines(node, path=(), out=None):
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _node_lines(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _node_lines(v, path + (i,), out)
    return out


@dataclass
class Scenario:
    raw: dict
    grid_spec: GridSpec
    gamma: float
    angular: AngularKernel
    seed: int = 0
    output: str | None = None
    numerics: dict = field(default_factory=dict)
    initial: dict | None = None
    solver: SolverConfig | None = None
    solver_extra: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)
    scan: dict = field(default_factory=dict)
    gap: dict = field(default_factory=dict)
    slow: dict = field(default_factory=dict)
    source: str = ""
    sha256: str | None = None


class _Ctx:
    def __init__(self, lines, source):
        self.lines = lines
        self.source = source

    def fail(self, path, msg):
        line = None
        p = tuple(path)
        while p not in self.lines and p:
            p = p[:-1]
        line = self.lines.get(p)
        where = ".".join(str(x) for x in path) or "<root>"
        loc = f"{self.source}:{line}: " if line else f"{self.source}: "
        raise ScenarioError(f"{loc}{where}: {msg}")

    def get(self, block, path, key, kind=float, required=False, default=None):
        if not isinstance(block, dict):
            self.fail(path, "expected a mapping")
        if key not in block or block[key] is None:
            if required:
                self.fail(path + [key], "required parameter missing")
            return default
        val = block[key]
        try:
            if kind is int:
                if isinstance(val, bool) or float(val) != int(val):
                    raise ValueError
                return int(val)
            if kind is float:
                if isinstance(val, bool):
                    raise ValueError
                x = float(val)
                if not np.isfinite(x):
                    raise ValueError
                return x
            if kind is bool:
                if not isinstance(val, bool):
                    raise ValueError
                return val
            if kind is str:
                return str(val)
            if kind is list:
                if not isinstance(val, list):
                    raise ValueError
                return val
        except (TypeError, ValueError):
            self.fail(path + [key], f"expected {kind.__name__}, got {val!r}")
        return val


def _check_keys(ctx, block, path, allowed):
    for k in block:
        if k not in allowed:
            ctx.fail(path + [k], f"unknown key (allowed: {', '.join(sorted(allowed))})")


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ScenarioError(f"{source}{line}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: scenario must be a mapping")
    ctx = _Ctx(_node_lines(node), source)
    _check_keys(ctx, data, [], {"seed", "output", "grid", "kernel", "numerics", "initial", "solver", "probes",
                                "scan", "gap", "slow"})

    g = data.get("grid")
    if not isinstance(g, dict):
        ctx.fail(["grid"], "required block missing")
    _check_keys(ctx, g, ["grid"], {"d", "N", "R"})
    d = ctx.get(g, ["grid"], "d", int, required=True)
    N = ctx.get(g, ["grid"], "N", int, required=True)
    R = ctx.get(g, ["grid"], "R", float, required=True)
    try:
        spec = GridSpec(d, N, R)
    except ValueError as exc:
        ctx.fail(["grid"], str(exc))

    k = data.get("kernel")
    if not isinstance(k, dict):
        ctx.fail(["kernel"], "required block missing")
    _check_keys(ctx, k, ["kernel"], {"gamma", "b", "nu", "b0"})
    gamma = ctx.get(k, ["kernel"], "gamma", float, required=True)
    variant = ctx.get(k, ["kernel"], "b", str, required=True)
    nu = ctx.get(k, ["kernel"], "nu", float, required=True)
    b0 = ctx.get(k, ["kernel"], "b0", float, required=True)
    if not -d < gamma <= 0:
        ctx.fail(["kernel", "gamma"], f"gamma={gamma:g} outside the admissible range ({-d},0) (with gamma=0 for Maxwell molecules)")
    if variant not in ("constant", "grad", "noncutoff"):
        ctx.fail(["kernel", "b"], f"unknown angular kernel {variant!r} (constant, grad, noncutoff)")
    if variant == "constant" and nu != 0:
        ctx.fail(["kernel", "nu"], "constant kernel needs nu = 0")
    try:
        angular = AngularKernel(variant, d, nu=nu, b0=b0, c0=b0)
    except ValueError as exc:
        ctx.fail(["kernel"], str(exc))

    seed = ctx.get(data, [], "seed", int, default=0)
    output = ctx.get(data, [], "output", str)
    numerics = data.get("numerics") or {}
    _check_keys(ctx, numerics, ["numerics"], {"gh_order", "exterior", "band"})
    numerics = {
        "gh_order": ctx.get(numerics, ["numerics"], "gh_order", int, default=32),
        "exterior": ctx.get(numerics, ["numerics"], "exterior", bool, default=True),
        "band": ctx.get(numerics, ["numerics"], "band", float, default=4.5),
    }

    initial = data.get("initial")
    if initial is not None:
        _validate_initial(ctx, initial, ["initial"])

    solver, extra = None, {}
    sv = data.get("solver")
    if sv is not None:
        _check_keys(ctx, sv, ["solver"], {"t_end", "dt", "dt_factor", "scheme", "snapshot_stride", "mass_tol",
                                          "positivity_floor", "s", "k", "p", "lambda1", "mu", "zero", "gamma_aq", "dump_times"})
        try:
            solver = SolverConfig(
                t_end=ctx.get(sv, ["solver"], "t_end", float, required=True),
                dt=ctx.get(sv, ["solver"], "dt", float),
                dt_factor=ctx.get(sv, ["solver"], "dt_factor", float, default=0.1),
                scheme=ctx.get(sv, ["solver"], "scheme", str, default="RK4"),
                snapshot_stride=ctx.get(sv, ["solver"], "snapshot_stride", int, default=1),
                mass_tol=ctx.get(sv, ["solver"], "mass_tol", float, default=1e-8),
                positivity_floor=ctx.get(sv, ["solver"], "positivity_floor", float, default=1e-12),
                s=ctx.get(sv, ["solver"], "s", float, default=2.0),
                k=ctx.get(sv, ["solver"], "k", float, default=2.0),
                p=ctx.get(sv, ["solver"], "p", float, default=2.0),
                lambda1=ctx.get(sv, ["solver"], "lambda1", float),
            )
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            ctx.fail(["solver"], str(exc))
        extra["mu"] = ctx.get(sv, ["solver"], "mu", float)
        extra["zero"] = ctx.get(sv, ["solver"], "zero", bool, default=False)
        extra["dump_times"] = [float(x) for x in ctx.get(sv, ["solver"], "dump_times", list, default=[])]
        gaq = sv.get("gamma_aq")
        if gaq is not None:
            extra["gamma_aq"] = (ctx.get(gaq, ["solver", "gamma_aq"], "a", float, required=True),
                                 ctx.get(gaq, ["solver", "gamma_aq"], "q", float, required=True))

    probes = data.get("probes") or []
    if not isinstance(probes, list):
        ctx.fail(["probes"], "expected a list")
    for i, p in enumerate(probes):
        if not isinstance(p, dict) or "type" not in p:
            ctx.fail(["probes", i], "each probe needs a 'type'")
        if p["type"] not in PROBE_TYPES:
            ctx.fail(["probes", i, "type"], f"unknown probe {p['type']!r} ({', '.join(PROBE_TYPES)})")
        if solver is None and p["type"] != "kernel_check":
            ctx.fail(["probes", i], "trajectory probes need a solver block")

    for name in ("scan", "gap", "slow"):
        blk = data.get(name)
        if blk is not None and not isinstance(blk, dict):
            ctx.fail([name], "expected a mapping")
    gap = data.get("gap") or {}
    if gap:
        for key in ("nu", "c0"):
            ctx.get(gap, ["gap"], key, float, required=True)

    return Scenario(data, spec, gamma, angular, seed, output, numerics, initial, solver, extra, probes,
                    data.get("scan") or {}, gap, data.get("slow") or {}, source)


PROBE_TYPES = ("h_theorem", "mass", "phi_monotone", "duhamel", "floor", "rate_fit", "uniform_bound",
               "production_consistency", "kernel_check")

_INITIAL_KEYS = {
    "maxwellian": set(),
    "shifted-maxwellian": {"u"},
    "tempered-maxwellian": {"T"},
    "heavy-tail": {"exponent"},
    "annulus": {"r1", "r2"},
    "mixture": {"components"},
}


def _validate_initial(ctx, blk, path):
    if not isinstance(blk, dict) or "kind" not in blk:
        ctx.fail(path, "initial datum needs a 'kind'")
    kind = blk["kind"]
    if kind not in _INITIAL_KEYS:
        ctx.fail(path + ["kind"], f"unknown initial datum {kind!r} ({', '.join(_INITIAL_KEYS)})")
    allowed = _INITIAL_KEYS[kind] | {"kind", "weight"}
    _check_keys(ctx, blk, path, allowed)
    for key in _INITIAL_KEYS[kind]:
        if key not in blk:
            ctx.fail(path + [key], "required parameter missing")
    if kind == "mixture":
        comps = ctx.get(blk, path, "components", list, required=True)
        if not comps:
            ctx.fail(path + ["components"], "mixture needs at least one component")
        for i, c in enumerate(comps):
            _validate_initial(ctx, c, path + ["components", i])
            ctx.get(c, path + ["components", i], "weight", float, required=True)
    elif kind == "tempered-maxwellian":
        if ctx.get(blk, path, "T", float) <= 0:
            ctx.fail(path + ["T"], "temperature must be positive")
    elif kind == "heavy-tail":
        ctx.get(blk, path, "exponent", float)
    elif kind == "annulus":
        r1, r2 = ctx.get(blk, path, "r1", float), ctx.get(blk, path, "r2", float)
        if not 0 <= r1 < r2:
            ctx.fail(path, "annulus needs 0 <= r1 < r2")


def build_initial(grid: VelocityGrid, blk: dict):
    kind = blk["kind"]
    if kind == "maxwellian":
        return normalize(grid, maxwellian(grid).values)
    if kind == "shifted-maxwellian":
        return shifted_maxwellian(grid, blk["u"])
    if kind == "tempered-maxwellian":
        return tempered_maxwellian(grid, float(blk["T"]))
    if kind == "heavy-tail":
        return heavy_tail(grid, float(blk["exponent"]))
    if kind == "annulus":
        return annulus(grid, float(blk["r1"]), float(blk["r2"]))
    return mixture(grid, [(float(c["weight"]), build_initial(grid, c)) for c in blk["components"]])


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from None
    return parse_scenario(text, str(path))
