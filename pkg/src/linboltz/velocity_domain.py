"""Discrete velocity space: tensor grids, Maxwellian, densities and moments."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec",
    "VelocityGrid",
    "DensityField",
    "WeightSpec",
    "build_grid",
    "maxwellian",
    "maxwellian_values",
    "moment",
    "lp_norm",
    "mix_with_maxwellian",
    "write_density_csv",
    "read_density_csv",
    "shifted_maxwellian",
    "tempered_maxwellian",
    "heavy_tail",
    "annulus",
    "mixture",
    "normalize",
]


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int
    R: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if int(self.N) != self.N or self.N < 3 or self.N % 2 == 0:
            raise ValueError(f"nodes per axis must be an odd integer >= 3, got {self.N}")
        if not np.isfinite(self.R) or self.R <= 0:
            raise ValueError(f"truncation radius must be positive, got {self.R}")

    @property
    def h(self) -> float:
        return 2.0 * self.R / (self.N - 1)


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    spec: GridSpec
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.spec.R, self.spec.R, self.spec.N)

    @property
    def speed2(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.nodes, self.nodes)

    def content_hash(self) -> str:
        m = hashlib.sha256()
        m.update(repr((self.spec.d, self.spec.N, float(self.spec.R))).encode())
        m.update(np.ascontiguousarray(self.nodes).tobytes())
        m.update(np.ascontiguousarray(self.weights).tobytes())
        return m.hexdigest()[:16]

    def field(self, values) -> "DensityField":
        return DensityField(np.asarray(values, dtype=float), self)


@dataclass(frozen=True, eq=False)
class DensityField:
    values: np.ndarray
    grid: VelocityGrid
    _mass: float = field(init=False, repr=False, default=np.nan)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} nodal values, got shape {v.shape}")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_mass", float(self.grid.weights @ v))

    @property
    def mass(self) -> float:
        return self._mass


@dataclass(frozen=True)
class WeightSpec:
    """Moment weight: ``plain`` |v|^k, ``bracket`` <v>^k or ``log`` <v>^s |log f|."""

    kind: str
    order: float

    def __post_init__(self):
        if self.kind not in ("plain", "bracket", "log"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if not np.isfinite(self.order):
            raise ValueError("weight order must be finite")


def build_grid(spec: GridSpec) -> VelocityGrid:
    d, N, R = spec.d, spec.N, float(spec.R)
    x = np.linspace(-R, R, N)
    w1 = np.full(N, spec.h)
    w1[0] = w1[-1] = 0.5 * spec.h
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    wmesh = np.meshgrid(*([w1] * d), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return VelocityGrid(spec, nodes, weights)


def maxwellian_values(v: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(v)
    d = v.shape[-1]
    return (2 * np.pi) ** (-d / 2) * np.exp(-0.5 * np.einsum("...i,...i->...", v, v))


def maxwellian(grid: VelocityGrid) -> DensityField:
    # deliberately not renormalized on the truncated box
    return grid.field(maxwellian_values(grid.nodes))


def _bracket(grid: VelocityGrid) -> np.ndarray:
    return np.sqrt(1.0 + grid.speed2)


def moment(f: DensityField, w: WeightSpec) -> float:
    g = f.grid
    if w.kind == "plain":
        if w.order == 0:
            weight = np.ones(g.n)
        else:
            weight = np.sqrt(g.speed2) ** w.order
        return float(g.weights @ (weight * f.values))
    if w.kind == "bracket":
        return float(g.weights @ (_bracket(g) ** w.order * f.values))
    vals = f.values
    logabs = np.zeros_like(vals)
    pos = vals > 0
    logabs[pos] = np.abs(np.log(vals[pos]))
    return float(g.weights @ (_bracket(g) ** w.order * vals * logabs))


def lp_norm(f: DensityField, p: float, s: float = 0.0) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    g = f.grid
    return float((g.weights @ (_bracket(g) ** s * f.values**p)) ** (1.0 / p))


def mix_with_maxwellian(f: DensityField, delta: float) -> DensityField:
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0,1], got {delta}")
    M = maxwellian_values(f.grid.nodes)
    return f.grid.field((1.0 - delta) * f.values + delta * M)


# serialization


def _fmt(x: float) -> str:
    return repr(float(x))


def write_density_csv(f: DensityField, path=None) -> str:
    g = f.grid
    buf = io.StringIO()
    buf.write("# d,N,R\n")
    buf.write(f"# {g.spec.d},{g.spec.N},{_fmt(g.spec.R)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i"] + [f"v_{k + 1}" for k in range(g.d)] + ["q", "f"])
    for i in range(g.n):
        w.writerow([i] + [_fmt(c) for c in g.nodes[i]] + [_fmt(g.weights[i]), _fmt(f.values[i])])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_density_csv(source) -> DensityField:
    """Parse a density CSV from a path or from the text itself."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = source
    lines = text.splitlines()
    if not lines or lines[0].strip() != "# d,N,R":
        raise ValueError("missing '# d,N,R' header")
    d, N, R = lines[1].lstrip("#").strip().split(",")
    grid = build_grid(GridSpec(int(d), int(N), float(R)))
    rows = list(csv.reader(lines[3:]))
    if len(rows) != grid.n:
        raise ValueError(f"expected {grid.n} rows, got {len(rows)}")
    vals = np.empty(grid.n)
    for row in rows:
        i = int(row[0])
        v = np.array([float(c) for c in row[1 : 1 + grid.d]])
        if not np.array_equal(v, grid.nodes[i]):
            raise ValueError(f"row {i}: node does not match grid")
        vals[i] = float(row[-1])
    return grid.field(vals)


# initial data builders; all renormalized to unit mass on the grid


def normalize(grid: VelocityGrid, values) -> DensityField:
    values = np.asarray(values, dtype=float)
    m = grid.weights @ values
    if not m > 0:
        raise ValueError("initial datum has no mass on the grid")
    return grid.field(values / m)


def shifted_maxwellian(grid: VelocityGrid, u) -> DensityField:
    u = np.broadcast_to(np.asarray(u, dtype=float), (grid.d,))
    return normalize(grid, maxwellian_values(grid.nodes - u))


def tempered_maxwellian(grid: VelocityGrid, T: float) -> DensityField:
    if T <= 0:
        raise ValueError("temperature must be positive")
    return normalize(grid, np.exp(-0.5 * grid.speed2 / T))


def heavy_tail(grid: VelocityGrid, exponent: float) -> DensityField:
    """Profile <v>^(-exponent), renormalized after truncation."""
    return normalize(grid, (1.0 + grid.speed2) ** (-0.5 * exponent))


def annulus(grid: VelocityGrid, r1: float, r2: float) -> DensityField:
    if not 0 <= r1 < r2:
        raise ValueError("annulus needs 0 <= r1 < r2")
    r = np.sqrt(grid.speed2)
    return normalize(grid, ((r >= r1) & (r <= r2)).astype(float))


def mixture(grid: VelocityGrid, parts) -> DensityField:
    """Convex combination of ``(weight, DensityField)`` pairs."""
    total = np.zeros(grid.n)
    for wgt, f in parts:
        if wgt < 0:
            raise ValueError("mixture weights must be nonnegative")
        total += wgt * f.values
    return normalize(grid, total)
