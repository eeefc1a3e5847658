"""Angular kernels, collision frequencies, the Carleman gain kernel and the
detailed-balanced discrete generator."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .velocity_domain import VelocityGrid, DensityField, maxwellian_values

__all__ = [
    "AngularKernel",
    "Rate",
    "PovznerResult",
    "KernelAssembly",
    "AssemblyBudgetError",
    "sphere_area",
    "angular_mass",
    "collision_frequency",
    "weighted_frequency",
    "carleman_kernel",
    "lower_bound_constants",
    "assemble_generator",
    "povzner_integral",
    "povzner_monte_carlo",
    "povzner_bound_fit",
    "detailed_balance_audit",
    "frequency_sandwich",
    "column_sum_audit",
    "kernel_interpolation_audit",
    "gain_integrability_audit",
    "kernel_check_table",
    "cache_dir",
]

DIVERGENT = float("inf")


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^n embedded in R^(n+1)."""
    return 2.0 * np.pi ** ((n + 1) / 2) / special.gamma((n + 1) / 2)


@lru_cache(maxsize=64)
def _grad_mass(nu: float, d: int) -> float:
    # |S^{d-2}| int_0^pi (sin th)^nu (sin th)^{d-2} dth
    val = integrate.quad(lambda th: np.sin(th) ** (nu + d - 2), 0.0, np.pi, epsabs=1e-14, epsrel=1e-13)[0]
    return sphere_area(d - 2) * val


@dataclass(frozen=True)
class AngularKernel:
    """Angular collision kernel b(cos theta).

    variant: ``constant`` (b = 1/|S^{d-1}|), ``grad`` (c (1-x^2)^{nu/2}) or
    ``noncutoff`` (c0 |theta|^{-(d-1)-nu}).  For ``grad`` with ``normalize``
    the prefactor is chosen so that the angular mass is one and ``b0`` only
    records the requested value.
    """

    variant: str
    d: int
    nu: float = 0.0
    b0: float = 1.0
    c0: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        if self.variant not in ("constant", "grad", "noncutoff"):
            raise ValueError(f"unknown angular kernel {self.variant!r}")
        if self.d < 2:
            raise ValueError("angular kernels need d >= 2")
        if self.variant == "grad":
            if not 0.0 <= self.nu <= 1.0:
                raise ValueError(f"grad family needs nu in [0,1], got {self.nu}")
            if self.b0 <= 0:
                raise ValueError("b0 must be positive")
        if self.variant == "noncutoff":
            if not 0.0 < self.nu < 2.0:
                raise ValueError(f"non-cutoff kernel needs nu in (0,2), got {self.nu}")
            if self.c0 <= 0:
                raise ValueError("c0 must be positive")

    @property
    def cutoff(self) -> bool:
        return self.variant != "noncutoff"

    @property
    def prefactor(self) -> float:
        if self.variant == "constant":
            return 1.0 / sphere_area(self.d - 1)
        if self.variant == "grad":
            return 1.0 / _grad_mass(float(self.nu), self.d) if self.normalize else self.b0
        return self.c0

    @property
    def sup_norm(self) -> float:
        return DIVERGENT if self.variant == "noncutoff" else self.prefactor

    def __call__(self, x):
        x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
        c = self.prefactor
        if self.variant == "constant":
            return np.full_like(x, c)
        if self.variant == "grad":
            return c * np.maximum(1.0 - x * x, 0.0) ** (0.5 * self.nu)
        th = np.arccos(x)
        with np.errstate(divide="ignore"):
            return c * th ** (-(self.d - 1) - self.nu)

    def describe(self) -> dict:
        out = {"variant": self.variant, "d": self.d}
        if self.variant == "grad":
            out.update(nu=self.nu, b0=self.b0, normalize=self.normalize, prefactor=self.prefactor)
        elif self.variant == "noncutoff":
            out.update(nu=self.nu, c0=self.c0)
        return out


def angular_mass(b: AngularKernel, d: int | None = None) -> float:
    """||b||_1 by 1D quadrature in theta; ``inf`` flags the non-cutoff case."""
    d = b.d if d is None else d
    if d < 2:
        raise ValueError("angular mass needs d >= 2")
    if b.variant == "noncutoff":
        return DIVERGENT
    f = lambda th: float(b(np.cos(th))) * np.sin(th) ** (d - 2)
    return sphere_area(d - 2) * integrate.quad(f, 0.0, np.pi, epsabs=1e-14, epsrel=1e-13)[0]


@dataclass(frozen=True)
class Rate:
    """Relative-speed factor of the collision kernel.

    ``power`` is |u|^gamma, ``exp`` is exp(a |u|^q).
    """

    kind: str
    gamma: float = 0.0
    a: float = 0.0
    q: float = 2.0

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        if self.kind == "power":
            return g**self.gamma
        return np.exp(self.a * g**self.q)

    def label(self) -> str:
        if self.kind == "power":
            return f"power:{self.gamma!r}"
        return f"exp:{self.a!r}:{self.q!r}"


def _as_rate(rate) -> Rate:
    if isinstance(rate, Rate):
        return rate
    return Rate("power", gamma=float(rate))


def _check_gamma(gamma: float, d: int, allow_hard: bool = True):
    upper = 2.0 if allow_hard else 0.0
    if not (-d < gamma <= upper):
        raise ValueError(f"gamma={gamma} outside the admissible range (-{d}, {upper:g}]")


# collision frequency


@lru_cache(maxsize=16)
def _freq_rules(d: int, K: int, M: int):
    x, wx = np.polynomial.legendre.leggauss(K)
    x = 0.5 * (x + 1.0)
    wx = 0.5 * wx
    if d == 1:
        cosines, wa = np.array([1.0, -1.0]), np.array([1.0, 1.0])
    elif d == 2:
        phi = 2 * np.pi * np.arange(M) / M
        cosines, wa = np.cos(phi), np.full(M, 2 * np.pi / M)
    else:
        c, wc = np.polynomial.legendre.leggauss(M)
        cosines, wa = c, 2 * np.pi * wc
    return x, wx, cosines, wa


def _radial_frequency(gamma: float, s: float, v, d: int, K: int = 160, M: int = 256) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[-1] != d:
        raise ValueError("velocity dimension mismatch")
    speed = np.linalg.norm(v, axis=-1)
    x, wx, cosines, wa = _freq_rules(d, K, M)
    out = np.empty(len(speed))
    for k, sp in enumerate(speed):
        Rinf = sp + 10.0
        r = Rinf * x * x
        jac = 2.0 * Rinf * x
        # |v + r w|^2 with w at angle whose cosine is c relative to v
        rr2 = sp * sp + r[:, None] ** 2 + 2.0 * sp * r[:, None] * cosines[None, :]
        vals = np.exp(-0.5 * rr2)
        if s != 0:
            vals = vals * np.maximum(rr2, 0.0) ** (0.5 * s)
        ang = vals @ wa
        out[k] = np.sum(wx * jac * r ** (gamma + d - 1) * ang)
    return out * (2 * np.pi) ** (-d / 2)


def collision_frequency(gamma: float, d: int, v) -> np.ndarray | float:
    """Sigma_gamma(v) by spherical quadrature centred at v with graded radii."""
    _check_gamma(gamma, d)
    scalar = np.ndim(v) == 1
    out = _radial_frequency(gamma, 0.0, v, d)
    return float(out[0]) if scalar else out


def weighted_frequency(gamma: float, s: float, v, d: int | None = None):
    if s < 0:
        raise ValueError("s must be nonnegative")
    v = np.asarray(v, dtype=float)
    d = v.shape[-1] if d is None else d
    _check_gamma(gamma, d)
    scalar = np.ndim(v) == 1
    out = _radial_frequency(gamma, s, v, d)
    return float(out[0]) if scalar else out


# Carleman kernel


@lru_cache(maxsize=16)
def _hermite(order: int):
    x, w = np.polynomial.hermite.hermgauss(order)
    return np.sqrt(2.0) * x, np.sqrt(2.0) * w


def _perp_frame(e: np.ndarray):
    """Orthonormal basis of the hyperplane orthogonal to each row of e."""
    d = e.shape[-1]
    if d == 2:
        return [np.stack([-e[..., 1], e[..., 0]], axis=-1)]
    a = np.zeros_like(e)
    use_y = np.abs(e[..., 0]) > 0.9
    a[..., 0] = np.where(use_y, 0.0, 1.0)
    a[..., 1] = np.where(use_y, 1.0, 0.0)
    e1 = a - np.sum(a * e, axis=-1, keepdims=True) * e
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(e, e1)
    return [e1, e2]


def _hyperplane_gh(c, r, rate, b, d, order):
    U, W = _hermite(order)
    r2 = (r * r)[:, None]
    if d == 2:
        t2 = (U[None, :] - c[0][:, None]) ** 2
        g2 = t2 + r2
        vals = b((t2 - r2) / g2) * rate(np.sqrt(g2))
        return vals @ W
    z1 = U[None, :, None] - c[0][:, None, None]
    z2 = U[None, None, :] - c[1][:, None, None]
    z2sq = z1 * z1 + z2 * z2
    g2 = z2sq + r2[:, :, None]
    vals = b((z2sq - r2[:, :, None]) / g2) * rate(np.sqrt(g2)) / np.sqrt(g2)
    return np.einsum("kij,i,j->k", vals, W, W)


@lru_cache(maxsize=8)
def _sinh_nodes(M: int):
    return np.linspace(-1.0, 1.0, M)


@lru_cache(maxsize=8)
def _gl01(M: int):
    x, w = np.polynomial.legendre.leggauss(M)
    return 0.5 * (x + 1), 0.5 * w


def _hyperplane_sinh(c, r, rate, b, d, M=128, Mphi=48):
    # radial sinh map t = r sinh(x) about z = 0 resolves the near-diagonal peak
    if d == 2:
        cc = c[0]
        X = np.arcsinh((np.abs(cc) + 12.0) / r)
        x = _sinh_nodes(M)[None, :] * X[:, None]
        dx = 2.0 * X / (M - 1)
        t = r[:, None] * np.sinh(x)
        jac = r[:, None] * np.cosh(x)
        t2 = t * t
        g2 = t2 + (r * r)[:, None]
        vals = jac * np.exp(-0.5 * (t + cc[:, None]) ** 2) * b((t2 - (r * r)[:, None]) / g2) * rate(np.sqrt(g2))
        wt = np.ones(M)
        wt[0] = wt[-1] = 0.5
        return (vals @ wt) * dx
    cn = np.hypot(c[0], c[1])
    X = np.arcsinh((cn + 12.0) / r)
    xs, ws = _gl01(M)
    phi = 2 * np.pi * np.arange(Mphi) / Mphi
    x = xs[None, :] * X[:, None]
    rho = r[:, None] * np.sinh(x)
    jac = r[:, None] ** 2 * np.sinh(x) * np.cosh(x) * X[:, None]
    z1 = rho[:, :, None] * np.cos(phi)[None, None, :]
    z2 = rho[:, :, None] * np.sin(phi)[None, None, :]
    rho2 = (rho * rho)[:, :, None]
    r2 = (r * r)[:, None, None]
    g2 = rho2 + r2
    gauss = np.exp(-0.5 * ((z1 + c[0][:, None, None]) ** 2 + (z2 + c[1][:, None, None]) ** 2))
    vals = gauss * b((rho2 - r2) / g2) * rate(np.sqrt(g2)) / np.sqrt(g2)
    ang = vals.sum(axis=-1) * (2 * np.pi / Mphi)
    return (jac * ang) @ ws


def carleman_kernel(rate, b: AngularKernel, v, w, order: int = 32, method: str = "gh", switch: float = 1.0):
    """Gain kernel k(v, w) of the Carleman representation.

    Parameters
    ----------
    rate : float or Rate
        gamma for |u|^gamma, or a generalized relative-speed factor.
    b : AngularKernel
        Must be a cut-off variant.
    v, w : array_like, shape (..., d)
        Broadcastable velocity arrays with v != w.
    order : int
        Gauss-Hermite points per hyperplane axis.
    method : {"gh", "sinh", "auto"}
        Hyperplane quadrature.  ``auto`` uses the sinh-mapped rule for
        |v - w| < switch and Gauss-Hermite otherwise.
    """
    if not b.cutoff:
        raise ValueError("Carleman kernel requires a cut-off angular kernel")
    rate = _as_rate(rate)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    v, w = np.broadcast_arrays(v, w)
    shape = v.shape[:-1]
    d = v.shape[-1]
    if d < 2:
        raise ValueError("Carleman kernel needs d >= 2")
    v = v.reshape(-1, d)
    w = w.reshape(-1, d)
    diff = v - w
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r == 0):
        raise ValueError("v == w: use the near-diagonal rule")
    e = diff / r[:, None]
    V = 0.5 * (v + w)
    c = [np.sum(V * ei, axis=-1) for ei in _perp_frame(e)]
    if method == "gh":
        I = _hyperplane_gh(c, r, rate, b, d, order)
    elif method == "sinh":
        I = _hyperplane_sinh(c, r, rate, b, d)
    elif method == "auto":
        I = np.empty_like(r)
        near = r < switch
        if near.any():
            I[near] = _hyperplane_sinh([ci[near] for ci in c], r[near], rate, b, d)
        if (~near).any():
            I[~near] = _hyperplane_gh([ci[~near] for ci in c], r[~near], rate, b, d, order)
    else:
        raise ValueError(f"unknown hyperplane method {method!r}")
    dv = np.sum(v * v, axis=-1) - np.sum(w * w, axis=-1)
    pref = 2.0 ** (d - 1) * (2 * np.pi) ** (-d / 2) / r * np.exp(-0.125 * (r + dv / r) ** 2)
    return (pref * I).reshape(shape)


def lower_bound_constants(d: int, gamma: float, nu: float):
    """(lambda_1, lambda_2) of the Gaussian lower bound on the gain kernel."""
    if d < 2:
        raise ValueError("lower-bound constants need d >= 2")
    if not -d < gamma < 0:
        raise ValueError(f"gamma={gamma} outside (-{d}, 0)")
    if not 0 <= nu <= 1:
        raise ValueError(f"nu={nu} outside [0,1]")
    ratio = (2 * nu + d - gamma - 2) / (d - gamma - 2)
    return 0.75 + ratio, 0.25 + ratio


# assembly


class AssemblyBudgetError(MemoryError):
    pass


@dataclass(frozen=True, eq=False)
class KernelAssembly:
    """Discrete generator: symmetric weights a_ij and frequencies Sigma_i."""

    grid: VelocityGrid
    rate: Rate
    angular: AngularKernel
    a: np.ndarray
    sigma: np.ndarray
    M: np.ndarray
    exterior: np.ndarray
    gh_order: int
    near_rule: str = "cell-average: pyramid GL16 (self), tensor GL16 (neighbours), sinh hyperplane"
    meta: dict = field(default_factory=dict)

    @property
    def gamma(self) -> float:
        return self.rate.gamma if self.rate.kind == "power" else float("nan")

    @property
    def sigma_max(self) -> float:
        return float(self.sigma.max())

    def h(self, f) -> np.ndarray:
        vals = f.values if isinstance(f, DensityField) else np.asarray(f)
        return vals / self.M

    def gain(self, f) -> np.ndarray:
        return self.a @ (self.grid.weights * self.h(f))

    def apply(self, f) -> np.ndarray:
        vals = f.values if isinstance(f, DensityField) else np.asarray(f)
        return self.gain(vals) - self.sigma * vals

    def generator_matrix(self) -> np.ndarray:
        G = self.a * (self.grid.weights / self.M)[None, :]
        G[np.diag_indices_from(G)] -= self.sigma
        return G

    def content_hash(self) -> str:
        m = hashlib.sha256()
        m.update(self.a.tobytes())
        m.update(self.sigma.tobytes())
        return m.hexdigest()[:16]


def _near_offsets(d: int, h: float, band: float = 1.5):
    m = int(np.ceil(band))
    rng = np.arange(-m, m + 1)
    offs = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), -1).reshape(-1, d)
    keep = np.linalg.norm(offs, axis=-1) < band
    return offs[keep]


def _cell_bounds(x: np.ndarray, h: float, R: float):
    return np.maximum(x - 0.5 * h, -R), np.minimum(x + 0.5 * h, R)


@lru_cache(maxsize=8)
def _gl_unit(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


def _tensor_points(lo, hi, n):
    """Tensor Gauss-Legendre nodes and weights on the box [lo, hi]."""
    x, w = _gl_unit(n)
    d = len(lo)
    axes = [lo[k] + (hi[k] - lo[k]) * x for k in range(d)]
    wts = [(hi[k] - lo[k]) * w for k in range(d)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    Wt = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), -1).reshape(-1, d), axis=-1)
    return P, Wt


def _pyramid_points(p, lo, hi, n):
    """Quadrature over the box [lo, hi] as a union of pyramids with apex p.

    p must lie in the closed box.  The radial coordinate u = s^2 grades
    nodes toward the apex where the integrand is singular.
    """
    d = len(p)
    s, ws = _gl_unit(n)
    u = s * s
    pts, wts = [], []
    for ax in range(d):
        for side, c in ((-1.0, lo[ax]), (1.0, hi[ax])):
            height = side * (c - p[ax])
            if height <= 0:
                continue
            flo = np.delete(lo, ax)
            fhi = np.delete(hi, ax)
            F, Fw = _tensor_points(flo, fhi, n) if d > 1 else (np.zeros((1, 0)), np.ones(1))
            Y = np.insert(F, ax, c, axis=1)
            X = p[None, None, :] + u[:, None, None] * (Y[None, :, :] - p[None, None, :])
            # du = 2 s ds, Jacobian u^{d-1} * height
            W = (2 * s * ws * u ** (d - 1))[:, None] * Fw[None, :] * height
            pts.append(X.reshape(-1, d))
            wts.append(W.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _exterior_points(v, R, n_ang=8, n_rad=32, extra=12.0, panel=0.5, grade=0.15):
    """Polar nodes about v covering the complement of the box [-R, R]^d.

    In d = 2 each sector between corner directions is cut into panels of
    width <= ``panel`` (the integrand has angular features of width ~1/|v|),
    and the end panels are split at ``grade`` of their width toward the
    box corners, where the exit distance has a kink.
    """
    d = len(v)
    s, ws = _gl_unit(n_rad)
    if d == 2:
        corners = np.array([[R, R], [-R, R], [-R, -R], [R, -R]]) - v
        cut = np.sort(np.mod(np.arctan2(corners[:, 1], corners[:, 0]), 2 * np.pi))
        edges = np.concatenate([cut, [cut[0] + 2 * np.pi]])
        xa, wa = _gl_unit(n_ang)
        phis, wphi = [], []
        for a0, a1 in zip(edges[:-1], edges[1:]):
            if a1 - a0 <= 0:
                continue
            m = int(np.ceil((a1 - a0) / panel))
            dl = (a1 - a0) / m
            cuts = np.unique(np.concatenate([np.linspace(a0, a1, m + 1), [a0 + grade * dl, a1 - grade * dl]]))
            for c0, c1 in zip(cuts[:-1], cuts[1:]):
                phis.append(c0 + (c1 - c0) * xa)
                wphi.append((c1 - c0) * wa)
        phi = np.concatenate(phis)
        wphi = np.concatenate(wphi)
        dirs = np.stack([np.cos(phi), np.sin(phi)], -1)
    else:
        c, wc = np.polynomial.legendre.leggauss(2 * n_ang)
        m = 4 * n_ang
        phi = 2 * np.pi * np.arange(m) / m
        C, P = np.meshgrid(c, phi, indexing="ij")
        S = np.sqrt(1 - C * C)
        dirs = np.stack([S * np.cos(P), S * np.sin(P), C], -1).reshape(-1, 3)
        wphi = (wc[:, None] * np.full(m, 2 * np.pi / m)[None, :]).ravel()
    # exit distance along each direction
    with np.errstate(divide="ignore", invalid="ignore"):
        tpos = np.where(dirs > 0, (R - v) / dirs, np.inf)
        tneg = np.where(dirs < 0, (-R - v) / dirs, np.inf)
    rho0 = np.maximum(np.min(np.minimum(tpos, tneg), axis=-1), 0.0)
    L = np.linalg.norm(v) + extra
    rho = rho0[:, None] + L * (s * s)[None, :]
    wr = L * 2 * s * ws
    pts = v[None, None, :] + rho[:, :, None] * dirs[:, None, :]
    W = wphi[:, None] * wr[None, :] * rho ** (d - 1)
    return pts.reshape(-1, d), W.ravel()


def _memory_estimate(n: int) -> int:
    return 4 * n * n * 8


def _budget() -> int:
    return int(float(os.environ.get("LINBOLTZ_MEMORY_BUDGET", 3e9)))


def cache_dir() -> Path | None:
    p = os.environ.get("LINBOLTZ_CACHE")
    return Path(p) if p else None


def _cache_key(grid, rate, b, order, exterior, band=4.5, band_order=6) -> str:
    key = {
        "d": grid.d,
        "N": grid.spec.N,
        "R": repr(float(grid.spec.R)),
        "rate": rate.label(),
        "b": b.describe(),
        "gh_order": order,
        "exterior": bool(exterior),
        "band": [float(band), int(band_order)],
        "rule": "v7",
    }
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]


def _chunks(n: int, size: int):
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def assemble_generator(
    grid: VelocityGrid,
    rate,
    b: AngularKernel,
    gh_order: int = 32,
    exterior: bool = True,
    workers: int = 1,
    use_cache: bool = True,
    audit_pairs: int = 400,
    db_tol: float = 1e-6,
    band: float = 4.5,
    band_order: int = 6,
) -> KernelAssembly:
    """Assemble the symmetric weights a_ij ~ k(v_i, v_j) M(v_j).

    Far pairs use the Gauss-Hermite Carleman kernel symmetrized over both
    orientations; pairs inside a band of ``band`` spacings use cell averages of
    w -> k(v_i, w) M(w).  With ``exterior`` the collision mass that would
    leave the box is kept as a self-collision on the diagonal, which leaves
    the generator unchanged and makes Sigma_i the full-space frequency.
    """
    rate = _as_rate(rate)
    if not b.cutoff:
        raise ValueError("generator assembly requires a cut-off angular kernel")
    if grid.d < 2:
        raise ValueError("generator assembly needs d >= 2")
    if rate.kind == "power":
        _check_gamma(rate.gamma, grid.d)
    n = grid.n
    if _memory_estimate(n) > _budget():
        raise AssemblyBudgetError(f"assembly of {n} nodes needs ~{_memory_estimate(n) / 1e9:.2f} GB")

    cdir = cache_dir() if use_cache else None
    key = _cache_key(grid, rate, b, gh_order, exterior, band, band_order)
    if cdir is not None:
        path = cdir / f"kernel_{key}.npz"
        if path.exists():
            z = np.load(path)
            meta = json.loads(str(z["meta"]))
            meta["cached"] = True
            return KernelAssembly(grid, rate, b, z["a"], z["sigma"], z["M"], z["exterior"], int(z["gh_order"]), meta=meta)

    # audit detailed balance first; double the order while it fails
    order = gh_order
    while True:
        db = detailed_balance_audit(grid, rate, b, order=order, n_pairs=audit_pairs)
        if db["max_rel_asymmetry"] <= db_tol or order >= 256:
            break
        order *= 2

    nodes = grid.nodes
    h = grid.h
    R = float(grid.spec.R)
    M = maxwellian_values(nodes)
    a = np.zeros((n, n))

    # 2^d Gauss-Legendre points per (box-clipped) cell for the far row sums
    lo_c, hi_c = _cell_bounds(nodes, h, R)
    xg, wg = _gl_unit(2)
    mesh = np.stack(np.meshgrid(*([xg] * grid.d), indexing="ij"), -1).reshape(-1, grid.d)
    wmesh = np.prod(np.stack(np.meshgrid(*([wg] * grid.d), indexing="ij"), -1).reshape(-1, grid.d), axis=-1)
    cell_pts = lo_c[:, None, :] + (hi_c - lo_c)[:, None, :] * mesh[None, :, :]
    cell_w = np.prod(hi_c - lo_c, axis=-1)[:, None] * wmesh[None, :]
    cell_wM = cell_w * maxwellian_values(cell_pts)

    def far_rows(lo, hi):
        vi = nodes[lo:hi, None, :]
        vj = nodes[None, :, :]
        kij = carleman_kernel(rate, b, vi, np.where(_same(vi, vj), vj + 1.0, vj), order=order)
        # cell integrals of w -> k(v_i, w) M(w) over far cells
        sel = far[lo:hi]
        ii, jj = np.nonzero(sel)
        kc = carleman_kernel(rate, b, nodes[lo + ii][:, None, :], cell_pts[jj], order=order)
        cell = np.bincount(ii, weights=np.sum(kc * cell_wM[jj], axis=-1), minlength=hi - lo)
        return kij, cell

    def _same(x, y):
        return np.all(x == y, axis=-1, keepdims=True)

    dist = np.sqrt(np.maximum(grid.speed2[:, None] + grid.speed2[None, :] - 2 * nodes @ nodes.T, 0.0))
    far = dist >= band * h - 1e-9 * h

    chunk = max(1, 20000 // n)
    ranges = _chunks(n, chunk)

    def run(fn, items):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                return list(ex.map(lambda r: fn(*r), items))
        return [fn(*r) for r in items]

    # K[i, j] = k(v_i, v_j) M_j on far pairs. The nodal rule cannot resolve the
    # shell |w| ~ |v| (width ~1/|v|) near the box corners, so the row sums are
    # taken from cell integrals and the difference goes to the diagonal.
    N = grid.spec.N
    q = grid.weights
    K = np.zeros((n, n))
    cell_sum = np.zeros(n)
    for (lo, hi), (blk, cs) in zip(ranges, run(far_rows, ranges)):
        K[lo:hi] = np.where(far[lo:hi], blk * M[None, :], 0.0)
        cell_sum[lo:hi] = cs
    far_defect = cell_sum - K @ q
    a = 0.5 * (K + K.T)
    del K

    # cell averages A[i, j] = (1/q_j) int_{cell j} k(v_i, w) M(w) dw on the band
    axis = grid.axis
    idx = np.stack(np.unravel_index(np.arange(n), (N,) * grid.d), -1)
    offs = _near_offsets(grid.d, h, band)
    inner = np.linalg.norm(offs, axis=-1) < 1.5
    strides = np.array([N ** (grid.d - 1 - k) for k in range(grid.d)])

    def near_rows(lo, hi):
        pair_i, pair_j, pts, wts, owner, inner_flag = [], [], [], [], [], []
        for i in range(lo, hi):
            p = nodes[i]
            for off, is_inner in zip(offs, inner):
                jj = idx[i] + off
                if np.any(jj < 0) or np.any(jj >= N):
                    continue
                j = int(jj @ strides)
                clo, chi = _cell_bounds(axis[jj], h, R)
                if j == i:
                    P, W = _pyramid_points(p, clo, chi, 16)
                else:
                    P, W = _tensor_points(clo, chi, 16 if is_inner else band_order)
                owner.append(np.full(len(W), len(pair_i)))
                inner_flag.append(np.full(len(W), bool(is_inner)))
                pair_i.append(i)
                pair_j.append(j)
                pts.append(P)
                wts.append(W / grid.weights[j])
        P = np.concatenate(pts)
        W = np.concatenate(wts)
        own = np.concatenate(owner)
        fl = np.concatenate(inner_flag)
        src = nodes[np.asarray(pair_i)[own]]
        kv = np.empty(len(W))
        kv[fl] = carleman_kernel(rate, b, src[fl], P[fl], order=order, method="sinh")
        kv[~fl] = carleman_kernel(rate, b, src[~fl], P[~fl], order=order, method="gh")
        vals = np.bincount(own, weights=W * kv * maxwellian_values(P), minlength=len(pair_i))
        ext = np.zeros(hi - lo)
        if exterior:
            for i in range(lo, hi):
                P, W = _exterior_points(nodes[i], R)
                ext[i - lo] = np.sum(W * carleman_kernel(rate, b, P, nodes[i][None, :], order=order, method="auto"))
        return pair_i, pair_j, vals, ext, lo

    A = {}
    ext = np.zeros(n)
    for pi, pj, vals, e, lo in run(near_rows, _chunks(n, 8)):
        for i, j, val in zip(pi, pj, vals):
            A[(i, j)] = float(val)
        ext[lo : lo + len(e)] = e
    defect = far_defect
    for (i, j), val in A.items():
        if i == j:
            a[i, i] = val
        else:
            a[i, j] = 0.5 * (val + A[(j, i)])
            defect[i] += (val - a[i, j]) * q[j]
    # the diagonal cancels in L: it carries the one-sided band defect and the
    # out-of-box collisions so that Sigma_i is the full gain quadrature of row i
    diag = np.diag(a) + (defect + M * ext) / q
    # far corners: symmetrized row already exceeds the one-sided target
    clipped = diag < 0
    a[np.diag_indices(n)] = np.maximum(diag, 0.0)
    sigma = (a @ q) / M

    meta = {"cache_key": key, "cached": False, "gh_order": order, "detailed_balance": db,
            "diag_clipped": int(clipped.sum()), "band": band}
    asm = KernelAssembly(grid, rate, b, a, sigma, M, ext, order, meta=meta)
    if cdir is not None:
        cdir.mkdir(parents=True, exist_ok=True)
        tmp = cdir / f"kernel_{key}.tmp.npz"
        np.savez(tmp, a=a, sigma=sigma, M=M, exterior=ext, gh_order=order, meta=json.dumps(meta, default=float))
        os.replace(tmp, cdir / f"kernel_{key}.npz")
    return asm


# audits


def _sample_pairs(grid: VelocityGrid, n_pairs: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    i = rng.integers(0, grid.n, size=4 * n_pairs)
    j = rng.integers(0, grid.n, size=4 * n_pairs)
    dist = np.linalg.norm(grid.nodes[i] - grid.nodes[j], axis=-1)
    keep = dist >= 1.5 * grid.h
    return i[keep][:n_pairs], j[keep][:n_pairs]


def detailed_balance_audit(grid: VelocityGrid, rate, b: AngularKernel, order: int = 32, n_pairs: int = 400, seed: int = 0):
    """max |k(v,w)M(w) - k(w,v)M(v)| / max(kM) over sampled off-diagonal node pairs."""
    i, j = _sample_pairs(grid, n_pairs, seed)
    v, w = grid.nodes[i], grid.nodes[j]
    M = maxwellian_values(grid.nodes)
    fwd = carleman_kernel(rate, b, v, w, order=order) * M[j]
    bwd = carleman_kernel(rate, b, w, v, order=order) * M[i]
    scale = max(fwd.max(), bwd.max())
    return {"max_rel_asymmetry": float(np.max(np.abs(fwd - bwd)) / scale), "pairs": int(len(i)), "gh_order": order}


def frequency_sandwich(asm: KernelAssembly):
    g = asm.gamma if asm.rate.kind == "power" else 0.0
    ratio = asm.sigma / (1.0 + np.sqrt(asm.grid.speed2)) ** g
    C1, C2 = float(ratio.min()), float(ratio.max())
    return {"C1": C1, "C2": C2, "pass": bool(C1 > 0 and C1 <= C2)}


def column_sum_audit(asm: KernelAssembly, reference=None):
    """Relative deviation of row-sum Sigma_i from the independent frequency quadrature."""
    if reference is None:
        reference = collision_frequency(asm.gamma, asm.grid.d, asm.grid.nodes)
    rel = np.abs(asm.sigma - reference) / reference
    return {"max_rel": float(rel.max()), "argmax": int(rel.argmax()), "rel": rel, "reference": reference}


def kernel_interpolation_audit(a_gamma: KernelAssembly, a_zero: KernelAssembly, a_mu: KernelAssembly):
    """Slack of a0 <= a_g^(mu/(mu-g)) a_mu^(-g/(mu-g)) at every off-diagonal pair."""
    g, mu = a_gamma.gamma, a_mu.gamma
    th = mu / (mu - g)
    off = ~np.eye(a_gamma.grid.n, dtype=bool)
    A0 = a_zero.a[off]
    rhs = a_gamma.a[off] ** th * a_mu.a[off] ** (1 - th)
    pos = np.maximum(A0, rhs) > 0
    slack = (rhs[pos] - A0[pos]) / np.maximum(A0[pos], rhs[pos])
    return {"min_rel_slack": float(slack.min()), "pairs": int(pos.sum())}


def gain_integrability_audit(asm: KernelAssembly, n_samples: int = 20, r: float = 2.0, q: float = 1.5, seed: int = 0):
    """Ratio ||K f||_r / (||f||_q ||M||_l) for random f; l from the Hardy-Littlewood-Sobolev balance."""
    d, g = asm.grid.d, asm.gamma
    # 1/q + 1/l = 1 + 1/r + gamma/d
    inv_l = 1 + 1 / r + g / d - 1 / q
    ell = 1.0 / inv_l if inv_l > 0 else np.inf
    rng = np.random.default_rng(seed)
    w = asm.grid.weights
    M = asm.M
    Mnorm = float((w @ M**ell) ** (1 / ell)) if np.isfinite(ell) else float(M.max())
    ratios = []
    for _ in range(n_samples):
        f = M * np.exp(rng.normal(scale=1.0, size=asm.grid.n)) + rng.random() * np.exp(-0.5 * asm.grid.speed2 / 3)
        f /= w @ f
        Kf = asm.gain(f)
        ratios.append(float((w @ np.abs(Kf) ** r) ** (1 / r) / ((w @ f**q) ** (1 / q) * Mnorm)))
    ratios = np.array(ratios)
    return {"ell": ell, "C": float(ratios.max()), "min": float(ratios.min()), "ratios": ratios}


def kernel_check_table(asm: KernelAssembly, db=None, col_tol: float = 0.02, db_tol: float = 1e-6):
    """Rows (check, value, tolerance, pass) for the kernel-check artifact."""
    db = db or asm.meta.get("detailed_balance") or detailed_balance_audit(asm.grid, asm.rate, asm.angular, asm.gh_order)
    sand = frequency_sandwich(asm)
    col = column_sum_audit(asm)
    M = asm.M
    eq = float(np.max(np.abs(asm.apply(M))) / np.max(M))
    return [
        ("detailed_balance", db["max_rel_asymmetry"], db_tol, db["max_rel_asymmetry"] <= db_tol),
        ("frequency_sandwich_C1", sand["C1"], 0.0, sand["C1"] > 0),
        ("frequency_sandwich_C2", sand["C2"], 0.0, sand["C2"] >= sand["C1"]),
        ("column_sum_consistency", col["max_rel"], col_tol, col["max_rel"] <= col_tol),
        ("symmetry", float(np.max(np.abs(asm.a - asm.a.T))), 0.0, bool(np.array_equal(asm.a, asm.a.T))),
        ("equilibrium_residual", eq, 1e-12, eq <= 1e-12),
    ]


# Povzner


@dataclass(frozen=True)
class PovznerResult:
    value: float
    s: float
    order: int


def _sphere_rule(d: int, order: int):
    if d == 2:
        phi = 2 * np.pi * np.arange(order) / order
        return np.stack([np.cos(phi), np.sin(phi)], -1), np.full(order, 2 * np.pi / order)
    c, wc = np.polynomial.legendre.leggauss(order)
    m = 2 * order
    phi = 2 * np.pi * np.arange(m) / m
    C, P = np.meshgrid(c, phi, indexing="ij")
    S = np.sqrt(1 - C * C)
    pts = np.stack([S * np.cos(P), S * np.sin(P), C], -1).reshape(-1, 3)
    return pts, (wc[:, None] * np.full(m, 2 * np.pi / m)[None, :]).ravel()


def _povzner_integrand(v, vs, sig, b, s):
    u = v - vs
    g = np.linalg.norm(u)
    if g == 0:
        return np.zeros(len(sig))
    cos = sig @ (u / g)
    mid = 0.5 * (v + vs)
    vp = mid[None, :] + 0.5 * g * sig
    vsp = mid[None, :] - 0.5 * g * sig
    n = lambda x: np.sum(x * x, axis=-1) ** (0.5 * s)
    return b(cos) * (n(vp) + n(vsp) - np.sum(v * v) ** (0.5 * s) - np.sum(vs * vs) ** (0.5 * s))


def povzner_integral(v, vs, b: AngularKernel, s: float, order: int = 64) -> PovznerResult:
    if not b.cutoff:
        raise ValueError("Povzner integral requires a bounded angular kernel")
    v = np.asarray(v, dtype=float)
    vs = np.asarray(vs, dtype=float)
    sig, w = _sphere_rule(len(v), order)
    return PovznerResult(float(w @ _povzner_integrand(v, vs, sig, b, s)), s, order)


def povzner_monte_carlo(v, vs, b: AngularKernel, s: float, n: int = 1_000_000, seed: int = 0):
    """(mean, standard error) of I_s by uniform sampling of the sphere."""
    v = np.asarray(v, dtype=float)
    vs = np.asarray(vs, dtype=float)
    rng = np.random.default_rng(seed)
    d = len(v)
    sig = rng.normal(size=(n, d))
    sig /= np.linalg.norm(sig, axis=-1, keepdims=True)
    vals = sphere_area(d - 1) * _povzner_integrand(v, vs, sig, b, s)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def povzner_bound_fit(vs_list, vss_list, b: AngularKernel, s: float, order: int = 64):
    """Fit positive C1, C2 in I_s <= C1 |v|^{s/2}|v*|^{s/2} - C2 (|v|^s+|v*|^s)(1 - band)."""
    I, X, Y, chi = [], [], [], []
    for v in vs_list:
        for w in vss_list:
            I.append(povzner_integral(v, w, b, s, order).value)
            a, c = np.linalg.norm(v), np.linalg.norm(w)
            X.append(a**s + c**s)
            Y.append((a * c) ** (0.5 * s))
            chi.append(0.0 if (a / 2 <= c <= 2 * a) else 1.0)
    I, X, Y, chi = map(np.asarray, (I, X, Y, chi))
    # out-of-band pairs can still have I_s > 0 (near-orthogonal, ratio just above 2), so C2 is taken
    # from the large-ratio limit I_s(v, 0) = -kappa |v|^s and C1 absorbs the remainder
    e1 = np.zeros(np.asarray(vs_list[0]).shape[-1])
    e1[0] = 1.0
    C2 = 0.5 * float(-povzner_integral(e1, np.zeros_like(e1), b, s, order).value)
    rhs_free = I + C2 * X * chi
    pos = Y > 0
    C1 = float(max(np.max(rhs_free[pos] / Y[pos]), 0.0)) * (1 + 1e-12) + 1e-300
    slack = C1 * Y - C2 * X * chi - I
    scale = np.maximum(np.abs(I), 1.0)
    ok = bool(C1 > 0 and C2 > 0 and np.all(slack >= -1e-10 * scale))
    return {"C1": C1, "C2": C2, "min_slack": float(np.min(slack / scale)), "pass": ok, "I": I}
