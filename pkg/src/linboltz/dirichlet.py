"""Non-cutoff Dirichlet form, spectral gaps and the linear-inequality probe.

The form is assembled by quadrature over (v_i, v*_j, sigma) with a graded
theta-mesh; h(v') is evaluated by multilinear interpolation on the grid.
Collision points v' that leave the box are dropped, so constants stay in the
kernel of the discrete form.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .collision_kernels import AngularKernel, KernelAssembly, cache_dir
from .velocity_domain import DensityField, VelocityGrid, maxwellian_values

__all__ = [
    "DirichletAssembly",
    "assemble_dirichlet",
    "dirichlet_value",
    "cutoff_form",
    "spectral_gap",
    "GapResult",
    "nc_entropy_production",
    "conjecture_probe",
]


@dataclass(eq=False)
class DirichletAssembly:
    """Quadratic form D(h) = h^T Q h on nodal values h = f / M."""

    grid: VelocityGrid
    gamma: float
    angular: AngularKernel
    theta_min: float
    K: int
    Q: np.ndarray
    meta: dict = field(default_factory=dict)
    terms: list | None = None

    def value(self, h) -> float:
        h = np.asarray(h, dtype=float)
        return float(h @ self.Q @ h)


def _theta_rule(theta_min: float, K: int, d: int, n_phi: int):
    """Graded theta-mesh theta_k = theta_min (pi/theta_min)^(k/K), trapezoid in k.

    Returns (directions in the local frame, weights) where a direction is
    (cos theta, sin theta * unit vector in the transverse plane).
    """
    L = np.log(np.pi / theta_min)
    k = np.arange(K + 1)
    th = theta_min * np.exp(L * k / K)
    wk = np.full(K + 1, L / K)
    wk[0] = wk[-1] = 0.5 * L / K
    wk = wk * th  # d theta = theta L ds
    if d == 2:
        # both signs of theta on the circle
        cos = np.concatenate([np.cos(th), np.cos(th)])
        sin = np.concatenate([np.sin(th), -np.sin(th)])
        dirs = np.stack([cos, sin], axis=-1)
        w = np.concatenate([wk, wk])
        ths = np.concatenate([th, th])
        return ths, dirs, w
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(th, phi, indexing="ij")
    W = np.repeat(wk[:, None] * np.sin(th)[:, None], n_phi, axis=1) * (2 * np.pi / n_phi)
    dirs = np.stack([np.cos(T), np.sin(T) * np.cos(P), np.sin(T) * np.sin(P)], axis=-1).reshape(-1, 3)
    return T.ravel(), dirs, W.ravel()


def _frames(n_hat: np.ndarray):
    """Orthonormal frames with first column n_hat, shape (m, d, d)."""
    m, d = n_hat.shape
    if d == 2:
        perp = np.stack([-n_hat[:, 1], n_hat[:, 0]], axis=-1)
        return np.stack([n_hat, perp], axis=-1)
    a = np.zeros_like(n_hat)
    small = np.argmin(np.abs(n_hat), axis=1)
    a[np.arange(m), small] = 1.0
    e1 = a - np.sum(a * n_hat, axis=1, keepdims=True) * n_hat
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n_hat, e1)
    return np.stack([n_hat, e1, e2], axis=-1)


def _interp(grid: VelocityGrid, x: np.ndarray):
    """Multilinear interpolation stencil: (inside mask, corner indices, corner weights)."""
    N, R, h = grid.spec.N, float(grid.spec.R), grid.h
    d = grid.d
    s = (x + R) / h
    inside = np.all((s >= -1e-12) & (s <= N - 1 + 1e-12), axis=1)
    s = np.clip(s[inside], 0.0, N - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), N - 2)
    t = s - i0
    corners, weights = [], []
    strides = N ** np.arange(d - 1, -1, -1)
    for bits in range(2 ** d):
        off = np.array([(bits >> (d - 1 - k)) & 1 for k in range(d)])
        idx = (i0 + off) @ strides
        wt = np.prod(np.where(off == 1, t, 1.0 - t), axis=1)
        corners.append(idx)
        weights.append(wt)
    return inside, np.stack(corners, axis=1), np.stack(weights, axis=1)


def _term_chunks(grid, gamma, b, theta_min, K, n_phi, rows_per_chunk):
    """Yield (i, corners, corner weights, w) for the quadrature terms."""
    v = grid.nodes
    q = grid.weights
    M = maxwellian_values(v)
    ths, dirs, wth = _theta_rule(theta_min, K, grid.d, n_phi)
    bth = b.prefactor * ths ** (-(grid.d - 1) - b.nu)
    ang = wth * bth
    n = grid.n
    for lo in range(0, n, rows_per_chunk):
        hi = min(n, lo + rows_per_chunk)
        I, J = np.meshgrid(np.arange(lo, hi), np.arange(n), indexing="ij")
        I, J = I.ravel(), J.ravel()
        keep = I != J
        I, J = I[keep], J[keep]
        u = v[I] - v[J]
        g = np.linalg.norm(u, axis=1)
        pair_w = q[I] * q[J] * M[I] * M[J] * g**gamma
        nz = pair_w > 0
        I, J, u, g, pair_w = I[nz], J[nz], u[nz], g[nz], pair_w[nz]
        F = _frames(u / g[:, None])
        sig = np.einsum("pab,tb->pta", F, dirs)  # (pairs, nodes, d)
        vp = 0.5 * (v[I] + v[J])[:, None, :] + 0.5 * g[:, None, None] * sig
        vp = vp.reshape(-1, grid.d)
        ii = np.repeat(I, len(ang))
        ww = (pair_w[:, None] * ang[None, :]).ravel()
        inside, corners, cw = _interp(grid, vp)
        yield ii[inside], corners, cw, ww[inside]


def assemble_dirichlet(grid: VelocityGrid, gamma: float, b: AngularKernel, theta_min: float = 0.1, K: int = 64,
                       n_phi: int = 16, keep_terms: bool = False, rows_per_chunk: int | None = None) -> DirichletAssembly:
    """Assemble the non-cutoff Dirichlet form on ``grid``.

    Q = 1/2 sum_t w_t (e_i - p_t)(e_i - p_t)^T with p_t the interpolation
    stencil of v' for the term t.
    """
    if b.variant != "noncutoff":
        raise ValueError("assemble_dirichlet needs a non-cutoff angular kernel")
    if not 0.0 < b.nu < 2.0:
        raise ValueError(f"nu must lie in (0,2), got {b.nu}")
    if not 0.0 < theta_min < np.pi / 4:
        raise ValueError(f"theta_min must lie in (0, pi/4), got {theta_min}")
    if not -grid.d < gamma <= 0:
        raise ValueError(f"gamma must lie in ({-grid.d},0], got {gamma}")
    key = hashlib.sha256(json.dumps({
        "d": grid.d, "N": grid.spec.N, "R": repr(float(grid.spec.R)), "gamma": repr(float(gamma)),
        "b": b.describe(), "theta_min": repr(float(theta_min)), "K": K, "n_phi": n_phi, "rule": "v1",
    }, sort_keys=True).encode()).hexdigest()[:20]
    cdir = cache_dir()
    path = cdir / f"dirichlet_{key}.npz" if cdir is not None else None
    if path is not None and path.exists() and not keep_terms:
        z = np.load(path)
        meta = json.loads(str(z["meta"]))
        meta["cached"] = True
        return DirichletAssembly(grid, float(gamma), b, theta_min, K, z["Q"], meta)
    n = grid.n
    n_ang = 2 * (K + 1) if grid.d == 2 else (K + 1) * n_phi
    rows = rows_per_chunk or max(1, int(2e6 // (n * n_ang)))
    Q = np.zeros((n, n))
    kept = [] if keep_terms else None
    total = 0.0
    for I, C, CW, W in _term_chunks(grid, gamma, b, theta_min, K, n_phi, rows):
        T = len(I)
        r = np.arange(T)
        data = np.concatenate([np.ones(T), -CW.ravel()])
        rr = np.concatenate([r, np.repeat(r, C.shape[1])])
        cc = np.concatenate([I, C.ravel()])
        D = sparse.csr_matrix((data, (rr, cc)), shape=(T, n))
        Q += 0.5 * (D.T @ sparse.diags(W) @ D).toarray()
        total += W.sum()
        if kept is not None:
            kept.append((I.astype(np.int32), C.astype(np.int32), CW, W))
    Q = 0.5 * (Q + Q.T)
    meta = {
        "theta_min": theta_min,
        "K": K,
        "nu": b.nu,
        # smooth-h fraction of the angular integral lost below theta_min
        "cut_fraction": (theta_min / np.pi) ** (2 - b.nu),
        "total_weight": float(total),
        "cache_key": key,
        "cached": False,
    }
    if path is not None:
        cdir.mkdir(parents=True, exist_ok=True)
        tmp = cdir / f"dirichlet_{key}.tmp.npz"
        np.savez(tmp, Q=Q, meta=json.dumps(meta))
        os.replace(tmp, path)
    return DirichletAssembly(grid, float(gamma), b, theta_min, K, Q, meta, kept)


def dirichlet_value(form, f: DensityField) -> float:
    h = f.values / maxwellian_values(f.grid.nodes)
    return float(h @ form.Q @ h) if isinstance(form, DirichletAssembly) else float(h @ cutoff_form(form) @ h)


def cutoff_form(asm: KernelAssembly) -> np.ndarray:
    """Matrix of 1/2 sum_ij a_ij q_i q_j (h_i - h_j)^2 for a cut-off assembly."""
    q = asm.grid.weights
    W = asm.a * q[:, None] * q[None, :]
    np.fill_diagonal(W, 0.0)
    return np.diag(W.sum(axis=1)) - W


@dataclass
class GapResult:
    gap: float
    bottom: float
    constant_overlap: float
    n: int

    def as_dict(self):
        return {"gap": self.gap, "bottom": self.bottom, "constant_overlap": self.constant_overlap, "n": self.n}


def spectral_gap(form, indefinite_tol: float = 1e-10) -> GapResult:
    """Smallest nonzero generalized eigenvalue of the form against diag(M q).

    The constant mode is removed by projecting onto its B-orthogonal
    complement and shifting it to the top of the spectrum.
    """
    if isinstance(form, DirichletAssembly):
        Q, grid = form.Q, form.grid
    elif isinstance(form, KernelAssembly):
        Q, grid = cutoff_form(form), form.grid
    else:
        raise TypeError("spectral_gap needs a DirichletAssembly or KernelAssembly")
    if grid.n > 2500:
        raise ValueError(f"dense eigensolve limited to 2500 nodes, got {grid.n}")
    Bs = np.sqrt(maxwellian_values(grid.nodes) * grid.weights)
    S = Q / Bs[:, None] / Bs[None, :]
    S = 0.5 * (S + S.T)
    ev, vec = linalg.eigh(S)
    scale = max(1.0, float(np.max(np.abs(ev))))
    if ev[0] < -indefinite_tol * scale:
        raise FloatingPointError(f"form is indefinite: bottom eigenvalue {ev[0]:.3e}")
    u = Bs / np.linalg.norm(Bs)
    overlap = float(abs(vec[:, 0] @ u))
    P = np.eye(grid.n) - np.outer(u, u)
    shift = 2.0 * scale + 1.0
    ev2 = linalg.eigh(P @ S @ P + shift * np.outer(u, u), eigvals_only=True)
    return GapResult(float(ev2[0]), float(ev[0]), overlap, grid.n)


def nc_entropy_production(form: DirichletAssembly, f: DensityField) -> float:
    """Entropy production with the (h(v') - h(v)) log(h(v')/h(v)) integrand."""
    if form.terms is None:
        raise ValueError("assemble with keep_terms=True to evaluate productions")
    h = f.values / maxwellian_values(f.grid.nodes)
    if np.any(h <= 0):
        return float("inf")
    total = 0.0
    for I, C, CW, W in form.terms:
        hp = np.sum(CW * h[C], axis=1)
        hi = h[I]
        total += 0.5 * float(W @ ((hp - hi) * (np.log(hp) - np.log(hi))))
    return total


def conjecture_probe(forms, restarts: int = 3, seed: int = 0, families=None) -> dict:
    """Infimum of D(f)/H(f|M) over the search families for each form.

    ``forms`` maps a label (e.g. theta_min or R) to a DirichletAssembly built
    with ``keep_terms=True``.  Returns per-label infima and the relative
    spread between consecutive refinements.
    """
    from .entropy_lab import estimate_lambda0

    out = {}
    for label, form in forms.items():
        best = estimate_lambda0(None, restarts=restarts, seed=seed, grid=form.grid, families=families,
                                production=lambda f, form=form: nc_entropy_production(form, f))
        out[str(label)] = best
    vals = [out[k]["value"] for k in out]
    trend = [abs(b - a) / max(abs(a), 1e-300) for a, b in zip(vals, vals[1:])]
    return {"infima": out, "relative_changes": trend, "all_positive": bool(all(v > 0 for v in vals))}
