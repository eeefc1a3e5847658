"""Time integration of the discrete linear Boltzmann flow and trajectory probes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .entropy_lab import (
    PhiFunctional,
    entropy_production,
    gamma_functional,
    hp_functional,
    l1_distance,
    phi_entropy,
    relative_entropy,
)
from .collision_kernels import KernelAssembly, frequency_sandwich
from .velocity_domain import DensityField, WeightSpec, heavy_tail, lp_norm, maxwellian_values, moment

__all__ = [
    "SolverConfig",
    "SolverError",
    "DeltaSchedule",
    "Trajectory",
    "TRAJECTORY_COLUMNS",
    "integrate",
    "integrate_modified",
    "duhamel_floor",
    "maxwellian_floor_check",
    "slow_convergence_probe",
    "tail_loss_fraction",
    "production_consistency",
    "monotonicity_check",
    "PHI_VARIANTS",
]

PHI_VARIANTS = (PhiFunctional("boltzmann"), PhiFunctional("power", 2.0), PhiFunctional("quadratic"), PhiFunctional("l1"))

TRAJECTORY_COLUMNS = ["t", "mass", "H", "D_gamma", "D_0", "D_mu", "m_s", "Lp", "Hp", "Gamma_aq", "floor_c"]


class SolverError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


@dataclass
class SolverConfig:
    t_end: float
    dt: float | None = None
    dt_factor: float = 0.1
    scheme: str = "RK4"
    snapshot_stride: int = 1
    mass_tol: float = 1e-8
    positivity_floor: float = 1e-12
    # diagnostic parameters
    s: float = 2.0
    k: float = 2.0
    p: float = 2.0
    lambda1: float | None = None
    diagnostics: bool = True

    def __post_init__(self):
        if self.scheme not in ("RK4", "ExponentialEuler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.positivity_floor < 0:
            raise ValueError("positivity floor must be nonnegative")

    def step_size(self, sigma_max: float) -> float:
        dt = self.dt if self.dt is not None else self.dt_factor / sigma_max
        if dt * sigma_max > 0.5 * (1 + 1e-12):
            raise SolverError(f"dt={dt} violates the stability guard dt <= 0.5/max(Sigma)={0.5 / sigma_max}")
        return dt


@dataclass(frozen=True)
class DeltaSchedule:
    """delta(t) = 1/2 exp(-(1+t)^((mu+2)/s)); ``fixed`` overrides with a constant."""

    s: float
    mu: float | None = None
    eps: float = 0.1
    fixed: float | None = None

    def __post_init__(self):
        if self.fixed is None and self.mu_value <= 0:
            raise ValueError("mu must be positive (needs s > 2 for the default)")

    @property
    def mu_value(self) -> float:
        return self.mu if self.mu is not None else (self.s - 2) / (1 + self.eps)

    def delta(self, t):
        if self.fixed is not None:
            return np.full_like(np.asarray(t, dtype=float), self.fixed)
        return 0.5 * np.exp(-((1.0 + np.asarray(t, dtype=float)) ** ((self.mu_value + 2) / self.s)))

    def ddelta(self, t):
        if self.fixed is not None:
            return np.zeros_like(np.asarray(t, dtype=float))
        a = (self.mu_value + 2) / self.s
        t = np.asarray(t, dtype=float)
        return -a * (1.0 + t) ** (a - 1) * self.delta(t)


@dataclass
class Trajectory:
    times: np.ndarray
    fields: list
    diagnostics: dict
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.asarray(self.diagnostics[name])

    def field_at(self, t: float) -> DensityField:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.fields[k]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(len(self.times)):
            w.writerow([repr(float(self.diagnostics[c][k])) if c != "t" else repr(float(self.times[k])) for c in TRAJECTORY_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def read_csv(source) -> "Trajectory":
        text = Path(source).read_text() if "\n" not in str(source) else source
        rows = list(csv.reader(text.splitlines()))
        header = rows[0]
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        diag = {h: data[:, k] for k, h in enumerate(header)}
        return Trajectory(diag["t"], [], diag)


def _diagnose(f: DensityField, asm: KernelAssembly, cfg: SolverConfig, aux: dict) -> dict:
    out = {"mass": f.mass}
    if not cfg.diagnostics:
        return out
    # unit-mass discrete equilibrium; differs from H(f|M) by a constant only
    Meq = asm.M / (f.grid.weights @ asm.M)
    out["H"] = relative_entropy(f, Meq)
    out["D_gamma"] = entropy_production(asm, f)
    out["D_0"] = entropy_production(aux["zero"], f) if "zero" in aux else np.nan
    out["D_mu"] = entropy_production(aux["mu"], f) if "mu" in aux else np.nan
    out["m_s"] = moment(f, WeightSpec("plain", cfg.s))
    out["M_k"] = moment(f, WeightSpec("bracket", cfg.k))
    out["Lp"] = lp_norm(f, cfg.p)
    out["Hp"] = hp_functional(f, cfg.p, Meq)
    out["Gamma_aq"] = gamma_functional(aux["gamma_aq"], f) if "gamma_aq" in aux else np.nan
    if cfg.lambda1 is not None:
        with np.errstate(divide="ignore"):
            lc = np.min(np.log(f.values) + cfg.lambda1 * f.grid.speed2)
        out["floor_c"] = float(np.exp(lc)) if np.isfinite(lc) else 0.0
    else:
        out["floor_c"] = np.nan
    return out


def _run(asm, f0, cfg, rhs_extra=None, init=None, aux=None, record=None):
    aux = aux or {}
    grid = asm.grid
    if f0.grid is not grid and not np.array_equal(f0.grid.nodes, grid.nodes):
        raise ValueError("assembly and initial datum live on different grids")
    if abs(f0.mass - 1.0) > 1e-8:
        raise ValueError(f"initial datum must have unit mass within 1e-8, got {f0.mass!r}")
    dt = cfg.step_size(asm.sigma_max)
    nsteps = int(np.ceil(cfg.t_end / dt - 1e-9))
    G = asm.generator_matrix()
    q = grid.weights
    f = f0.values.copy() if init is None else init.copy()

    def rhs(t, x):
        out = G @ x
        if rhs_extra is not None:
            out = out + rhs_extra(t, x)
        return out

    times, fields = [0.0], [grid.field(f)]
    diags = [_diagnose(fields[0], asm, cfg, aux)]
    m0 = q @ f
    max_step_drift = 0.0
    for n in range(1, nsteps + 1):
        t = (n - 1) * dt
        if cfg.scheme == "RK4":
            k1 = rhs(t, f)
            k2 = rhs(t + dt / 2, f + dt / 2 * k1)
            k3 = rhs(t + dt / 2, f + dt / 2 * k2)
            k4 = rhs(t + dt, f + dt * k3)
            fn = f + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            e = np.exp(-asm.sigma * dt)
            fn = e * f + (1 - e) / asm.sigma * asm.gain(f)
            if rhs_extra is not None:
                fn = fn + dt * rhs_extra(t, f)
        if not np.all(np.isfinite(fn)):
            raise SolverError("non-finite value encountered", step=n)
        lo = fn.min()
        if lo < -cfg.positivity_floor * max(fn.max(), 1e-300):
            raise SolverError(f"negative value {lo:.3e} below positivity floor", step=n)
        # clip round-off negatives at the floor level for the field object
        max_step_drift = max(max_step_drift, abs(q @ fn - q @ f))
        f = fn
        if n % cfg.snapshot_stride == 0 or n == nsteps:
            fld = grid.field(np.maximum(f, 0.0))
            times.append(n * dt)
            fields.append(fld)
            diags.append(_diagnose(fld, asm, cfg, aux))
    drift = abs(q @ f - m0)
    if cfg.scheme == "RK4" and rhs_extra is None and drift > cfg.mass_tol:
        raise SolverError(f"mass drift {drift:.3e} exceeds tolerance {cfg.mass_tol:.1e}", step=nsteps)
    keys = diags[0].keys()
    diagnostics = {k: np.array([d.get(k, np.nan) for d in diags]) for k in keys}
    for c in TRAJECTORY_COLUMNS[1:]:
        diagnostics.setdefault(c, np.full(len(times), np.nan))
    meta = {"dt": dt, "steps": nsteps, "scheme": cfg.scheme, "mass_drift": float(drift), "max_step_drift": float(max_step_drift)}
    return Trajectory(np.array(times), fields, diagnostics, meta)


def integrate(asm: KernelAssembly, f0: DensityField, cfg: SolverConfig, aux: dict | None = None) -> Trajectory:
    """Integrate d/dt f = K f - Sigma f.

    aux may hold extra assemblies keyed ``zero``, ``mu`` and ``gamma_aq``
    for the D_0, D_mu and Gamma_aq diagnostics.
    """
    return _run(asm, f0, cfg, aux=aux)


def integrate_modified(asm: KernelAssembly, f0: DensityField, sched: DeltaSchedule, cfg: SolverConfig, aux=None) -> Trajectory:
    """Evolve g = (1-delta) f + delta M by d/dt g = L g - (delta'/(1-delta)) (g - M).

    M is the unit-mass discrete equilibrium, so the blend conserves mass.
    """
    M = asm.M / (asm.grid.weights @ asm.M)
    d0 = float(sched.delta(0.0))
    g0 = (1 - d0) * f0.values + d0 * M

    def extra(t, x):
        d = float(sched.delta(t))
        return -(float(sched.ddelta(t)) / (1 - d)) * (x - M)

    traj = _run(asm, f0, cfg, rhs_extra=extra, init=g0, aux=aux)
    traj.meta["delta"] = sched.delta(traj.times)
    return traj


def duhamel_floor(asm: KernelAssembly, f0: DensityField, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return np.exp(-asm.sigma * t) * f0.values


def maxwellian_floor_check(traj: Trajectory, t0: float, lambda1: float, s: float = 2.0, sigma_max: float | None = None, eps: float = 0.1):
    """c(t) = min_i f(t,v_i) exp(lambda1 (|v_i|^2 + sup_{tau<=t} (2 m_s)^(2/s))) along a run."""
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    times = traj.times
    ms = np.array([moment(f, WeightSpec("plain", s)) for f in traj.fields])
    sup_term = np.maximum.accumulate((2 * ms) ** (2 / s))
    logc = []
    for f, st in zip(traj.fields, sup_term):
        with np.errstate(divide="ignore"):
            logc.append(np.min(np.log(f.values) + lambda1 * f.grid.speed2) + lambda1 * st)
    logc = np.array(logc)
    c = np.exp(logc)
    sel = times >= t0 - 1e-12
    c_min = float(c[sel].min()) if sel.any() else np.nan
    rep = {"times": times, "c": c, "log_c": logc, "c_min": c_min, "pass": bool(c_min > 0), "t0": t0, "lambda1": lambda1}
    if sigma_max is not None:
        # prefactor shape (1 - exp(-S t)) between t0 and 2 t0
        k0 = int(np.argmin(np.abs(times - t0)))
        k1 = int(np.argmin(np.abs(times - 2 * t0)))
        shape = (1 - np.exp(-sigma_max * times[k1])) / (1 - np.exp(-sigma_max * times[k0]))
        rep["onset_ratio"] = float(c[k1] / c[k0]) if c[k0] > 0 else np.inf
        rep["onset_pass"] = bool(c[k1] >= shape * c[k0] * (1 - eps))
    return rep


def monotonicity_check(traj: Trajectory, ps=(1.5, 2.0, 3.0), phis=PHI_VARIANTS, tol: float = 1e-12) -> dict:
    """Per-step increase of H_p and H_Phi along the recorded fields.

    A step passes when F(t_{n+1}) <= F(t_n) + tol * max(1, |F(t_n)|).
    """
    grid = traj.fields[0].grid
    M = maxwellian_values(grid.nodes)
    M = M / (grid.weights @ M)
    out = {}
    series = {f"Hp_{p:g}": [hp_functional(f, p, M) for f in traj.fields] for p in ps}
    series.update({f"phi_{phi.label()}": [phi_entropy(f, phi, M) for f in traj.fields] for phi in phis})
    ok = True
    for name, vals in series.items():
        v = np.asarray(vals)
        inc = np.diff(v)
        allow = tol * np.maximum(1.0, np.abs(v[:-1]))
        bad = np.flatnonzero(inc > allow)
        out[name] = {"max_increase": float(inc.max()) if len(inc) else 0.0, "failing_steps": bad.tolist(),
                     "pass": bool(len(bad) == 0)}
        ok &= len(bad) == 0
    return {"series": out, "pass": bool(ok)}


def production_consistency(asm: KernelAssembly, f0: DensityField, times, cfg: SolverConfig | None = None, refine: int = 10, tol: float = 0.01):
    """|-dH/dt - D_gamma| / D_gamma at the given times.

    dH/dt is a central difference on a run with the step refined ``refine``
    times below the guard step.
    """
    times = np.asarray(sorted(times), dtype=float)
    base = cfg or SolverConfig(t_end=float(times.max()))
    dt = base.step_size(asm.sigma_max) / refine
    fine = SolverConfig(**{**base.__dict__, "t_end": float(times.max()) + 2 * dt, "dt": dt, "snapshot_stride": 1,
                           "diagnostics": False})
    traj = integrate(asm, f0, fine)
    rows = []
    for t in times:
        k = int(np.argmin(np.abs(traj.times - t)))
        if k == 0 or k + 1 >= len(traj.times):
            raise SolverError(f"no central stencil around t={t}")
        h = traj.times[k + 1] - traj.times[k]
        dH = (relative_entropy(traj.fields[k + 1], asm.M) - relative_entropy(traj.fields[k - 1], asm.M)) / (2 * h)
        D = entropy_production(asm, traj.fields[k])
        rel = abs(-dH - D) / D if D > 0 else abs(dH)
        rows.append((float(traj.times[k]), float(-dH), float(D), float(rel), bool(rel <= tol)))
    return {"rows": rows, "dt": dt, "tol": tol, "pass": all(r[4] for r in rows)}


def tail_loss_fraction(d: int, exponent: float, R: float) -> float:
    """Share of the continuum mass of <v>^-exponent lying outside [-R, R]^d."""
    from scipy import integrate as _int

    if exponent <= d:
        return 1.0
    if d == 1:
        inside = 2 * _int.quad(lambda x: (1 + x * x) ** (-exponent / 2), 0, R)[0]
        total = 2 * _int.quad(lambda x: (1 + x * x) ** (-exponent / 2), 0, np.inf)[0]
        return 1 - inside / total
    from scipy.special import beta, gamma as _G

    area = 2 * np.pi ** (d / 2) / _G(d / 2)
    total = area * 0.5 * beta(d / 2, exponent / 2 - d / 2)
    if d == 2:
        # inside the square via polar integration over one octant
        f = lambda th: _int.quad(lambda r: r * (1 + r * r) ** (-exponent / 2), 0, R / np.cos(th))[0]
        inside = 8 * _int.quad(f, 0, np.pi / 4)[0]
    else:
        f = lambda x, y: 2 * _int.quad(lambda z: (1 + x * x + y * y + z * z) ** (-exponent / 2), 0, R)[0]
        inside = 4 * _int.dblquad(lambda y, x: f(x, y), 0, R, 0, R)[0]
    return 1 - inside / total


def slow_convergence_probe(asm: KernelAssembly, tail_exponent: float, k: float, times, cfg: SolverConfig | None = None, max_tail_loss: float = 0.1, f0=None):
    """Both sides of ||f(t)-M||_{L^1_k} >= C1 int_{|v|>t^(1/|g|)} <v>^k f0 - C2 exp(-t^(2/|g|)/4)."""
    grid = asm.grid
    d, g = grid.d, asm.gamma
    if not g < 0:
        raise ValueError("slow convergence probe needs gamma < 0")
    expo = d + k + tail_exponent
    loss = tail_loss_fraction(d, expo, grid.spec.R)
    if loss > max_tail_loss:
        raise ValueError(f"tail mass beyond R is {loss:.1%} > {max_tail_loss:.0%}; truncation invalidates the probe")
    f0 = heavy_tail(grid, expo) if f0 is None else f0
    times = np.asarray(sorted(times), dtype=float)
    cfg = cfg or SolverConfig(t_end=float(times.max()), diagnostics=False)
    if cfg.t_end < times.max():
        raise ValueError("solver horizon shorter than probe times")
    dt = cfg.step_size(asm.sigma_max)
    cfg = SolverConfig(**{**cfg.__dict__, "snapshot_stride": 1, "diagnostics": False})
    traj = integrate(asm, f0, cfg)
    c_gamma = frequency_sandwich(asm)["C2"]
    C1 = np.exp(-c_gamma)
    # C2 = (2 pi)^(-d/2) int <v>^k exp(-|v|^2/4) dv
    from scipy import integrate as _int
    from scipy.special import gamma as _G

    area = 2 * np.pi ** (d / 2) / _G(d / 2)
    C2 = (2 * np.pi) ** (-d / 2) * area * _int.quad(lambda r: r ** (d - 1) * (1 + r * r) ** (k / 2) * np.exp(-r * r / 4), 0, np.inf)[0]
    br = (1 + grid.speed2) ** (k / 2)
    speed = np.sqrt(grid.speed2)
    rows = []
    for t in times:
        idx = int(np.argmin(np.abs(traj.times - t)))
        if abs(traj.times[idx] - t) > 0.5 * dt + 1e-12:
            raise SolverError(f"no snapshot near t={t}")
        ft = traj.fields[idx]
        lhs = l1_distance(ft, asm.M, k)
        rad = t ** (1 / abs(g))
        sel = speed > rad
        tail = float(grid.weights @ (br * f0.values * sel))
        rhs = C1 * tail - C2 * np.exp(-(t ** (2 / abs(g))) / 4)
        rows.append((float(t), lhs, rhs, lhs - rhs, bool(lhs >= rhs)))
    return {"rows": rows, "C1": float(C1), "C2": float(C2), "c_gamma": float(c_gamma), "tail_loss": loss, "pass": all(r[4] for r in rows), "trajectory": traj}
