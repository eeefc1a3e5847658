"""Rate exponents, decay-law fits, the differential-inequality envelope and
uniform-boundedness checks on trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "ExponentParameters",
    "exponent_parameters",
    "sigma_max",
    "diff_inequality_bound",
    "rk4_oracle",
    "RateFit",
    "fit_algebraic",
    "fit_stretched",
    "stretched_target",
    "default_window",
    "log_production_ratio",
    "beta_threshold",
    "uniform_bound_check",
    "moment_growth_check",
    "interpolation_envelope_check",
]


def sigma_max(s: float, gamma: float) -> float:
    """Supremum of admissible algebraic rates: sigma < -1 + (s-2)/|gamma|."""
    return -1.0 + (s - 2.0) / abs(gamma)


@dataclass(frozen=True)
class ExponentParameters:
    p: float
    d: int
    gamma: float
    eta0: float
    eta: float
    r: float
    s_min: float
    checks: dict = field(default_factory=dict)

    def sigma_max(self, s: float) -> float:
        return sigma_max(s, self.gamma)

    @property
    def q_exp(self) -> float:
        return self.p - self.eta

    @property
    def r_exp(self) -> float:
        return self.p + self.eta


def _eta0(p: float, d: int, gamma: float) -> float:
    a = 1.0 + gamma / d
    terms = [
        p - 1.0,
        (p - 1.0) ** 2 / (2.0 - p) if p < 2 else np.inf,
        p**2 / (np.sqrt(1.0 / (p - 1.0) ** 2 + p**2) + 1.0 / (p - 1.0)),
        p**2 / (np.sqrt(1.0 / a**2 + p**2) + 1.0 / a),
    ]
    return float(min(terms))


def exponent_parameters(p: float, d: int, gamma: float, eta: float | None = None, eps_s: float = 1e-6) -> ExponentParameters:
    """eta_0 by the four-term minimum, eta = eta_0/2 by default, and the
    moment order r = (|gamma|/eta) max(p-1-eta, (p+eta)(p-2)+1)."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not -d < gamma < 0:
        raise ValueError(f"gamma must lie in ({-d},0), got {gamma}")
    eta0 = _eta0(p, d, gamma)
    eta = 0.5 * eta0 if eta is None else float(eta)
    if not 0 < eta < eta0:
        raise ValueError(f"eta must lie in (0, eta0={eta0})")
    g = abs(gamma)
    r = (g / eta) * max(p - 1 - eta, (p + eta) * (p - 2) + 1)
    # the rate theorem also needs s > 2 + |gamma|
    s_min = max(r, 2 * max(1.0, g) + eps_s, 2 + g + eps_s)
    q_, r_ = p - eta, p + eta
    checks = {
        "q_gt_1": q_ > 1,
        "r_gt_p": r_ > p,
        "holder_2mp": (p >= 2) or ((2 - p) * r_ < 1),
        "r_minus_q": (r_ - q_) < r_ * q_ * (p - 1),
        "young": 1 / q_ < 1 + gamma / d + 1 / r_,
        "r_gt_1": r > 1,
        "s_min_gt_2_plus_gamma": s_min > 2 + g,
    }
    return ExponentParameters(float(p), int(d), float(gamma), eta0, eta, float(r), float(s_min),
                              {k: bool(v) for k, v in checks.items()})


# differential inequality u' <= -C (1+t)^(-alpha) u^(1+beta) + xi(t)


def _sup_weighted(xi, alpha, beta, t_max=1e6, n=4001):
    t = np.concatenate([[0.0], np.logspace(-4, np.log10(t_max), n)])
    vals = (1 + t) ** ((beta + 1 - alpha) / beta) * np.asarray([xi(s) for s in t], dtype=float)
    return float(np.max(vals))


def diff_inequality_bound(alpha: float, beta: float, C: float, xi=None, u0: float = 1.0, C_xi: float | None = None):
    """Closed-form envelope max(1, u0, ((1-alpha+beta C_xi)/(beta C))^(1/beta)) (1+t)^(-(1-alpha)/beta).

    ``C_xi`` = sup_t (1+t)^((beta+1-alpha)/beta) xi(t) is estimated on a
    log-spaced grid when not supplied.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0,1)")
    if not (beta > 0 and C > 0):
        raise ValueError("beta and C must be positive")
    if C_xi is None:
        C_xi = 0.0 if xi is None else _sup_weighted(xi, alpha, beta)
    if not np.isfinite(C_xi):
        raise ValueError("sup of the weighted forcing is infinite")
    A = max(1.0, u0, ((1 - alpha + beta * C_xi) / (beta * C)) ** (1 / beta))
    rate = (1 - alpha) / beta

    def bound(t):
        return A * (1.0 + np.asarray(t, dtype=float)) ** (-rate)

    bound.amplitude = A
    bound.rate = rate
    bound.C_xi = C_xi
    return bound


def rk4_oracle(alpha, beta, C, xi, u0, times, dt=1e-3):
    """RK4 solution of the equality case u' = -C (1+t)^(-alpha) u^(1+beta) + xi(t)."""
    xi = xi or (lambda t: 0.0)
    times = np.asarray(times, dtype=float)
    f = lambda t, u: -C * (1 + t) ** (-alpha) * max(u, 0.0) ** (1 + beta) + xi(t)
    out = np.empty_like(times)
    t, u = 0.0, float(u0)
    for k, target in enumerate(times):
        while t < target - 1e-14:
            h = min(dt, target - t)
            k1 = f(t, u)
            k2 = f(t + h / 2, u + h / 2 * k1)
            k3 = f(t + h / 2, u + h / 2 * k2)
            k4 = f(t + h, u + h * k3)
            u += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        out[k] = u
    return out


# decay-law fits


@dataclass
class RateFit:
    law: str
    params: dict
    window: tuple
    residual: float
    n: int
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"law": self.law, "params": self.params, "window": list(self.window), "residual": self.residual,
                "n": self.n, **self.extra}


def _series(traj):
    """(t, H) from a Trajectory or a (t, H) pair."""
    if isinstance(traj, tuple):
        t, H = traj
    else:
        t, H = traj.times, traj.column("H")
    return np.asarray(t, dtype=float), np.asarray(H, dtype=float)


def _select(t, H, window, min_samples):
    ta, tb = window
    if ta < t[0] - 1e-12 or tb > t[-1] + 1e-12 or not ta < tb:
        raise ValueError(f"window {window} not inside the trajectory [{t[0]}, {t[-1]}]")
    sel = (t >= ta - 1e-12) & (t <= tb + 1e-12)
    if sel.sum() < min_samples:
        raise ValueError(f"window holds {int(sel.sum())} samples, need >= {min_samples}")
    tt, hh = t[sel], H[sel]
    if np.any(hh <= 0):
        raise ValueError("H must be positive on the fit window")
    return tt, hh


def fit_algebraic(traj, window, sigma_target: float | None = None, min_samples: int = 8) -> RateFit:
    """Least-squares slope of log H against log(1+t); sigma = -slope.

    With ``sigma_target`` the one-sided envelope H(t) <= C (1+t)^(-sigma_target)
    is checked on the window with C fixed at the window start.
    """
    t, h = _select(*_series(traj), window, min_samples)
    x, y = np.log1p(t), np.log(h)
    A = np.stack([np.ones_like(x), x], axis=1)
    (c0, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.max(np.abs(y - (c0 + slope * x))))
    extra = {}
    if sigma_target is not None:
        C = float(h[0] * (1 + t[0]) ** sigma_target)
        env = C * (1 + t) ** (-sigma_target)
        extra["one_sided"] = {"sigma_target": float(sigma_target), "C": C,
                              "holds": bool(np.all(h <= env * (1 + 1e-12))),
                              "max_ratio": float(np.max(h / env))}
    return RateFit("algebraic", {"C": float(np.exp(c0)), "sigma": float(-slope)}, (float(t[0]), float(t[-1])),
                   res, len(t), extra)


def stretched_target(gamma: float) -> float:
    return 2.0 / (2.0 + abs(gamma))


def fit_stretched(traj, window, gamma: float, min_samples: int = 8) -> RateFit:
    """Fit log H = c0 - lambda t^e on the window by nonlinear least squares.

    The log-log regression of -log(H/H(t_a)) seeds the fit; several seeds
    are tried and the best is kept.
    """
    t, h = _select(*_series(traj), window, min_samples)
    if np.any(np.diff(h) > 0):
        raise ValueError("H is not monotone on the fit window")
    if t[0] <= 0:
        t, h = t[1:], h[1:]
    y = np.log(h)

    def resid(p):
        return p[0] - np.exp(p[1]) * t ** p[2] - y

    seeds = [0.3, 0.5, 0.7, 1.0, 1.3]
    drop = -np.log(h[1:] / h[0])
    ok = drop > 0
    if ok.sum() >= 2:
        seeds.insert(0, float(np.clip(np.polyfit(np.log(t[1:][ok]), np.log(drop[ok]), 1)[0], 0.05, 3.0)))
    best = None
    for e0 in seeds:
        lam0 = max((y[0] - y[-1]) / max(t[-1] ** e0 - t[0] ** e0, 1e-300), 1e-12)
        p0 = [y[0] + lam0 * t[0] ** e0, np.log(lam0), e0]
        r = optimize.least_squares(resid, p0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        if best is None or r.cost < best.cost:
            best = r
    c0, ll, e = best.x
    return RateFit("stretched", {"C": float(np.exp(c0)), "lambda": float(np.exp(ll)), "e": float(e),
                                 "target": stretched_target(gamma)},
                   (float(t[0]), float(t[-1])), float(np.max(np.abs(best.fun))), len(t))


def default_window(traj, t_start: float = 1.0, h_floor: float = 1e-8, curvature_tol: float = 5.0):
    """[t_start, t*] with t* the first time H < h_floor or the curvature of
    log H against log(1+t) exceeds ``curvature_tol``."""
    t, h = _series(traj)
    x = np.log1p(t)
    with np.errstate(divide="ignore"):
        y = np.log(np.maximum(h, 1e-300))
    curv = np.zeros_like(y)
    curv[1:-1] = 2 * ((y[2:] - y[1:-1]) / (x[2:] - x[1:-1]) - (y[1:-1] - y[:-2]) / (x[1:-1] - x[:-2])) / (x[2:] - x[:-2])
    bad = (t > t_start) & ((h < h_floor) | (np.abs(curv) > curvature_tol))
    t_star = float(t[np.argmax(bad)]) if np.any(bad) else float(t[-1])
    return (float(t_start), t_star)


def log_production_ratio(traj, window, gamma: float, C2: float | None = None) -> dict:
    """D |log(C2 H)|^(|gamma|/2) / H over the window.

    C2 defaults to 1/(e H(t_a)) so that |log(C2 H)| >= 1 on a decreasing run.
    """
    t = traj.times
    H, D = traj.column("H"), traj.column("D_gamma")
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    H, D = H[sel], D[sel]
    if len(H) == 0 or np.any(H <= 0):
        raise ValueError("H must be positive on the window")
    C2 = 1.0 / (np.e * H[0]) if C2 is None else C2
    r = D * np.abs(np.log(C2 * H)) ** (abs(gamma) / 2) / H
    lo = float(np.min(r))
    return {"C2": float(C2), "min": lo, "max": float(np.max(r)), "ratios": r, "pass": bool(np.isfinite(lo) and lo > 0)}


# uniform bounds


def beta_threshold(k: float, sigma: float) -> float:
    """Moment order beta must exceed k (2 + sigma) / sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return k * (2 + sigma) / sigma


def uniform_bound_check(traj, column: str = "M_k", plateau_tol: float = 0.02) -> dict:
    """Supremum of a recorded moment or norm and whether it has plateaued
    (increase over the last quartile below ``plateau_tol``)."""
    if column not in traj.diagnostics:
        raise ValueError(f"trajectory does not record {column!r}")
    y = traj.column(column)
    if len(y) < 4 or np.any(~np.isfinite(y)):
        raise ValueError(f"insufficient diagnostics for {column!r}")
    q = len(y) - max(1, len(y) // 4) - 1
    rise = float((np.max(y[q:]) - y[q]) / abs(y[q]))
    return {"column": column, "sup": float(np.max(y)), "last_quartile_rise": rise, "plateau": bool(rise < plateau_tol)}


def moment_growth_check(traj, column: str = "m_s", bound: float | None = None) -> dict:
    """m_s(t)/(1+t) along the run; bounded when the max stays below ``bound``
    (default: twice its initial value)."""
    y = traj.column(column) / (1.0 + traj.times)
    bound = 2.0 * y[0] if bound is None else bound
    return {"max_ratio": float(np.max(y)), "bound": float(bound), "bounded": bool(np.max(y) <= bound)}


def interpolation_envelope_check(times, m_s1, s1: float, s2: float) -> dict:
    """m_{s1}(t) <= C (1+t)^(s1/s2) with C fitted once at t = 0."""
    times, m = np.asarray(times, dtype=float), np.asarray(m_s1, dtype=float)
    C = m[0]
    env = C * (1 + times) ** (s1 / s2)
    return {"C": float(C), "holds": bool(np.all(m <= env * (1 + 1e-12))), "max_ratio": float(np.max(m / env))}
