"""Entropy functionals, discrete entropy productions and the inequality audits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .collision_kernels import KernelAssembly
from .velocity_domain import (
    DensityField,
    VelocityGrid,
    maxwellian_values,
    mix_with_maxwellian,
    moment,
    WeightSpec,
)

__all__ = [
    "PhiFunctional",
    "BOLTZMANN",
    "InequalityReport",
    "relative_entropy",
    "phi_entropy",
    "hp_functional",
    "entropy_production",
    "gamma_functional",
    "l1_distance",
    "csiszar_kullback_audit",
    "interpolation_audit",
    "log_interpolation_audit",
    "entropy_connection_rhs",
    "entropy_connection_audit",
    "production_upper_audit",
    "hp_moment_audit",
    "estimate_lambda0",
    "family_density",
    "random_positive_density",
]


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def _phi_boltzmann(x):
    # x log x - x + 1, with the series sum_k (-e)^k / (k (k-1)) near x = 1
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.reshape(-1)
    out = _xlogx(x) - x + 1.0
    e = x - 1.0
    near = np.abs(e) < 0.05
    if np.any(near):
        en = e[near]
        acc = np.zeros_like(en)
        for k in range(14, 1, -1):
            acc = acc * en + (-1.0) ** k / (k * (k - 1))
        out[near] = acc * en * en
    return out.reshape(shape)


@dataclass(frozen=True)
class PhiFunctional:
    """Convex Phi on [0, inf): ``boltzmann``, ``power`` (x^p), ``quadratic`` or ``l1``."""

    variant: str
    p: float = 2.0

    def __post_init__(self):
        if self.variant not in ("boltzmann", "power", "quadratic", "l1"):
            raise ValueError(f"unknown Phi variant {self.variant!r}")
        if self.variant == "power" and not self.p > 1:
            raise ValueError("power variant needs p > 1")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "boltzmann":
            return _phi_boltzmann(x)
        if self.variant == "power":
            return x**self.p
        if self.variant == "quadratic":
            return (x - 1.0) ** 2
        return np.abs(x - 1.0)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "boltzmann":
            with np.errstate(divide="ignore"):
                return np.log(x)
        if self.variant == "power":
            return self.p * x ** (self.p - 1)
        if self.variant == "quadratic":
            return 2.0 * (x - 1.0)
        return np.sign(x - 1.0)

    def label(self) -> str:
        return f"power_{self.p:g}" if self.variant == "power" else self.variant


BOLTZMANN = PhiFunctional("boltzmann")


@dataclass
class InequalityReport:
    name: str
    lhs: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(len(self.slack) == 0 or np.min(self.slack) >= -self.tolerance)

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slack)) if len(self.slack) else 0.0

    def rows(self):
        for k, (l, r, s) in enumerate(zip(self.lhs, self.rhs, self.slack)):
            yield k, float(l), float(r), float(s), bool(s >= -self.tolerance)


def _values(f):
    return f.values if isinstance(f, DensityField) else np.asarray(f, dtype=float)


def _grid_M(grid: VelocityGrid):
    return maxwellian_values(grid.nodes)


def phi_entropy(f: DensityField, phi: PhiFunctional, M=None) -> float:
    g = f.grid
    M = _grid_M(g) if M is None else M
    return float(g.weights @ (M * phi(f.values / M)))


def relative_entropy(f: DensityField, M=None) -> float:
    """H(f|M) with Phi(x) = x log x - x + 1; zeros of f contribute M_i."""
    return phi_entropy(f, BOLTZMANN, M)


def hp_functional(f: DensityField, p: float, M=None) -> float:
    """H_p(f) = sum q M^(1-p) f^p."""
    g = f.grid
    M = _grid_M(g) if M is None else M
    return float(g.weights @ (M ** (1 - p) * f.values**p))


def l1_distance(f: DensityField, other, k: float = 0.0) -> float:
    g = f.grid
    o = _values(other)
    w = (1.0 + g.speed2) ** (0.5 * k)
    return float(g.weights @ (w * np.abs(f.values - o)))


def entropy_production(asm: KernelAssembly, f, phi: PhiFunctional = BOLTZMANN, chunk: int = 512) -> float:
    """Symmetric pair form 1/2 sum a_ij q_i q_j (h_i - h_j)(Phi'(h_i) - Phi'(h_j)).

    Returns ``inf`` when a zero of f meets a positive neighbour under the
    Boltzmann Phi.
    """
    h = _values(f) / asm.M
    q = asm.grid.weights
    dphi = phi.derivative(h)
    if phi.variant == "boltzmann" and np.any(h == 0):
        zero = h == 0
        if np.any(asm.a[np.ix_(zero, ~zero)] > 0):
            return float("inf")
        dphi = np.where(zero, 0.0, dphi)
    total = 0.0
    n = len(h)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        dh = h[lo:hi, None] - h[None, :]
        dp = dphi[lo:hi, None] - dphi[None, :]
        total += float(np.sum(asm.a[lo:hi] * (q[lo:hi, None] * q[None, :]) * dh * dp))
    return 0.5 * total


def gamma_functional(asm_rate: KernelAssembly, f) -> float:
    """Gamma_{a,q}: Boltzmann production under the exp(a|u|^q) rate assembly."""
    if asm_rate.rate.kind != "exp":
        raise ValueError("gamma functional needs an exponential-rate assembly")
    val = entropy_production(asm_rate, f)
    if not np.isfinite(val):
        raise OverflowError("Gamma functional is not finite for this density")
    return val


# sampling helpers


def random_positive_density(grid: VelocityGrid, rng, floor_B: float | None = None, return_floor: bool = False):
    """Smooth random positive density: perturbed Gaussian blend plus a Gaussian floor.

    With ``return_floor`` also returns (A, B) such that f >= A exp(-B |v|^2).
    """
    v = grid.nodes
    u = rng.normal(scale=0.8, size=grid.d)
    T = rng.uniform(0.5, 2.0)
    base = np.exp(-0.5 * np.sum((v - u) ** 2, axis=1) / T)
    u2 = rng.normal(scale=1.2, size=grid.d)
    base = base + rng.uniform(0, 1) * np.exp(-0.5 * np.sum((v - u2) ** 2, axis=1) / rng.uniform(0.3, 1.5))
    k = rng.normal(size=(3, grid.d))
    ph = rng.uniform(0, 2 * np.pi, size=3)
    wig = 1.0 + 0.3 * np.sum(np.sin(v @ k.T + ph), axis=1) / 3
    vals = base * wig
    B = 0.5 if floor_B is None else floor_B
    vals = vals + 1e-3 * np.exp(-B * grid.speed2)
    mass = grid.weights @ vals
    f = grid.field(vals / mass)
    return (f, (1e-3 / mass, B)) if return_floor else f


# inequality audits


def csiszar_kullback_audit(samples, factor: float = 2.0) -> InequalityReport:
    """||f - M||_1^2 <= factor * H(f|M); factor 2 is the sharp Pinsker constant."""
    lhs, rhs = [], []
    for f in samples:
        M = _grid_M(f.grid)
        lhs.append(l1_distance(f, M) ** 2)
        rhs.append(factor * relative_entropy(f, M))
    lhs, rhs = np.array(lhs), np.array(rhs)
    return InequalityReport("csiszar_kullback", lhs, rhs, rhs - lhs, 1e-12)


def interpolation_audit(asm_g, asm_0, asm_mu, samples, tol: float = 1e-10, lambda0: float | None = None) -> InequalityReport:
    """D_g >= D_0^((mu-g)/mu) D_mu^(g/mu) per sample; slack scaled by D_g."""
    g, mu = asm_g.gamma, asm_mu.gamma
    if not mu > 0 > g:
        raise ValueError("need mu > 0 > gamma")
    lhs, rhs, chain = [], [], []
    for f in samples:
        Dg = entropy_production(asm_g, f)
        D0 = entropy_production(asm_0, f)
        Dm = entropy_production(asm_mu, f)
        if D0 == 0:
            r = 0.0
        else:
            r = D0 ** ((mu - g) / mu) * Dm ** (g / mu)
        lhs.append(Dg)
        rhs.append(r)
        if lambda0 is not None and Dm > 0:
            H = relative_entropy(f)
            chain.append(lambda0 ** (1 - g / mu) * Dm ** (g / mu) * H ** (1 - g / mu))
    lhs, rhs = np.array(lhs), np.array(rhs)
    scale = np.maximum(np.abs(lhs), 1e-300)
    rep = InequalityReport("interpolation", lhs, rhs, (lhs - rhs) / scale, tol)
    if chain:
        rep.extra["chained_rhs"] = np.array(chain)
    return rep


def log_interpolation_audit(asm_g, asm_0, asm_gamma_aq, samples, tol: float = 1e-10) -> InequalityReport:
    """D_g >= (a^(|g|/q)/2) D_0 log(2 Gamma/D_0)^(g/q)."""
    g = asm_g.gamma
    a, q = asm_gamma_aq.rate.a, asm_gamma_aq.rate.q
    lhs, rhs = [], []
    for f in samples:
        Dg = entropy_production(asm_g, f)
        D0 = entropy_production(asm_0, f)
        G = gamma_functional(asm_gamma_aq, f)
        r = 0.0 if D0 == 0 else 0.5 * a ** (abs(g) / q) * D0 * np.log(2 * G / D0) ** (g / q)
        lhs.append(Dg)
        rhs.append(r)
    lhs, rhs = np.array(lhs), np.array(rhs)
    scale = np.maximum(np.abs(lhs), 1e-300)
    return InequalityReport("log_interpolation", lhs, rhs, (lhs - rhs) / scale, tol)


def entropy_connection_rhs(f: DensityField, delta: float) -> float:
    fd = mix_with_maxwellian(f, delta)
    return relative_entropy(fd) / (1 - delta) + (delta / (1 - delta)) * (
        np.log(1 / delta) - (1 - delta) * np.log(1 - delta) / delta
    )


def entropy_connection_audit(samples, delta: float, tol: float = 1e-10) -> InequalityReport:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0,1)")
    lhs = np.array([relative_entropy(f) for f in samples])
    rhs = np.array([entropy_connection_rhs(f, delta) for f in samples])
    return InequalityReport(f"entropy_connection_{delta:g}", lhs, rhs, rhs - lhs, tol)


def _fit_stability(ratios):
    ratios = np.asarray(ratios)
    pos = ratios[ratios > 0]
    C = float(ratios.max())
    spread = float(C / pos.min()) if len(pos) else np.inf
    return C, spread


def production_upper_audit(asm_mu: KernelAssembly, samples, floors=None) -> InequalityReport:
    """D_mu(f) <= C (int (1+|v|)^mu f log+ f + int (1+|v|)^(mu+2) f - sum q (K_mu f) log f).

    C is fitted as the largest sample ratio; its spread across samples is
    reported.  ``floors`` optionally lists (A, B) with f >= A exp(-B|v|^2)
    for the third-term bound.
    """
    mu = asm_mu.gamma
    if not mu > 0:
        raise ValueError("upper audit needs mu > 0")
    g = asm_mu.grid
    q = g.weights
    wt = (1.0 + np.sqrt(g.speed2)) ** mu
    lhs, rhs, t3, t3_bound = [], [], [], []
    for k, f in enumerate(samples):
        vals = f.values
        if np.any(vals <= 0):
            raise ValueError("production audit needs strictly positive samples")
        logf = np.log(vals)
        term1 = float(q @ (wt * vals * np.maximum(logf, 0)))
        term2 = float(q @ (wt * (1.0 + np.sqrt(g.speed2)) ** 2 * vals))
        term3 = float(-(q @ (asm_mu.gain(vals) * logf)))
        lhs.append(entropy_production(asm_mu, f))
        rhs.append(term1 + term2 + term3)
        t3.append(term3)
        if floors is not None:
            A, B = floors[k]
            m_mu = moment(f, WeightSpec("plain", mu))
            m_mu2 = moment(f, WeightSpec("plain", mu + 2))
            t3_bound.append(abs(np.log(A)) * (1 + m_mu) + B * (1 + m_mu2))
    lhs, rhs = np.array(lhs), np.array(rhs)
    ratios = lhs / rhs
    C, spread = _fit_stability(ratios)
    rep = InequalityReport("production_upper", lhs, C * rhs, C * rhs - lhs, 1e-12 * max(1.0, C * rhs.max()))
    rep.extra.update(C=C, spread=spread)
    if floors is not None:
        t3 = np.array(t3)
        t3b = np.array(t3_bound)
        Cp = float(np.max(t3 / t3b))
        rep.extra.update(C_term3=Cp, term3=t3, term3_bound=t3b)
    return rep


def hp_moment_audit(samples, s: float, p: float) -> InequalityReport:
    """m_s(f) <= m_{sp/(p-1)}(M)^((p-1)/p) H_p(f)^(1/p)."""
    lhs, rhs = [], []
    for f in samples:
        M = f.grid.field(_grid_M(f.grid))
        lhs.append(moment(f, WeightSpec("plain", s)))
        rhs.append(moment(M, WeightSpec("plain", s * p / (p - 1))) ** ((p - 1) / p) * hp_functional(f, p) ** (1 / p))
    lhs, rhs = np.array(lhs), np.array(rhs)
    return InequalityReport("hp_moments", lhs, rhs, (rhs - lhs) / rhs, 1e-12)


# lambda_0 estimation over explicit low-dimensional families

FAMILIES = {
    # name: (parameter count, bounds)
    "shifted": (1, [(1e-3, 2.0)]),
    "tempered": (1, [(0.5, 2.0)]),
    "mixture": (4, [(0.0, 1.0), (0.0, 2.0), (0.5, 2.0), (0.0, 2.0)]),
}


def family_density(grid: VelocityGrid, family: str, params) -> DensityField:
    """Members of the lambda_0 search families, renormalized on the grid.

    shifted(|u|): Maxwellian shifted by |u| e_1.
    tempered(T): centred Gaussian with temperature T.
    mixture(w, u1, T, u2): (1-w) M(v - u1 e_1) + w G_T(v + u2 e_1).
    """
    v = grid.nodes
    e1 = np.zeros(grid.d)
    e1[0] = 1.0
    if family == "shifted":
        vals = maxwellian_values(v - params[0] * e1)
    elif family == "tempered":
        T = params[0]
        vals = np.exp(-0.5 * grid.speed2 / T) / (2 * np.pi * T) ** (grid.d / 2)
    elif family == "mixture":
        w, u1, T, u2 = params
        vals = (1 - w) * maxwellian_values(v - u1 * e1) + w * np.exp(
            -0.5 * np.sum((v + u2 * e1) ** 2, axis=1) / T
        ) / (2 * np.pi * T) ** (grid.d / 2)
    else:
        raise ValueError(f"unknown family {family!r}")
    return grid.field(vals / (grid.weights @ vals))


def _clip(x, bounds):
    return np.array([min(max(xi, lo), hi) for xi, (lo, hi) in zip(x, bounds)])


def estimate_lambda0(asm0: KernelAssembly | None, restarts: int = 20, seed: int = 0, h_floor: float = 1e-12,
                     production=None, families=None, grid: VelocityGrid | None = None):
    """Infimum of D(f)/H(f|M) over the search families by Nelder-Mead with restarts.

    ``production`` overrides the production functional (default: Boltzmann
    production of ``asm0``).  Members with H < h_floor are excluded.
    """
    grid = grid if grid is not None else asm0.grid
    prod = production or (lambda f: entropy_production(asm0, f))
    rng = np.random.default_rng(seed)
    best = {"value": np.inf}
    fams = families or list(FAMILIES)

    def ratio(family, x):
        bounds = FAMILIES[family][1]
        xc = _clip(x, bounds)
        f = family_density(grid, family, xc)
        H = relative_entropy(f)
        if H < h_floor:
            return np.inf
        return prod(f) / H

    for family in fams:
        bounds = FAMILIES[family][1]
        for _ in range(restarts):
            x0 = np.array([rng.uniform(lo, hi) for lo, hi in bounds])
            res = optimize.minimize(lambda x: ratio(family, x), x0, method="Nelder-Mead",
                                    options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 200 * len(bounds)})
            val = ratio(family, res.x)
            if val < best["value"]:
                best = {"value": float(val), "family": family, "params": [float(t) for t in _clip(res.x, bounds)]}
    if not np.isfinite(best["value"]):
        raise ValueError("all family members were degenerate")
    return best
