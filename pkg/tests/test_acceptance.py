"""The fifteen acceptance criteria at their stated tolerances.

Each test records one pass/fail line, printed in the terminal summary.
Reference configuration: d=2, N=33, R=6, gamma=-1, constant angular kernel.
"""

import numpy as np
import pytest

from linboltz.collision_kernels import (
    AngularKernel,
    collision_frequency,
    column_sum_audit,
    frequency_sandwich,
    kernel_interpolation_audit,
    lower_bound_constants,
    povzner_bound_fit,
    povzner_integral,
    povzner_monte_carlo,
)
from linboltz.dirichlet import assemble_dirichlet, spectral_gap
from linboltz.entropy_lab import interpolation_audit, log_interpolation_audit, random_positive_density
from linboltz.evolution_solver import (
    SolverConfig,
    duhamel_floor,
    integrate,
    maxwellian_floor_check,
    monotonicity_check,
    production_consistency,
    slow_convergence_probe,
)
from linboltz.rate_analysis import (
    default_window,
    diff_inequality_bound,
    fit_algebraic,
    fit_stretched,
    log_production_ratio,
    rk4_oracle,
)
from linboltz.velocity_domain import annulus, heavy_tail, mixture, shifted_maxwellian, tempered_maxwellian

N, R, GAMMA = 33, 6.0, -1.0
DECAY_GRIDS = [(27, 5.0), (33, 6.0), (39, 7.0)]


def record(log, k, ok, detail):
    log[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {k}: {detail}"


@pytest.fixture(scope="module")
def asm(get_assembly):
    return get_assembly(N, R, GAMMA)


@pytest.fixture(scope="module")
def asm0(get_assembly):
    return get_assembly(N, R, 0.0)


@pytest.fixture(scope="module")
def asm_mu(get_assembly):
    return get_assembly(N, R, 1.0)


@pytest.fixture(scope="module")
def suite_data(asm):
    g = asm.grid
    return {
        "shifted": shifted_maxwellian(g, [1.5, 0.0]),
        "tempered": tempered_maxwellian(g, 1.5),
        "heavy_tail": heavy_tail(g, 8.5),
        "annulus": annulus(g, 1.0, 2.0),
        "mixture": mixture(g, [(0.5, shifted_maxwellian(g, [-1.0, 1.0])), (0.5, tempered_maxwellian(g, 0.6))]),
    }


@pytest.fixture(scope="module")
def suite_runs(asm, suite_data):
    cfg = SolverConfig(t_end=20.0, scheme="RK4")
    return {name: integrate(asm, f0, cfg) for name, f0 in suite_data.items()}


@pytest.fixture(scope="module")
def floor_run(get_assembly):
    a = get_assembly(N, R, GAMMA, "grad", 1.0)
    lam1 = lower_bound_constants(2, GAMMA, 1.0)[0]
    traj = integrate(a, annulus(a.grid, 1.0, 2.0), SolverConfig(t_end=5.0, lambda1=lam1))
    return a, lam1, traj


@pytest.fixture(scope="module")
def decay_runs(get_assembly):
    out = {}
    for n, r in DECAY_GRIDS:
        a = get_assembly(n, r, GAMMA)
        out[r] = integrate(a, heavy_tail(a.grid, 8.5), SolverConfig(t_end=15.0, snapshot_stride=5))
    return out


@pytest.fixture(scope="module")
def stretched_run(asm):
    return integrate(asm, tempered_maxwellian(asm.grid, 1.5), SolverConfig(t_end=40.0, snapshot_stride=2))


def test_c01_detailed_balance(asm, acceptance_log):
    db = asm.meta["detailed_balance"]
    ok = db["max_rel_asymmetry"] <= 1e-6 and db["gh_order"] == 32
    record(acceptance_log, 1, ok, f"max rel asymmetry {db['max_rel_asymmetry']:.2e} <= 1e-6 on {db['pairs']} pairs")


def test_c02_generator_cross_validation(asm, asm0, acceptance_log):
    col = column_sum_audit(asm)
    s0 = float(np.max(np.abs(asm0.sigma - 1.0)))
    centre = int(np.argmin(asm.grid.speed2))
    anchor = abs(asm.sigma[centre] - np.sqrt(np.pi / 2))
    quad_anchor = abs(float(collision_frequency(-1.0, 2, np.zeros(2))) - np.sqrt(np.pi / 2))
    ok = col["max_rel"] <= 0.02 and s0 <= 1e-3 and anchor <= 1e-3 and quad_anchor <= 1e-3
    record(acceptance_log, 2, ok, f"row-sum vs quadrature {col['max_rel']:.2e} <= 2e-2; |Sigma_0-1| {s0:.1e}; "
                                  f"|Sigma_-1(0)-sqrt(pi/2)| {anchor:.1e} (quadrature {quad_anchor:.1e})")


def test_c03_conservation_h_theorem(suite_runs, acceptance_log):
    drift, rise = 0.0, -np.inf
    for traj in suite_runs.values():
        m = traj.column("mass")
        drift = max(drift, float(np.max(np.abs(m - m[0]))), traj.meta["mass_drift"])
        rise = max(rise, float(np.max(np.diff(traj.column("H")))))
    ok = len(suite_runs) == 5 and drift <= 1e-8 and rise <= 1e-12
    record(acceptance_log, 3, ok, f"5 data, t_end=20: mass drift {drift:.1e} <= 1e-8; max H step increase {rise:.1e}")


def test_c04_production_derivative(asm, suite_data, acceptance_log):
    worst = 0.0
    for name in ("shifted", "heavy_tail"):
        rep = production_consistency(asm, suite_data[name], [1.0, 2.0, 5.0], refine=10, tol=0.01)
        worst = max(worst, max(r[3] for r in rep["rows"]))
    record(acceptance_log, 4, worst <= 0.01, f"max |-dH/dt - D|/D at t=1,2,5: {worst:.2e} <= 1e-2")


def test_c05_interpolation_inequalities(asm, asm0, asm_mu, get_assembly, acceptance_log):
    aq = get_assembly(N, R, 0.0, rate_kind="exp", a=1 / 32, q=2.0)
    rng = np.random.default_rng(0)
    samples = [random_positive_density(asm.grid, rng) for _ in range(100)]
    r1 = interpolation_audit(asm, asm0, asm_mu, samples, tol=1e-10)
    r2 = log_interpolation_audit(asm, asm0, aq, samples, tol=1e-10)
    ok = r1.passed and r2.passed and len(r1.slack) == 100
    record(acceptance_log, 5, ok, f"100 samples: min rel slack power {r1.min_slack:.2e}, log-form {r2.min_slack:.2e} "
                                  f">= -1e-10")


def test_c06_pointwise_kernel_interpolation(asm, asm0, asm_mu, acceptance_log):
    ki = kernel_interpolation_audit(asm, asm0, asm_mu)
    record(acceptance_log, 6, ki["min_rel_slack"] >= -1e-8,
           f"{ki['pairs']} off-diagonal pairs: min rel slack {ki['min_rel_slack']:.2e} >= -1e-8")


def test_c07_povzner(acceptance_log):
    b = AngularKernel("constant", 2)
    rng = np.random.default_rng(7)
    vs = rng.normal(scale=2.0, size=(50, 2))
    vss = rng.normal(scale=2.0, size=(50, 2))
    i2 = max(abs(povzner_integral(v, w, b, 2.0).value) for v in vs for w in vss)
    z = []
    for v, w in [(np.array([1.0, 0.5]), np.array([-2.0, 1.0])), (np.array([3.0, 0.0]), np.array([0.2, -0.4]))]:
        quad = povzner_integral(v, w, b, 4.0, order=256).value
        mean, se = povzner_monte_carlo(v, w, b, 4.0, n=1_000_000, seed=1)
        z.append(abs(quad - mean) / se)
    fit = povzner_bound_fit(vs[:12], vss[:12], b, 4.0)
    ok = i2 <= 1e-12 and max(z) <= 3.0 and fit["pass"]
    record(acceptance_log, 7, ok, f"max|I_2| {i2:.1e} <= 1e-12; I_4 quad vs MC {max(z):.2f} SE <= 3; "
                                  f"bound C1={fit['C1']:.3g}, C2={fit['C2']:.3g}")


def test_c08_duhamel_floor(asm, suite_data, suite_runs, acceptance_log):
    worst = np.inf
    for name in ("heavy_tail", "annulus"):
        traj = suite_runs[name]
        for t in (1.0, 5.0, 10.0):
            k = int(np.argmin(np.abs(traj.times - t)))
            gap = traj.fields[k].values - duhamel_floor(asm, suite_data[name], traj.times[k])
            worst = min(worst, float(gap.min()))
    record(acceptance_log, 8, worst >= -1e-10, f"min f - exp(-Sigma t) f0 at t=1,5,10: {worst:.2e} >= -1e-10")


def test_c09_maxwellian_floor(floor_run, acceptance_log):
    a, lam1, traj = floor_run
    rep = maxwellian_floor_check(traj, 0.5, lam1, sigma_max=a.sigma_max)
    col = traj.column("floor_c")[traj.times >= 0.5]
    ok = lam1 == 15 / 4 and rep["pass"] and np.all(col > 0)
    record(acceptance_log, 9, ok, f"lambda1={lam1}; c_min over t>=0.5: {rep['c_min']:.3e} > 0")


def test_c10_algebraic_decay(decay_runs, acceptance_log):
    sig, ok = [], True
    for r, traj in decay_runs.items():
        fit = fit_algebraic(traj, (1.0, 15.0), sigma_target=1.0)
        sig.append(fit.params["sigma"])
        ok &= fit.params["sigma"] >= 1.0 and fit.extra["one_sided"]["holds"]
    ok &= all(b <= a for a, b in zip(sig, sig[1:]))
    record(acceptance_log, 10, ok, "sigma_hat on [1,15] for R=5,6,7: " + ", ".join(f"{s:.3f}" for s in sig)
           + " (>= 1, non-increasing, H <= C(1+t)^-1)")


def test_c11_stretched_decay(stretched_run, acceptance_log):
    win = default_window(stretched_run)
    fit = fit_stretched(stretched_run, win, GAMMA)
    ratio = log_production_ratio(stretched_run, fit.window, GAMMA)
    e = fit.params["e"]
    ok = 0.5 <= e <= 0.85 and ratio["pass"]
    record(acceptance_log, 11, ok, f"window [{fit.window[0]:g},{fit.window[1]:g}]: e_hat {e:.3f} in [0.5,0.85] "
                                   f"(target 2/3); min production ratio {ratio['min']:.3g} > 0")


def test_c12_spectral_gap_dichotomy(get_assembly, get_grid, acceptance_log):
    cut = {r: spectral_gap(get_assembly(n, r, GAMMA)).gap for n, r in DECAY_GRIDS}
    drop = cut[5.0] / cut[7.0]
    b = AngularKernel("noncutoff", 2, nu=1.5)
    nc = {r: spectral_gap(assemble_dirichlet(get_grid(2, n, r), GAMMA, b, theta_min=0.1)).gap
          for n, r in [(21, 5.0), (25, 6.0), (29, 7.0)]}
    half = spectral_gap(assemble_dirichlet(get_grid(2, 21, 5.0), GAMMA, b, theta_min=0.05)).gap
    variation = max(nc.values()) / min(nc.values()) - 1
    th = abs(half - nc[5.0]) / nc[5.0]
    ok = drop >= 1.5 and min(nc.values()) > 0 and variation < 0.2 and th < 0.1
    record(acceptance_log, 12, ok, f"cut-off gap R=5->7 drops {drop:.3f}x (need >= 1.5); non-cut-off gaps "
           + ", ".join(f"{v:.4f}" for v in nc.values()) + f" vary {variation:.1%} (< 20%); theta_min halving {th:.1%} (< 10%)")


def test_c13_differential_inequality(acceptance_log):
    rng = np.random.default_rng(13)
    worst = np.inf
    times = np.linspace(0.0, 30.0, 61)
    for _ in range(20):
        alpha, beta, C = rng.uniform(0.05, 0.9), rng.uniform(0.2, 2.0), rng.uniform(0.2, 3.0)
        u0, amp, dec = rng.uniform(0.1, 3.0), rng.uniform(0.0, 0.5), rng.uniform(0.0, 1.0)
        expo = (beta + 1 - alpha) / beta + dec
        xi = lambda t, amp=amp, expo=expo: amp * (1 + t) ** (-expo)
        env = diff_inequality_bound(alpha, beta, C, xi, u0=u0)
        u = rk4_oracle(alpha, beta, C, xi, u0, times, dt=1e-2)
        worst = min(worst, float(np.min((env(times) - u) / env(times))))
    t = np.linspace(0.0, 40.0, 401)
    pl = fit_algebraic((t, 3.0 * (1 + t) ** -1.7), (1.0, 30.0))
    st = fit_stretched((t, 2.0 * np.exp(-0.8 * t ** (2 / 3))), (1.0, 30.0), GAMMA)
    err = max(abs(pl.params["sigma"] - 1.7), abs(st.params["e"] - 2 / 3))
    ok = worst >= -1e-8 and err <= 1e-8
    record(acceptance_log, 13, ok, f"20 instances: min rel slack {worst:.2e} >= -1e-8; exponent recovery error {err:.1e}")


def test_c14_slow_convergence(asm, acceptance_log):
    rep = slow_convergence_probe(asm, tail_exponent=0.5, k=0.0, times=range(1, 11), max_tail_loss=0.5)
    c_gamma = frequency_sandwich(asm)["C2"]
    ok = rep["pass"] and rep["C1"] == float(np.exp(-c_gamma))
    worst = min(r[3] for r in rep["rows"])
    record(acceptance_log, 14, ok, f"t=1..10: min (lhs - rhs) {worst:.3e} >= 0 with C1=exp(-c_gamma)={rep['C1']:.4f}; "
                                   f"tail mass beyond R {rep['tail_loss']:.1%}")


def test_c15_hp_phi_monotone(suite_runs, floor_run, decay_runs, stretched_run, acceptance_log):
    runs = list(suite_runs.values()) + [floor_run[2]] + list(decay_runs.values()) + [stretched_run]
    fails, worst = [], -np.inf
    for traj in runs:
        rep = monotonicity_check(traj, ps=(1.5, 2.0, 3.0), tol=1e-12)
        worst = max(worst, max(v["max_increase"] for v in rep["series"].values()))
        fails += [k for k, v in rep["series"].items() if not v["pass"]]
    record(acceptance_log, 15, not fails, f"{len(runs)} trajectories, H_p (p=1.5,2,3) and 4 Phi variants: "
                                          f"max step increase {worst:.1e} (tol 1e-12 relative)" + (f"; failing {sorted(set(fails))}" if fails else ""))
