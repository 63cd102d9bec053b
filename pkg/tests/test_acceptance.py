"""Acceptance criteria 1-14; each test records a one-line verdict printed at the end of the run."""

import math
import time

import numpy as np
import pytest
import yaml

from csvortex.algebra import PhysicalParams, VortexNumbers, from_preset, nonexistence_threshold, predicted_energy, predicted_flux
from csvortex.cli import EXIT_NONEXISTENT, main
from csvortex.constraints import F_branch, g_branch, g_branch_slope, remark_bound_holds, solve_c_plus
from csvortex.diagnostics import asymptotic_gaps, flux, flux_from_constraints, max_principle_check, verify
from csvortex.functional import I_lambda, J_plus, J_plus_closed_form, energy, gradient_I, hessian_c, reduced_point
from csvortex.solver import SolveOptions, continuation, find_second_solution, solve, solve_scalar_mu
from csvortex.torus import TorusGrid, VortexSet, build_background
from oracles import c_plus_oracle, random_sample, smooth_field
from test_constraints import sign_changes

A2_Z1 = VortexSet.of((0.25, 0.25, 1))
A2_Z2 = VortexSet.of((0.75, 0.6, 1))


def a2_benchmark(n):
    K, N = from_preset("A2"), VortexNumbers(1, 1)
    bg = build_background(TorusGrid.square(n), A2_Z1, A2_Z2)
    t0 = time.perf_counter()
    st = solve(K, 200.0, N, bg)
    rep = verify(K, 200.0, N, bg, st, PhysicalParams.from_lambda(200.0, 1.0))
    return K, N, bg, st, rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def bench128():
    return a2_benchmark(128)


def test_criterion_01_vacuum(criterion):
    g = TorusGrid.square(64)
    bg = build_background(g, VortexSet.of(), VortexSet.of())
    N = VortexNumbers(0, 0)
    worst_v = worst_I = worst_phi = worst_t = 0.0
    for name in ("A2", "B2", "G2", "A1xA1"):
        K = from_preset(name)
        t0 = time.perf_counter()
        st = solve(K, 100.0, N, bg)
        worst_t = max(worst_t, time.perf_counter() - t0)
        worst_v = max(worst_v, np.max(np.abs(st.v1)), np.max(np.abs(st.v2)))
        worst_I = max(worst_I, abs(energy(K, 100.0, N, bg, st.v1, st.v2)))
        worst_phi = max(worst_phi, *np.abs(flux(K, 100.0, bg, st)))
    # I = 0 at machine precision: c+ is recovered from the quadratics to one ulp
    ok = worst_v <= 1e-10 and worst_I <= 1e-12 and worst_phi <= 1e-12 and worst_t < 1.0
    criterion(1, ok, f"max|v|={worst_v:.1e} max|I|={worst_I:.1e} max|Phi|={worst_phi:.1e} slowest={worst_t:.3f}s")
    assert ok


def test_criterion_02_quantization(criterion, bench128):
    K, N, bg, st, rep, elapsed = bench128
    e_err = abs(rep.energy - 4 * math.pi) / (4 * math.pi)
    f_err = max(abs(p - 2 * math.pi) / (2 * math.pi) for p in rep.fluxes)
    c_err = max(abs(p - q) / abs(q) for p, q in zip(flux_from_constraints(K, 200.0, bg, st), predicted_flux(K, N)))
    ok = st.converged and e_err < 1e-2 and f_err < 1e-2 and c_err < 1e-8 and elapsed < 60
    criterion(2, ok, f"energy err={e_err:.1e} flux err={f_err:.1e} constraint-route err={c_err:.1e} time={elapsed:.2f}s")
    assert ok


def test_criterion_03_threshold(criterion, tmp_path, capsys):
    K, N = from_preset("A2"), VortexNumbers(1, 1)
    lam_star = nonexistence_threshold(K, N, 1.0)
    rel = abs(lam_star - 8 * math.pi) / (8 * math.pi)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({
        "grid": {"n1": 64, "n2": 64}, "coupling": {"preset": "A2"},
        "vortices": {"Z1": [[0.25, 0.25, 1]], "Z2": [[0.75, 0.6, 1]]}, "lambda": 8 * math.pi - 0.1,
    }))
    code = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")])
    cert = (tmp_path / "o" / "certificate.json").exists()
    ok = rel <= 1e-12 and code == EXIT_NONEXISTENT and cert
    criterion(3, ok, f"lambda* rel err={rel:.1e} exit={code} certificate={cert}")
    assert ok


def test_criterion_04_maximum_principle(criterion):
    g = TorusGrid.square(64)
    worst, bad = 1.0, []
    for name in ("A2", "B2", "G2", "A1xA1"):
        for NN in ((1, 0), (1, 1), (2, 1)):
            K, N = from_preset(name), VortexNumbers(*NN)
            Z1 = VortexSet.of(*[(0.2 + 0.25 * i, 0.25, 1) for i in range(NN[0])])
            Z2 = VortexSet.of(*[(0.7, 0.65, 1) for _ in range(NN[1])])
            bg = build_background(g, Z1, Z2)
            st = solve(K, 8 * nonexistence_threshold(K, N, g.area), N, bg)
            rep = max_principle_check(K, N, bg, st, margin=1e-8)
            if not (st.converged and rep.passed):
                bad.append((name, NN))
            for i in range(2):
                if rep.strict[i]:
                    worst = min(worst, 1 - rep.max_eu[i])
    ok = not bad
    criterion(4, ok, f"12 states at 8 lambda*, smallest 1-max e^u = {worst:.1e}, failures={bad}")
    assert ok


def test_criterion_05_reduction_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst, changes = 0.0, set()
    for _ in range(100):
        K, lam, N, bg, w1, w2, m = random_sample(rng)
        cp = solve_c_plus(K, lam, N, m)
        o1, o2 = c_plus_oracle(K, lam, N, m)
        worst = max(worst, abs(cp.c1 - o1), abs(cp.c2 - o2))
        changes.add(sign_changes(K, lam, N, m))
    ok = worst <= 1e-8 and changes == {1}
    criterion(5, ok, f"max |c - oracle| = {worst:.1e}; sign changes seen {sorted(changes)}")
    assert ok


def test_criterion_06_branch_slopes(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        K, lam, N, bg, w1, w2, m = random_sample(rng)
        for which in (1, 2):
            for sign in "+-":
                x = math.exp(rng.uniform(-3, 1))
                h = 1e-5 * x
                fd = (g_branch(which, sign, K, lam, N, m, x + h) - g_branch(which, sign, K, lam, N, m, x - h)) / (2 * h)
                an = g_branch_slope(which, sign, K, lam, N, m, x)
                worst = max(worst, abs(fd - an) / abs(an))
    ok = worst <= 1e-6
    criterion(6, ok, f"max relative slope error {worst:.1e} over 400 evaluations")
    assert ok


def test_criterion_07_gradients(criterion):
    rng = np.random.default_rng(7)
    worst_fd = worst_proj = 0.0
    for _ in range(20):
        K, lam, N, bg, w1, w2, m = random_sample(rng)
        g = bg.grid
        v1, v2 = w1 - 0.1, w2 + 0.05
        d1, d2 = smooth_field(g, rng), smooth_field(g, rng)
        G1, G2 = gradient_I(K, lam, N, bg, v1, v2)
        h = 1e-5
        fd = (I_lambda(K, lam, N, bg, v1 + h * d1, v2 + h * d2).total - I_lambda(K, lam, N, bg, v1 - h * d1, v2 - h * d2).total) / (2 * h)
        an = g.inner(G1, d1) + g.inner(G2, d2)
        worst_fd = max(worst_fd, abs(fd - an) / abs(an))
        pt = reduced_point(K, lam, N, bg, w1, w2)
        F1, F2 = gradient_I(K, lam, N, bg, w1 + pt.cpair.c1, w2 + pt.cpair.c2)
        scale = max(np.max(np.abs(F1)), np.max(np.abs(F2)))
        worst_proj = max(worst_proj, np.max(np.abs(pt.grad1 - (F1 - F1.mean()))) / scale,
                         np.max(np.abs(pt.grad2 - (F2 - F2.mean()))) / scale)
    ok = worst_fd <= 1e-5 and worst_proj <= 1e-8
    criterion(7, ok, f"FD rel err {worst_fd:.1e}; reduced vs projected gradient {worst_proj:.1e}")
    assert ok


def test_criterion_08_closed_form(criterion):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        K, lam, N, bg, w1, w2, m = random_sample(rng)
        cp = solve_c_plus(K, lam, N, m)
        a = J_plus_closed_form(K, lam, N, bg.grid, w1, w2, m, cp).total
        b = I_lambda(K, lam, N, bg, w1 + cp.c1, w2 + cp.c2).total
        worst = max(worst, abs(a - b) / abs(b))
    ok = worst <= 1e-9
    criterion(8, ok, f"max relative difference {worst:.1e} on 50 samples")
    assert ok


def test_criterion_09_average_bounds(criterion):
    rng = np.random.default_rng(9)
    fails = 0
    for _ in range(100):
        K, lam, N, bg, w1, w2, m = random_sample(rng)
        if not all(remark_bound_holds(solve_c_plus(K, lam, N, m), m).values()):
            fails += 1
    ok = fails == 0
    criterion(9, ok, f"{fails} of 100 field-sourced samples violate e^c I <= |Omega| or e^c <= 1")
    assert ok


def test_criterion_10_asymptotics(criterion):
    K, N = from_preset("A2"), VortexNumbers(1, 1)
    bg = build_background(TorusGrid.square(128), A2_Z1, A2_Z2)
    ls = nonexistence_threshold(K, N, 1.0)
    entries = continuation(K, [4 * ls, 16 * ls, 64 * ls], N, bg)
    states = [e.state for e in entries if e.state is not None and e.state.converged]
    table = asymptotic_gaps(bg, states)
    final = max(table.gaps[-1]["L2_1"], table.gaps[-1]["L2_2"]) if states else math.inf
    ok = len(states) == 3 and table.monotone and final < 0.1 * math.sqrt(bg.grid.area)
    gaps = ", ".join(f"{g['L2_1']:.4f}" for g in table.gaps)
    criterion(10, ok, f"L2 gaps {gaps}; strictly decreasing={table.monotone}")
    assert ok


def test_criterion_11_decoupling(criterion):
    K, N = from_preset("A1xA1"), VortexNumbers(1, 1)
    g = TorusGrid.square(128)
    bg = build_background(g, A2_Z1, A2_Z2)
    st = solve(K, 200.0, N, bg, SolveOptions(init="topological"))
    v1, ok1 = solve_scalar_mu(g, bg.E1, 200.0, 1)
    v2, ok2 = solve_scalar_mu(g, bg.E2, 200.0, 1)
    diff = max(np.max(np.abs(st.v1 - v1)), np.max(np.abs(st.v2 - v2)))
    ok = st.converged and ok1 and ok2 and diff <= 1e-8 and st.branch_tag == "newton-only"
    criterion(11, ok, f"sup-norm difference to scalar solves {diff:.1e}")
    assert ok


def test_criterion_12_hessian(criterion):
    rng = np.random.default_rng(12)
    smallest = math.inf
    for _ in range(50):
        K, lam, N, bg, w1, w2, m = random_sample(rng, rho_range=(0.05, 3.0))
        ev = np.linalg.eigvalsh(hessian_c(K, lam, N, m, solve_c_plus(K, lam, N, m)))
        smallest = min(smallest, ev.min() / ev.max())
    ok = smallest > 0
    criterion(12, ok, f"smallest eigenvalue ratio {smallest:.2e} on 50 samples")
    assert ok


def test_criterion_13_second_solution(criterion, bench128):
    K, N = from_preset("A1xA1"), VortexNumbers(1, 1)
    g = TorusGrid.square(128)
    bg = build_background(g, A2_Z1, A2_Z2)
    lam = 4 * nonexistence_threshold(K, N, g.area)
    first = solve(K, lam, N, bg)
    res = find_second_solution(K, lam, N, bg, first)
    dist = math.sqrt(g.norm(res.state.v1 - first.v1) ** 2 + g.norm(res.state.v2 - first.v2) ** 2) if res.found else 0.0
    ok_dec = res.found and res.energy_second > res.energy_first and dist >= 1e-3 and res.state.converged
    Kc, Nc, bgc, stc, _, _ = bench128
    coupled = find_second_solution(Kc, 200.0, Nc, bgc, stc)
    ok_cpl = coupled.found or bool(coupled.attempts)
    ok = ok_dec and ok_cpl
    criterion(13, ok, f"A1xA1: found={res.found} I={res.energy_first:.3f}->{res.energy_second:.3f} dist={dist:.2f}; "
                      f"A2: found={coupled.found} with {len(coupled.attempts)} attempts reported")
    assert ok


def test_criterion_14_grid_convergence(criterion, bench128):
    _, _, _, st1, r1, _ = bench128
    _, _, _, st2, r2, _ = a2_benchmark(256)
    de = abs(r2.energy - r1.energy) / abs(r1.energy)
    dphi = max(abs(a - b) / abs(a) for a, b in zip(r1.fluxes, r2.fluxes))
    ok = st2.converged and de < 2e-3 and dphi < 2e-3
    criterion(14, ok, f"128->256 relative change: energy {de:.1e}, fluxes {dphi:.1e}")
    assert ok
