"""Acceptance gate: one test per shipped guarantee, pinned tolerances.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail line
per criterion.  Expensive solves are shared through session fixtures, so
the file also doubles as an end-to-end smoke of the whole pipeline.
"""

import time

import numpy as np
import pytest

from vudlmp.dlmp import decompose, sensitivity_report
from vudlmp.ipsolver import SolverSettings, solve
from vudlmp.netmodel import PHASES, UnbalanceConfig
from vudlmp.opf import build_problem
from vudlmp.powerflow import solve_pf
from vudlmp.sequence import PhasorSet, f_metric, grad_f, vuf

SOFT_WEIGHTS = (0.0, 1.0, 1.5, 3.0)     # multiples of the substation cost


@pytest.fixture(scope="module")
def timed_simple5(simple5, simple5_pf):
    """Fresh timed solves of the three simple5 modes."""
    out = {}
    for key, kwargs in (
        ("none", {"mode": "none"}),
        ("hard", {"mode": "hard", "vuf_limit_pct": 1.0}),
        ("soft", {"mode": "soft", "penalty_weight": 1.5}),
    ):
        cfg = UnbalanceConfig(buses=simple5.unbalance.buses, **kwargs)
        prob = build_problem(simple5, cfg)
        t0 = time.perf_counter()
        sol = solve(prob, warm=simple5_pf)
        out[key] = (sol, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def timed_eulv(eulv117):
    """Timed mode-none and strongest-penalty soft solves of the 117-bus feeder."""
    warm = solve_pf(eulv117)
    out = {}
    for key, kwargs in (
        ("none", {"mode": "none"}),
        ("soft", {"mode": "soft", "penalty_weight": SOFT_WEIGHTS[-1]}),
    ):
        cfg = UnbalanceConfig(buses=eulv117.unbalance.buses, **kwargs)
        prob = build_problem(eulv117, cfg)
        t0 = time.perf_counter()
        sol = solve(prob, warm=warm)
        out[key] = (sol, time.perf_counter() - t0)
    return out


def recomputed_residuals(sol):
    e = sol.problem.evaluate(sol.x)
    r_d = e.grad_objective + e.jac_eq.T @ sol.y_eq + e.jac_ineq.T @ sol.z_ineq
    return (float(np.max(np.abs(r_d))),
            float(max(np.max(np.abs(e.c_eq)), np.max(e.c_ineq, initial=0.0))),
            float(np.max(np.abs(sol.z_ineq * e.c_ineq))))


def test_criterion_01_metric_equals_fortescue_oracle():
    """f equals the squared Fortescue ratio: 1e4 sets, rel err < 1e-12, < 1 s."""
    rng = np.random.default_rng(101)
    mags = rng.uniform(0.8, 1.2, size=(10_000, 3))
    angs = (np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3])
            + rng.uniform(-0.3, 0.3, size=(10_000, 3)))
    sets = mags * np.exp(1j * angs)
    a = np.exp(2j * np.pi / 3)
    t = np.array([[1, a, a**2], [1, a**2, a]]) / 3.0
    t0 = time.perf_counter()
    vals = np.array([f_metric(PhasorSet.from_array(v)) for v in sets])
    elapsed = time.perf_counter() - t0
    seq = sets @ t.T
    ref = (100.0 * np.abs(seq[:, 1]) / np.abs(seq[:, 0])) ** 2
    assert np.max(np.abs(vals - ref) / ref) < 1e-12
    assert elapsed < 1.0


def test_criterion_02_gradient_closed_form_vs_finite_differences():
    """Closed-form gradient: 1e3 random points rel err < 1e-6; balanced -> 0."""
    rng = np.random.default_rng(102)
    h = 1e-7
    worst = 0.0
    for _ in range(1000):
        v = (rng.uniform(0.8, 1.2, 3)
             * np.exp(1j * (np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3])
                            + rng.uniform(-0.3, 0.3, 3))))
        g = grad_f(PhasorSet.from_array(v)).as_array()
        fd = np.zeros(3, dtype=complex)
        for ph in range(3):
            for unit in (1.0, 1j):
                up = v.copy(); up[ph] += h * unit
                dn = v.copy(); dn[ph] -= h * unit
                d = (f_metric(PhasorSet.from_array(up))
                     - f_metric(PhasorSet.from_array(dn))) / (2 * h)
                fd[ph] += d * unit
        scale = max(np.max(np.abs(fd)), 1e-12)
        worst = max(worst, np.max(np.abs(g - fd)) / scale)
    assert worst < 1e-6
    for _ in range(50):
        ps = PhasorSet.balanced(rng.uniform(0.9, 1.1), rng.uniform(-3, 3))
        assert np.max(np.abs(grad_f(ps).as_array())) < 1e-12


def test_criterion_03_sensitivity_vs_perturb_and_resolve(two_bus, two_bus_pf,
                                                         simple5, simple5_pf):
    """Two-bus gap < 5 %; simple5 100 % sign agreement and gap < 25 %."""
    two = [e for e in sensitivity_report(two_bus, two_bus_pf) if e.defined]
    assert two and max(e.rel_gap for e in two) < 0.05
    five = [e for e in sensitivity_report(simple5, simple5_pf) if e.defined]
    assert five
    assert all(np.sign(e.closed_form) == np.sign(e.finite_difference)
               for e in five)
    assert max(e.rel_gap for e in five) < 0.25


def test_criterion_04_duals_match_perturbed_objectives(simple5, simple5_pf):
    """Mode none: dObjective/dDemand under eps=1e-4 matches duals within 1 %."""
    prob = build_problem(simple5, UnbalanceConfig("none"))
    base = solve(prob, warm=simple5_pf)
    assert base.success
    eps = 1e-4
    samples = (("b1", "a"), ("b2", "b"), ("b3", "c"), ("b4", "a"), ("b5", "c"))

    def active_set(sol, atol=1e-7):
        c = sol.problem.evaluate(sol.x).c_ineq
        return frozenset(np.flatnonzero(c > -atol))

    base_active = active_set(base)
    for kind in ("active", "reactive"):
        checked = 0
        for bus, ph in samples:
            kw = {"dp": eps} if kind == "active" else {"dq": eps}
            bumped = simple5.with_extra_load(bus, ph, **kw)
            sol2 = solve(build_problem(bumped, UnbalanceConfig("none")),
                         warm=simple5_pf)
            if not sol2.success or active_set(sol2) != base_active:
                continue       # active-set change: excluded by construction
            fd = (sol2.objective - base.objective) / eps
            dual = base.phi_p(bus, ph) if kind == "active" else base.phi_q(bus, ph)
            assert fd == pytest.approx(dual, rel=0.01, abs=1e-4), (bus, ph, kind)
            checked += 1
        assert checked >= 3, f"too many active-set changes for {kind} sampling"


def test_criterion_05_decomposition_sums_everywhere(timed_simple5, timed_eulv):
    """Component sum equals the nodal dual within 1e-6 EUR/kWh, all scenarios."""
    for sol, _ in list(timed_simple5.values()) + list(timed_eulv.values()):
        assert sol.success
        rows = decompose(sol)
        assert rows
        assert max(abs(d.residual) for d in rows) < 1e-6


def test_criterion_06_hard_limit_binds_at_one_percent(timed_simple5):
    """Hard 1 %: binds in [0.999, 1.000] %, psi > 0, comp < 1e-6, cost above none."""
    none_sol, _ = timed_simple5["none"]
    hard_sol, _ = timed_simple5["hard"]
    assert none_sol.max_vuf()[1] > 1.0
    assert hard_sol.success
    bus, worst = hard_sol.max_vuf()
    assert 1.0 - 1e-3 <= worst <= 1.0 + 1e-9
    assert hard_sol.psi(bus) > 0
    _, _, comp = recomputed_residuals(hard_sol)
    assert comp < 1e-6
    assert hard_sol.total_gen_cost() > none_sol.total_gen_cost()


def test_criterion_07_soft_penalty_monotonicity(simple5, simple5_pf,
                                                timed_simple5):
    """Weights {0,1,1.5,3}x: VUF non-increasing, cost non-decreasing."""
    none_sol, _ = timed_simple5["none"]
    worsts, costs = [], []
    for w in SOFT_WEIGHTS:
        cfg = UnbalanceConfig("soft", 0.0, w, buses=simple5.unbalance.buses)
        sol = solve(build_problem(simple5, cfg), warm=simple5_pf)
        assert sol.success, f"weight {w}: {sol.message}"
        worsts.append(sol.max_vuf()[1])
        costs.append(sol.total_gen_cost())
        if w == 0.0:
            assert abs(sol.objective - none_sol.objective) < 1e-6
    assert all(a >= b - 1e-9 for a, b in zip(worsts, worsts[1:]))
    assert all(a <= b + 1e-9 for a, b in zip(costs, costs[1:]))


def test_criterion_08_nonbinding_hard_limit_is_neutral(simple5, simple5_pf,
                                                       timed_simple5):
    """Hard 2 % on simple5 reproduces mode none; unbalance component is 0."""
    none_sol, _ = timed_simple5["none"]
    cfg = UnbalanceConfig("hard", 2.0, buses=simple5.unbalance.buses)
    sol = solve(build_problem(simple5, cfg), warm=simple5_pf)
    assert sol.success
    assert abs(sol.objective - none_sol.objective) < 1e-6
    assert max(abs(d.unbalance) for d in decompose(sol)) == 0.0


def test_criterion_09_losses_fall_under_strongest_penalty(timed_simple5,
                                                          timed_eulv,
                                                          simple5, simple5_pf):
    """Strongest soft penalty lowers total losses on both bundled feeders."""
    cfg = UnbalanceConfig("soft", 0.0, SOFT_WEIGHTS[-1],
                          buses=simple5.unbalance.buses)
    strong = solve(build_problem(simple5, cfg), warm=simple5_pf)
    assert strong.success
    assert strong.total_losses_pu() <= timed_simple5["none"][0].total_losses_pu()
    eulv_none, _ = timed_eulv["none"]
    eulv_soft, _ = timed_eulv["soft"]
    assert eulv_soft.total_losses_pu() <= eulv_none.total_losses_pu()


def test_criterion_10_performance_budget(timed_simple5, timed_eulv):
    """simple5 any mode < 5 s; 117-bus soft mode < 5 min."""
    for key, (sol, elapsed) in timed_simple5.items():
        assert sol.success
        assert elapsed < 5.0, f"simple5 {key} took {elapsed:.1f} s"
    soft_sol, soft_time = timed_eulv["soft"]
    assert soft_sol.success
    assert soft_time < 300.0, f"117-bus soft mode took {soft_time:.1f} s"


def test_criterion_11_kkt_residuals_recomputed_independently(timed_simple5,
                                                             timed_eulv):
    """Every reported success satisfies all KKT residuals < 1e-6, re-derived."""
    for sol, _ in list(timed_simple5.values()) + list(timed_eulv.values()):
        assert sol.success
        stat, feas, comp = recomputed_residuals(sol)
        assert stat < 1e-6
        assert feas < 1e-6
        assert comp < 1e-6
