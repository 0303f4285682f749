"""End-to-end acceptance checks.

Each test exercises one release criterion at its stated tolerance and prints
a single PASS/FAIL line (run pytest with ``-s`` to see them inline).
"""

import time

import numpy as np

from rideflow import incentives as inc
from rideflow import info_sharing as IS
from rideflow import sim
from rideflow.drivers import DriverState, EconomicParams, Info, ProfitModel
from rideflow.drivers import pickup_probability
from rideflow.sim import SimConfig

from conftest import make_city, random_graph
from test_drivers import naive_expected_profit
from test_info_sharing import random_cnf, random_instance, sat_bruteforce


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_criterion_1_sat_reduction_equivalence():
    """Optimum 1 on the reduction instance exactly when the CNF is satisfiable."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(200):
        n_vars = int(rng.integers(1, 11))
        clauses = random_cnf(rng, n_vars, int(rng.integers(1, 16)))
        inst = IS.sat_to_instance(clauses, n_vars)
        optimum = IS.solve_bruteforce(inst).objective
        satisfiable = sat_bruteforce(n_vars, clauses)
        if (abs(optimum - 1.0) <= 1e-12) != satisfiable:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60.0
    report(
        "criterion 1 (SAT reduction equivalence)",
        ok,
        f"200 formulas, {mismatches} mismatches, {elapsed:.1f}s",
    )


def test_criterion_2_lp_rounding_quality():
    """Rounded selection close to the LP bound and the exact optimum."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    gaps, ratios = [], []
    bound_violations = 0
    for _ in range(500):
        inst = random_instance(rng, m=int(rng.integers(1, 9)), nv=int(rng.integers(2, 13)))
        decision = IS.solve_lp_rounding(inst)
        if decision.objective < decision.lp_bound - 1e-7:
            bound_violations += 1
        gaps.append((decision.objective - decision.lp_bound) / max(decision.lp_bound, 1e-12))
        exact = IS.solve_bruteforce(inst)
        ratios.append(decision.objective / max(exact.objective, 1e-12))
    elapsed = time.perf_counter() - t0
    median_gap = float(np.median(gaps))
    median_ratio = float(np.median(ratios))
    ok = (
        bound_violations == 0
        and median_gap <= 0.05
        and median_ratio <= 1.02
        and elapsed < 300.0
    )
    report(
        "criterion 2 (LP rounding quality)",
        ok,
        f"500 instances, median gap {median_gap:.4f}, median ratio {median_ratio:.4f}, "
        f"{bound_violations} bound violations, {elapsed:.1f}s",
    )


def test_criterion_3_provider_cost_identity():
    """Reduced assignment cost times the drive cost equals the provider cost."""
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 7))
        m = int(rng.integers(1, 5))
        g = random_graph(np.random.default_rng(int(rng.integers(0, 10_000))), n, extent=4.0)
        params = EconomicParams()
        budget = float(rng.integers(10, 50))
        drivers = [DriverState(i, int(rng.integers(0, n)), budget) for i in range(m)]
        model = ProfitModel(g, params, m_max=m)
        tables = {d.id: model.none_table(int(budget)) for d in drivers}
        beta = float(rng.random() * 8 + 0.1)
        inst = inc.build_mfl(drivers, tables, beta, params, g)
        for _ in range(100):
            assignment = rng.integers(0, inst.n_candidates, size=m)
            h = inc.provider_cost(drivers, inst.candidates[assignment], tables, beta, params, g)
            reduced = params.drive_cost_per_min * inst.cost(assignment)
            worst = max(worst, abs(h - reduced) / max(1.0, abs(h)))
    ok = worst <= 1e-6
    report(
        "criterion 3 (provider cost identity)",
        ok,
        f"10000 configurations, worst relative deviation {worst:.2e}",
    )


def test_criterion_4_local_search_ratio():
    """Local search within the approximation factor of exhaustive search."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    ratios = []
    for _ in range(200):
        n = 6
        m = int(rng.integers(1, 4))
        n_cand = int(rng.integers(2, 7))
        g = random_graph(np.random.default_rng(int(rng.integers(0, 10_000))), n, extent=4.0)
        params = EconomicParams()
        budget = float(rng.integers(10, 40))
        candidates = np.sort(rng.choice(n, size=n_cand, replace=False))
        drivers = [
            DriverState(i, int(candidates[rng.integers(0, n_cand)]), budget) for i in range(m)
        ]
        model = ProfitModel(g, params, m_max=m)
        tables = {d.id: model.none_table(int(budget)) for d in drivers}
        beta = float(rng.random() * 4 + 0.2)
        inst = inc.build_mfl(drivers, tables, beta, params, g, candidates=candidates)
        local = inc.solve_local_search(inst).reduction_cost
        exact = inc.solve_bruteforce(inst).reduction_cost
        ratios.append(local / max(exact, 1e-12))
    elapsed = time.perf_counter() - t0
    worst = float(np.max(ratios))
    ok = worst <= 3.0 and elapsed < 300.0
    report(
        "criterion 4 (local search approximation ratio)",
        ok,
        f"200 instances, max ratio {worst:.4f}, median {float(np.median(ratios)):.4f}, "
        f"{elapsed:.1f}s",
    )


def test_criterion_5_driver_model_properties():
    """Zero-budget profit, budget monotonicity, pickup-odds behavior, memo check."""
    rng = np.random.default_rng(505)
    params = EconomicParams()
    ok = True
    notes = []

    # Pickup odds in [0, 1] and non-increasing in the closer-driver count.
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        g = random_graph(np.random.default_rng(int(rng.integers(0, 100_000))), n, extent=5.0)
        s = rng.integers(0, 5, size=n)
        v = int(rng.integers(0, n))
        p = pickup_probability(s, g.rates, v)
        bumped = s.copy()
        bumped[v] += 1
        p_bumped = pickup_probability(bumped, g.rates, v)
        if not (0.0 <= p <= 1.0 and p_bumped <= p + 1e-12):
            violations += 1
    if violations:
        ok = False
    notes.append(f"{violations} pickup-odds violations in 1000 checks")

    # Zero budget worth zero, and value monotone in budget.
    mono_bad = 0
    for seed in range(20):
        g = random_graph(np.random.default_rng(seed), 4, extent=3.0)
        model = ProfitModel(g, params, m_max=3)
        table = model.none_table(8)
        if np.any(table.values[:, 0] != 0.0):
            mono_bad += 1
        if np.any(np.diff(table.values, axis=1) < -1e-12):
            mono_bad += 1
    if mono_bad:
        ok = False
    notes.append(f"{mono_bad} budget-profile violations in 20 tables")

    # Memoized recursion equals the naive definition on small instances.
    from rideflow.drivers import closer_count_matrix

    worst = 0.0
    for seed in range(3):
        inner = np.random.default_rng(seed)
        g = random_graph(inner, 4, extent=3.0)
        locs = inner.integers(0, 4, size=3)
        s = closer_count_matrix(0, np.arange(3), locs, g)
        model = ProfitModel(g, params, m_max=3)
        table = model.table_from_counts(s, 6, Info.FULL, driver_id=0)
        for u in range(4):
            for b in range(7):
                worst = max(
                    worst, abs(table.values[u, b] - naive_expected_profit(u, b, s, g, params))
                )
    if worst > 1e-9:
        ok = False
    notes.append(f"memo vs naive worst diff {worst:.2e}")

    report("criterion 5 (driver model properties)", ok, "; ".join(notes))


def test_criterion_6_objective_consistency():
    """Incrementally tracked response time equals from-scratch at every step."""
    city = make_city(12, seed=0, extent=3000.0)
    worst = 0.0
    for control in ("none", "info", "pay"):
        cfg = SimConfig(
            num_drivers=6,
            scenario="jammed",
            jam_k=4,
            num_requests=100,
            control=control,
            budget_rides=25.0,
            params=EconomicParams(budget_quantum=4.0),
            seed=sim.rep_seed(606, 0),
            consistency_check=True,
        )
        result = sim.run_episode(cfg, city)
        worst = max(worst, result.consistency_max_diff)
    ok = worst <= 1e-12
    report(
        "criterion 6 (incremental objective consistency)",
        ok,
        f"three 100-request episodes, max deviation {worst:.2e}",
    )


def test_criterion_8_poisson_generator():
    """Inter-arrival mean and pickup frequencies match the declared rates."""
    from conftest import make_vertices
    from rideflow.graph import build_complete_metric

    rng = np.random.default_rng(808)
    points = rng.random((6, 2)) * 2000.0
    rates = np.array([0.030, 0.026, 0.022, 0.018, 0.014, 0.012])
    g = build_complete_metric(make_vertices(points, rates))
    requests = sim.generate_requests(g, 10_000, np.random.default_rng(909))
    times = np.array([r.time for r in requests])
    gaps = np.diff(np.concatenate([[0.0], times]))
    total = rates.sum()
    gap_err = abs(gaps.mean() - 1.0 / total) * total
    counts = np.bincount([r.pickup for r in requests], minlength=6)
    freq_err = float(np.max(np.abs(counts / 10_000 - rates / total) / (rates / total)))
    ok = gap_err <= 0.05 and freq_err <= 0.05
    report(
        "criterion 8 (Poisson request generator)",
        ok,
        f"inter-arrival error {gap_err:.3f}, max pickup frequency error {freq_err:.3f}",
    )


def test_criterion_7_directional_control_study():
    """Sharing and paying both beat no control on jammed fleets, pay scales with beta."""
    t0 = time.perf_counter()
    city = make_city(40)
    params = EconomicParams(budget_quantum=4.0)
    base = dict(
        num_drivers=20,
        scenario="jammed",
        jam_k=5,
        num_requests=100,
        budget_rides=30.0,
        params=params,
    )
    configs = [
        SimConfig(control="none", **base),
        SimConfig(control="info", **base),
        SimConfig(control="pay", beta=1.0, **base),
        SimConfig(control="pay", beta=10.0, **base),
    ]
    rows, _ = sim.run_batch(configs, city, repetitions=100, master_seed=2024)
    base_d = {r["rep"]: r["mean_d"] for r in rows if r["control"] == "none"}

    def improvements(control, beta=None):
        sel = [
            r for r in rows
            if r["control"] == control and (beta is None or r["beta"] == beta)
        ]
        return np.array([(base_d[r["rep"]] - r["mean_d"]) / base_d[r["rep"]] for r in sel])

    info = improvements("info")
    pay1 = improvements("pay", 1.0)
    pay10 = improvements("pay", 10.0)
    boot_rng = np.random.default_rng(7070)
    boot = boot_rng.choice(info, size=(10_000, len(info)), replace=True).mean(axis=1)
    ci_low = float(np.percentile(boot, 2.5))

    total_pay1 = float(np.mean([r["total_pay"] for r in rows if r["control"] == "pay" and r["beta"] == 1.0]))
    total_pay10 = float(np.mean([r["total_pay"] for r in rows if r["control"] == "pay" and r["beta"] == 10.0]))
    elapsed = time.perf_counter() - t0

    ok_info = ci_low > 0.0
    ok_pay = pay10.mean() > pay1.mean() >= 0.0
    ok_beta = total_pay10 > total_pay1
    ok = ok_info and ok_pay and ok_beta and elapsed < 1800.0
    report(
        "criterion 7 (directional control study)",
        ok,
        f"100 matched seeds: sharing mean improvement {info.mean():.3f} "
        f"(95% bootstrap lower bound {ci_low:.3f}), "
        f"pay improvements beta=1 {pay1.mean():.3f} / beta=10 {pay10.mean():.3f}, "
        f"mean payment {total_pay1:.2f} -> {total_pay10:.2f}, {elapsed:.0f}s",
    )
