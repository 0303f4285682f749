"""Sharing selection: ILP construction, LP rounding, SAT reduction."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rideflow import info_sharing as IS
from rideflow import lp as L
from rideflow.drivers import CandidatePair, DriverState
from rideflow.lp import LpStatus

from conftest import random_graph


def random_instance(rng, m, nv):
    """Random selection instance on a random metric graph."""
    g = random_graph(rng, nv, extent=5.0)
    cand = rng.integers(0, nv, size=2 * m)
    return IS.InfoSharingInstance(g.cost[cand].copy(), g.pa.copy(), cand.copy())


def sat_bruteforce(n_vars, clauses):
    """Independent satisfiability check by exhausting truth assignments."""
    for bits in itertools.product([False, True], repeat=n_vars):
        ok = True
        for clause in clauses:
            if not any(bits[abs(l) - 1] == (l > 0) for l in clause):
                ok = False
                break
        if ok:
            return True
    return False


def random_cnf(rng, n_vars, n_clauses, k=3):
    clauses = []
    for _ in range(n_clauses):
        size = min(k, n_vars)
        vs = rng.choice(n_vars, size=size, replace=False) + 1
        signs = rng.choice([-1, 1], size=size)
        clauses.append([int(v * s) for v, s in zip(vs, signs)])
    return clauses


class TestInstance:
    def test_objective_matches_manual(self):
        rng = np.random.default_rng(0)
        inst = random_instance(rng, m=3, nv=6)
        share = np.array([True, False, True])
        chosen = [0, 3, 4]
        expected = float(inst.pa @ inst.cand_cost[chosen].min(axis=0))
        assert inst.objective(share) == pytest.approx(expected)

    def test_rejects_odd_candidates(self):
        with pytest.raises(ValueError):
            IS.InfoSharingInstance(np.zeros((3, 4)), np.ones(4) / 4, np.arange(3))

    def test_json_round_trip(self):
        inst = random_instance(np.random.default_rng(1), 2, 5)
        back = IS.InfoSharingInstance.from_json(inst.to_json())
        assert np.allclose(back.cand_cost, inst.cand_cost)
        assert back.driver_ids == inst.driver_ids


class TestBuildInstance:
    def test_from_drivers(self, square_graph, params):
        drivers = [DriverState(i, 2, 30.0) for i in range(3)]
        inst = IS.build_instance(drivers, params, square_graph)
        assert inst.n_pairs == 3
        assert inst.n_demand == 4
        assert inst.driver_ids == [0, 1, 2]

    def test_from_precomputed_pairs(self, square_graph, params):
        drivers = [DriverState(0, 0, 30.0), DriverState(1, 1, 30.0)]
        pairs = [CandidatePair(2, 0), CandidatePair(3, 1)]
        inst = IS.build_instance(drivers, params, square_graph, pairs=pairs)
        assert list(inst.cand_vertex) == [2, 0, 3, 1]
        assert np.allclose(inst.cand_cost[0], square_graph.cost[2])

    def test_rejects_empty(self, square_graph, params):
        with pytest.raises(ValueError):
            IS.build_instance([], params, square_graph)


class TestIlp:
    def test_structure(self):
        inst = random_instance(np.random.default_rng(2), 2, 4)
        program, integers = IS.build_ilp(inst)
        n_y = 4
        n_x = n_y * 4
        assert program.n_vars == n_y + n_x
        assert integers == list(range(n_y + n_x))
        # coverage rows + linking rows + pair rows
        assert len(program.b) == 4 + n_y * 4 + 2

    def test_relaxation_bounds_bruteforce(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            inst = random_instance(rng, m=int(rng.integers(1, 4)), nv=int(rng.integers(2, 6)))
            res = IS.solve_relaxation(inst)
            assert res.status is LpStatus.OPTIMAL
            exact = IS.solve_bruteforce(inst)
            assert res.objective <= exact.objective + 1e-7


class TestRounding:
    def test_rounded_at_least_lp_bound(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            inst = random_instance(rng, m=int(rng.integers(1, 5)), nv=int(rng.integers(2, 7)))
            decision = IS.solve_lp_rounding(inst)
            assert decision.objective >= decision.lp_bound - 1e-7
            assert decision.gap is None or decision.gap >= -1e-9

    def test_chosen_vertices_consistent(self):
        inst = random_instance(np.random.default_rng(5), 3, 5)
        decision = IS.solve_lp_rounding(inst)
        chosen = inst.chosen_candidates(decision.share_full)
        assert np.array_equal(decision.chosen_vertices, inst.cand_vertex[chosen])

    def test_prune_never_increases_objective(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            inst = random_instance(rng, m=int(rng.integers(1, 5)), nv=int(rng.integers(2, 7)))
            raw = IS.round_solution(inst, IS.solve_relaxation(inst))
            pruned = IS.prune_decision(inst, raw)
            assert pruned.objective <= raw.objective + 1e-12
            assert pruned.objective == pytest.approx(inst.objective(pruned.share_full))
            # Pruning only withdraws shares, never adds them.
            assert not np.any(pruned.share_full & ~raw.share_full)

    def test_half_tie_prefers_uninformed(self):
        # Identical candidate rows make the LP exactly indifferent.
        cost = np.array([[1.0, 2.0], [1.0, 2.0]])
        inst = IS.InfoSharingInstance(cost, np.array([0.5, 0.5]), np.array([7, 8]))
        decision = IS.solve_lp_rounding(inst)
        assert not decision.share_full[0]

    def test_rounding_requires_optimal_lp(self):
        inst = random_instance(np.random.default_rng(7), 2, 4)
        bad = L.LpResult(LpStatus.INFEASIBLE, None, None)
        with pytest.raises(ValueError):
            IS.round_solution(inst, bad)

    def test_decision_json(self):
        inst = random_instance(np.random.default_rng(8), 2, 4)
        decision = IS.solve_lp_rounding(inst)
        import json

        payload = json.loads(decision.to_json())
        assert len(payload["share_full"]) == 2
        assert payload["objective"] == pytest.approx(decision.objective)


class TestBruteforce:
    def test_guard(self):
        inst = random_instance(np.random.default_rng(9), 2, 4)
        big = IS.InfoSharingInstance(
            np.ones((2 * (IS.BRUTEFORCE_MAX_PAIRS + 1), 3)),
            np.ones(3) / 3,
            np.arange(2 * (IS.BRUTEFORCE_MAX_PAIRS + 1)),
        )
        IS.solve_bruteforce(inst)
        with pytest.raises(ValueError):
            IS.solve_bruteforce(big)

    def test_optimal_over_enumeration(self):
        rng = np.random.default_rng(10)
        inst = random_instance(rng, 3, 5)
        exact = IS.solve_bruteforce(inst)
        for bits in itertools.product([True, False], repeat=3):
            assert exact.objective <= inst.objective(np.array(bits)) + 1e-12


class TestDimacs:
    def test_parse(self):
        text = "c comment\np cnf 3 2\n1 -2 3 0\n-1 2 0\n"
        n_vars, clauses = IS.parse_dimacs(text)
        assert n_vars == 3
        assert clauses == [[1, -2, 3], [-1, 2]]

    def test_parse_without_problem_line(self):
        n_vars, clauses = IS.parse_dimacs("1 -4 0\n2 3 0\n")
        assert n_vars == 4
        assert len(clauses) == 2

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            IS.parse_dimacs("c nothing here\n")


class TestSatReduction:
    def test_known_satisfiable(self):
        clauses = [[1, 2], [-1, 2], [1, -2]]  # satisfied by x1 = x2 = True
        inst = IS.sat_to_instance(clauses)
        exact = IS.solve_bruteforce(inst)
        assert exact.objective == pytest.approx(1.0)
        bits = IS.assignment_from_decision(exact)
        assert sat_bruteforce(2, clauses)
        for clause in clauses:
            assert any(bits[abs(l) - 1] == (l > 0) for l in clause)

    def test_known_unsatisfiable(self):
        clauses = [[1], [-1]]
        inst = IS.sat_to_instance(clauses)
        exact = IS.solve_bruteforce(inst)
        assert exact.objective > 1.0 + 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=100_000))
    def test_equivalence_random_formulas(self, seed):
        rng = np.random.default_rng(seed)
        n_vars = int(rng.integers(1, 6))
        clauses = random_cnf(rng, n_vars, int(rng.integers(1, 8)))
        inst = IS.sat_to_instance(clauses, n_vars)
        exact = IS.solve_bruteforce(inst)
        satisfiable = sat_bruteforce(n_vars, clauses)
        assert (abs(exact.objective - 1.0) <= 1e-9) == satisfiable
