import dataclasses
import json
from types import SimpleNamespace

import numpy as np
import pytest

from timeline_tamp import domain, oracle, planner
from timeline_tamp.model import CostVector, Relation, SynergyMatrix, Worker
from timeline_tamp.planner import Planner, dominates


def behavior_svs(problem):
    return {sv.id for sv in problem.state_variables if sv.kind == "behavior"}


def check_validity(problem, sol):
    # Unique assignment: every task appears on exactly one behavior timeline, exactly once.
    seen = []
    for sv, ids in sol.timelines.items():
        if sv in behavior_svs(problem):
            seen.extend(sol.token(i).value for i in ids)
    assert sorted(seen) == sorted(t.id for t in problem.tasks)
    for t, w in sol.assignment.items():
        assert w in problem.task(t).allowed_workers
    # Per-window exclusivity: tokens of one timeline never run at the same time.
    for sv, ids in sol.timelines.items():
        if sv not in behavior_svs(problem):
            continue
        spans = sorted((sol.token(i).start, sol.token(i).end) for i in ids)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 <= s2 + 1e-9


def test_dominance_examples():
    assert dominates(CostVector(5, 1), CostVector(6, 2))
    assert not dominates(CostVector(5, 2), CostVector(6, 2))
    assert not dominates(CostVector(5, 1), CostVector(5, 1))


def fake(seq, fd, fs):
    return SimpleNamespace(seq=seq, cost=CostVector(fd, fs))


@pytest.mark.parametrize("costs,expected", [
    ([(5, 1), (6, 2)], (5, 1)),
    ([(5, 3), (7, 1)], (7, 1)),
    ([(5, 1), (7, 1)], (5, 1)),
])
def test_choose_plan_examples(costs, expected):
    fringe = [fake(i, *c) for i, c in enumerate(costs)]
    best = planner.choose_plan(fringe)
    assert best.cost.as_tuple() == expected
    assert best not in fringe and len(fringe) == len(costs) - 1


def test_choose_plan_tie_prefers_latest():
    fringe = [fake(0, 5, 1), fake(1, 5, 1)]
    assert planner.choose_plan(fringe).seq == 1


def test_choose_plan_empty():
    with pytest.raises(planner.EmptyFringe):
        planner.choose_plan([])


def test_root_flaws(mosaic4):
    p = Planner(mosaic4)
    root = p.initialize()
    flaws = p.detect_flaws(root)
    assert [f.kind for f in flaws] == ["planning"] * 4
    assert all(f.state_variable == domain.PRODUCTION_SV for f in flaws)
    reqs = {mosaic4.rules[f.rule].requirements[f.requirement].value for f in flaws}
    assert reqs == {t.id for t in mosaic4.tasks}


def rescan(p, plan):
    """Independent flaw scan from the propagated network."""
    stn = p.stn(plan).copy()
    assert stn.propagate().ok
    d = stn.dist
    flaws = set()
    by_value = {}
    for t in plan.tokens:
        by_value.setdefault(t.value, []).append(t)
    for t in plan.tokens:
        for ri, rule in enumerate(p.problem.rules):
            if rule.trigger != (t.state_variable, t.value):
                continue
            ts, te = stn.token_points[t.id]
            for qi, req in enumerate(rule.requirements):
                ok = False
                for u in by_value.get(req.value, []):
                    if req.state_variable is not None and u.state_variable != req.state_variable:
                        continue
                    us, ue = stn.token_points[u.id]
                    if req.relation is Relation.CONTAINS:
                        ok |= d[us, ts] <= 1e-9 and d[te, ue] <= 1e-9
                    elif req.relation is Relation.BEFORE:
                        ok |= d[ts, ue] <= 1e-9
                    else:
                        ok |= abs(d[ts, ue]) <= 1e-9 and abs(d[ue, ts]) <= 1e-9
                if not ok:
                    flaws.add(("planning", t.id, ri, qi))
    for sv, ids in plan.timelines.items():
        if sv not in behavior_svs(p.problem):
            continue
        for a in ids:
            for b in ids:
                if a < b:
                    a_s, a_e = stn.token_points[a]
                    b_s, b_e = stn.token_points[b]
                    if d[b_s, a_e] > 1e-9 and d[a_s, b_e] > 1e-9:
                        flaws.add(("scheduling", a, b))
    return flaws


def as_keys(flaws):
    return {("planning", f.token, f.rule, f.requirement) if f.kind == "planning" else ("scheduling", f.token, f.other)
            for f in flaws}


@pytest.mark.parametrize("append", [True, False])
def test_flaws_match_rescan(mosaic4, append):
    p = Planner(mosaic4, search="exact", append=append)
    trace = []
    sol = p.search_plan(trace=trace)
    assert len(trace) > 3
    for plan in trace + [sol]:
        assert as_keys(p.detect_flaws(plan)) == rescan(p, plan)
    assert p.detect_flaws(sol) == []


def test_flaw_ordering(mosaic4):
    p = Planner(mosaic4, search="greedy", append=False)
    trace = []
    p.search_plan(trace=trace)
    kinds = set()
    for plan in trace:
        flaws = p.detect_flaws(plan)
        keys = [(f.rank, 0 if f.kind == "planning" else 1, f.token, f.index) for f in flaws]
        assert keys == sorted(keys)
        kinds |= {(f.rank, f.kind) for f in flaws}
        assert p.choose_flaws(flaws) == flaws[:1]
    # production flaws outrank behavior ones
    assert (0, "planning") in kinds and (1, "scheduling") in kinds


def test_refine_children_per_capability(mosaic4):
    p = Planner(mosaic4, search="greedy")
    root = p.initialize()
    by_task = {mosaic4.rules[f.rule].requirements[f.requirement].value: f for f in p.detect_flaws(root)}
    assert len(p.refine(root, by_task["PickPlace_A1"])) == 2
    assert len(p.refine(root, by_task["PickPlace_A2"])) == 1
    assert len(p.refine(root, by_task["PickPlace_B1"])) == 1
    (child,) = p.refine(root, by_task["PickPlace_A2"])
    assert child.assignment == {"PickPlace_A2": Worker.ROBOT}


def one_sided_problem():
    """Robot tasks A2 and A3; A2's row must follow a long human row, the horizon leaves no slack."""
    spec = domain.MosaicSpec(3, 1, {"A1": "white", "A2": "orange", "A3": "orange"}, {"white": 1, "orange": 2})
    prob = domain.generate_mosaic(spec, seed=0, row_precedence=True)
    rules = list(prob.rules)
    rules[2] = dataclasses.replace(rules[2], requirements=tuple(
        q for q in rules[2].requirements if q.relation is not Relation.BEFORE))
    d = {t.id: t.durations for t in prob.tasks}
    horizon = d["PickPlace_A1"][Worker.HUMAN].max + d["PickPlace_A2"][Worker.ROBOT].max \
        + d["PickPlace_A3"][Worker.ROBOT].max - 0.5
    return dataclasses.replace(prob, rules=tuple(rules), horizon=horizon)


def test_scheduling_flaw_single_feasible_order():
    prob = one_sided_problem()
    p = Planner(prob, search="greedy", append=False)
    trace = []
    sol = p.search_plan(trace=trace)
    found = False
    for plan in trace:
        for f in p.detect_flaws(plan):
            if f.kind == "scheduling":
                children = p.refine(plan, f)
                assert len(children) == 1
                found = True
    assert found
    s = p.solution(sol)
    a2, a3 = s.task_tokens()["PickPlace_A2"], s.task_tokens()["PickPlace_A3"]
    assert a3.end <= a2.start + 1e-9


def test_fd_of_sequences(mosaic4):
    tasks, capable, eff = oracle.problem_inputs(mosaic4)
    seqs = {Worker.ROBOT: ["PickPlace_A1", "PickPlace_A2"], Worker.HUMAN: ["PickPlace_B1", "PickPlace_B2"]}
    sol = planner.plan_from_sequences(mosaic4, seqs)
    expected = max(sum(eff[t][w] for t in seq) for w, seq in seqs.items())
    assert sol.cost.f_d == pytest.approx(expected)
    assert sol.makespan == pytest.approx(expected)


def test_root_fd_greedy_is_worst_case_bound(mosaic4):
    p = Planner(mosaic4, search="greedy")
    root = p.initialize()
    assert planner.estimate_fd(p, root) == pytest.approx(oracle.makespan_upper_bound(mosaic4))


def test_root_fd_exact_is_lower_bound(mosaic4):
    tasks, capable, eff = oracle.problem_inputs(mosaic4)
    best = min(oracle.oracle_costs(m, eff, None, "timeline").f_d
               for m in oracle.enumerate_assignments(tasks, capable, len(tasks)))
    p = Planner(mosaic4, search="exact")
    assert planner.estimate_fd(p, p.initialize()) <= best + 1e-9


@pytest.mark.parametrize("search", ["exact", "greedy"])
def test_fd_of_solution_is_makespan(mosaic4, mosaic9, search):
    for prob in (mosaic4, mosaic9) if search == "greedy" else (mosaic4,):
        p = Planner(prob, search=search)
        sol = p.search_plan()
        assert planner.estimate_fd(p, sol) == pytest.approx(p.solution(sol).makespan)
        assert sol.parts["fd_projection"] == 0.0


def test_exact_fd_monotone_along_search(mosaic4):
    p = Planner(mosaic4, search="exact")
    trace = []
    sol = p.search_plan(trace=trace)
    for plan in trace + [sol]:
        if plan.parent is not None:
            assert plan.cost.f_d >= plan.parent.cost.f_d - 1e-9


def with_synergy(problem, entries):
    s = SynergyMatrix(problem.synergy.robot_tasks, problem.synergy.human_tasks)
    for (r, h), v in problem.synergy.items():
        s.set(r, h, entries.get((r, h), v))
    return dataclasses.replace(problem, synergy=s)


def test_fs_no_overlap_is_zero(mosaic4):
    prob = with_synergy(mosaic4, {("PickPlace_A2", "PickPlace_B1"): -3.0})
    sol = planner.plan_from_sequences(prob, {Worker.ROBOT: ["PickPlace_A1", "PickPlace_A2"],
                                             Worker.HUMAN: ["PickPlace_B1", "PickPlace_B2"]})
    toks = sol.task_tokens()
    a2, b1 = toks["PickPlace_A2"], toks["PickPlace_B1"]
    assert b1.end <= a2.start
    assert sol.cost.f_s == 0.0


def spans(sol, worker):
    return [(t.value, t.start, t.end) for t in sol.tokens if t.worker is worker]


def test_fs_matches_realized_overlaps(mosaic4):
    prob = with_synergy(mosaic4, {("PickPlace_A1", "PickPlace_B1"): -2.0, ("PickPlace_A2", "PickPlace_B2"): 1.5,
                                  ("PickPlace_A2", "PickPlace_B1"): 0.25})
    for r_seq, h_seq in [(["PickPlace_A1", "PickPlace_A2"], ["PickPlace_B1", "PickPlace_B2"]),
                         (["PickPlace_A2"], ["PickPlace_B2", "PickPlace_A1", "PickPlace_B1"])]:
        sol = planner.plan_from_sequences(prob, {Worker.ROBOT: r_seq, Worker.HUMAN: h_seq})
        pairs = oracle.brute_force_schedule_overlaps(spans(sol, Worker.ROBOT), spans(sol, Worker.HUMAN))
        expected = sum(prob.synergy.lookup(r, h) for r, h in pairs if r in prob.synergy.robot_tasks)
        assert sol.cost.f_s == pytest.approx(expected)
    first = planner.plan_from_sequences(prob, {Worker.ROBOT: ["PickPlace_A1", "PickPlace_A2"],
                                               Worker.HUMAN: ["PickPlace_B1", "PickPlace_B2"]})
    assert ("PickPlace_A1", "PickPlace_B1") in oracle.brute_force_schedule_overlaps(
        spans(first, Worker.ROBOT), spans(first, Worker.HUMAN))


@pytest.mark.parametrize("name", ["mosaic-4", "mosaic-9", "mosaic-16", "mosaic-50"])
@pytest.mark.parametrize("mode", ["flexible", "rigid"])
def test_solutions_valid(name, mode):
    prob = domain.generate_mosaic(domain.load_mosaic(name), seed=1)
    sol = planner.synthesize_plan(prob, mode=mode)
    check_validity(prob, sol)
    if mode == "rigid":
        assert all(t.latest_end == t.end for t in sol.tokens)


def test_random_feasible_plans_valid(mosaic50):
    white = sum(1 for t in mosaic50.tasks if t.allowed_workers == {Worker.HUMAN})
    rng = np.random.default_rng(0)
    for _ in range(5):
        sol = planner.random_feasible_plan(mosaic50, rng)
        check_validity(mosaic50, sol)
        n_h = sum(1 for w in sol.assignment.values() if w is Worker.HUMAN)
        assert white <= n_h <= 39


def test_exact_mosaic4_matches_oracle(mosaic4):
    flat = domain.collapse_to_midpoints(mosaic4)
    sol = planner.synthesize_plan(flat, search="exact")
    tasks, capable, dur = oracle.problem_inputs(flat)
    front = oracle.oracle_pareto(tasks, capable, dur, flat.synergy, "timeline")
    assert not any(dominates(c, sol.cost) for _, c in front)
    assert sol.cost.f_d == pytest.approx(oracle.select_min_fs_first(front)[1].f_d, abs=1e-9)


def test_exact_with_synergy_matches_oracle(mosaic4):
    prob = with_synergy(domain.collapse_to_midpoints(mosaic4),
                        {("PickPlace_A1", "PickPlace_B1"): -4.0, ("PickPlace_A2", "PickPlace_B2"): -1.0})
    sol = planner.synthesize_plan(prob, search="exact")
    tasks, capable, dur = oracle.problem_inputs(prob)
    best = oracle.select_min_fs_first(oracle.oracle_pareto(tasks, capable, dur, prob.synergy, "timeline"))[1]
    assert (sol.cost.f_s, sol.cost.f_d) == pytest.approx((best.f_s, best.f_d))


def test_expanded_plans_do_not_dominate_solution(mosaic4):
    p = Planner(mosaic4, search="exact")
    trace = []
    sol = p.search_plan(trace=trace)
    assert not any(dominates(t.cost, sol.cost) for t in trace)


def test_infeasible_without_human():
    prob = domain.generate_mosaic(domain.load_mosaic("mosaic-4"))
    no_human = dataclasses.replace(prob, state_variables=tuple(
        sv for sv in prob.state_variables if sv.worker is not Worker.HUMAN))
    with pytest.raises(planner.Infeasible):
        planner.synthesize_plan(no_human)


def test_infeasible_short_horizon(mosaic4):
    with pytest.raises(planner.Infeasible):
        planner.synthesize_plan(dataclasses.replace(mosaic4, horizon=5.0))


def test_zero_budget_times_out(mosaic4):
    with pytest.raises(planner.PlanningTimeout) as exc:
        planner.synthesize_plan(mosaic4, budget=0.0)
    assert "expansions" in exc.value.stats


def test_deterministic(mosaic9):
    a = planner.synthesize_plan(mosaic9).to_json()
    b = planner.synthesize_plan(mosaic9).to_json()
    for d in (a, b):
        d["stats"].pop("wall_time")
    assert a == b


def test_solution_roundtrip(mosaic9):
    sol = planner.synthesize_plan(mosaic9)
    back = planner.SolutionPlan.from_json(json.loads(json.dumps(sol.to_json())))
    assert back.to_json() == sol.to_json()


def test_small_fringe_cap_still_solves(mosaic9):
    sol = planner.synthesize_plan(mosaic9, search="exact", fringe_cap=50)
    check_validity(mosaic9, sol)
