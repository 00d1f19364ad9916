import itertools

import numpy as np
import pytest

from trilift.flightctl import NODE_COUNT, PlanTrajectory
from trilift.safety import (KIND_HOVER, KIND_KILL, KIND_NONE, Intervention,
                            SafetyLimits, check)

LIMITS = SafetyLimits()


def uav(p, v=(0, 0, 0), a=(0, 0, 0)):
    return (np.asarray(p, dtype=float), np.asarray(v, dtype=float),
            np.asarray(a, dtype=float))


def spread_states(**overrides):
    states = [uav([0.0, 0, 1]), uav([2.0, 0, 1]), uav([0.0, 2, 1])]
    for idx, st in overrides.items():
        states[int(idx)] = st
    return states


def hold_plans(states, t0=0.0):
    return [PlanTrajectory.hold(t0, s[0]) for s in states]


class TestStateChecks:
    def test_all_nominal(self):
        states = spread_states()
        out = check(states, hold_plans(states), LIMITS)
        assert out.kind == KIND_NONE
        assert out.reasons == []

    def test_outside_arena_kills(self):
        states = spread_states(**{"0": uav([4.01, 0, 1])})
        out = check(states, None, LIMITS)
        assert out.kind == KIND_KILL
        assert any("arena" in r for r in out.reasons)

    def test_separation_breach_kills(self):
        states = [uav([0.0, 0, 1]), uav([0.35, 0, 1]), uav([0, 2, 1])]
        out = check(states, None, LIMITS)
        assert out.kind == KIND_KILL
        assert any("separation" in r for r in out.reasons)

    def test_separation_at_04_boundary(self):
        states = [uav([0.0, 0, 1]), uav([0.40, 0, 1]), uav([0, 2, 1])]
        assert check(states, None, LIMITS).kind == KIND_NONE

    def test_overspeed_hovers(self):
        states = spread_states(**{"1": uav([2, 0, 1], v=(4.04, 0, 0))})
        out = check(states, None, LIMITS)
        assert out.kind == KIND_HOVER

    def test_overaccel_hovers(self):
        states = spread_states(**{"2": uav([0, 2, 1], a=(0, 0, 10.5))})
        assert check(states, None, LIMITS).kind == KIND_HOVER

    def test_needs_at_least_one_uav(self):
        with pytest.raises(ValueError):
            check([], None, LIMITS)


class TestPlanLookahead:
    def test_plan_position_violation_hovers(self):
        states = spread_states()
        plans = hold_plans(states)
        plans[0].p[5] = np.array([10.0, 0, 1])  # node outside the arena
        out = check(states, plans, LIMITS, t_now=0.0)
        assert out.kind == KIND_HOVER
        assert any("plan node" in r for r in out.reasons)

    def test_plan_speed_violation_hovers(self):
        states = spread_states()
        plans = hold_plans(states)
        plans[1].v[3] = np.array([5.0, 0, 0])
        assert check(states, plans, LIMITS, t_now=0.0).kind == KIND_HOVER

    def test_violation_beyond_horizon_ignored(self):
        states = spread_states()
        plans = hold_plans(states)
        plans[0].p[-1] = np.array([10.0, 0, 1])  # 2.1 s out, horizon is 1 s
        assert check(states, plans, LIMITS, t_now=0.0).kind == KIND_NONE

    def test_exhausted_plan_hovers(self):
        states = spread_states()
        plans = hold_plans(states, t0=0.0)
        assert check(states, plans, LIMITS, t_now=2.5).kind == KIND_HOVER


class TestPrecedence:
    @pytest.mark.parametrize("kill,hover_state,hover_plan",
                             list(itertools.product([False, True], repeat=3)))
    def test_all_trigger_combinations(self, kill, hover_state, hover_plan):
        nominal = spread_states()
        states = spread_states()
        if kill:
            states[0] = uav([5.0, 0, 1])
        if hover_state:
            states[1] = uav([2, 0, 1], v=(5.0, 0, 0))
        plans = hold_plans(nominal)  # plans stay in-bounds unless injected
        if hover_plan:
            plans[2].v[0] = np.array([6.0, 0, 0])
        out = check(states, plans, LIMITS, t_now=0.0)
        if kill:
            assert out.kind == KIND_KILL
        elif hover_state or hover_plan:
            assert out.kind == KIND_HOVER
        else:
            assert out.kind == KIND_NONE
        assert any("arena" in r and "plan" not in r for r in out.reasons) == kill
        assert any("speed" in r and "plan" not in r for r in out.reasons) == hover_state
        assert any("plan" in r for r in out.reasons) == hover_plan

    def test_pure_function(self):
        states = spread_states(**{"0": uav([5.0, 0, 1])})
        a = check(states, None, LIMITS)
        b = check(states, None, LIMITS)
        assert a.kind == b.kind and a.reasons == b.reasons

    def test_monotone_in_arena_size(self):
        states = spread_states()
        big = SafetyLimits()
        small = SafetyLimits(arena_min=np.array([-1.0, -1.0, 0.0]),
                             arena_max=np.array([1.0, 1.0, 2.0]))
        rank = {KIND_NONE: 0, KIND_HOVER: 1, KIND_KILL: 2}
        out_big = check(states, hold_plans(states), big)
        out_small = check(states, hold_plans(states), small)
        assert rank[out_small.kind] >= rank[out_big.kind]


class TestLimitsValidation:
    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            SafetyLimits(arena_min=np.array([1.0, 0, 0]),
                         arena_max=np.array([-1.0, 1, 1]))

    def test_bad_dkill_rejected(self):
        with pytest.raises(ValueError):
            SafetyLimits(d_kill=0.0)
