import math

import pytest

from gridweave.coordinator import (ConvergenceConfig, CoordinationError,
                                   IsoState, RoundResult, commit_day_ahead,
                                   run_round, sigma_for)
from gridweave.core import Profile, TimeGrid

G = TimeGrid(0, 1.0, 4)


class ConstController:
    """Always answers with the same plan, whatever sigma says."""

    def __init__(self, cid, values):
        self.controller_id = cid
        self.plan = Profile(G, values)
        self.seen_sigmas = []

    def compute_plan(self, sigma):
        self.seen_sigmas.append(sigma)
        return self.plan


class FailingController:
    controller_id = "boom"

    def compute_plan(self, sigma):
        raise RuntimeError("infeasible model")


def test_sigma_for_matches_sequential_formula():
    # 3 controllers; c2 sees c1's current-sweep plan and c3's previous one
    state = IsoState.fresh(("c1", "c2", "c3"), G)
    state.begin_sweep()
    state.current["c1"] = Profile(G, (1.0,) * 4)
    state.previous["c3"] = Profile(G, (3.0,) * 4)
    assert sigma_for(state, "c2").values == (4.0,) * 4
    # first controller of the sweep sees only previous-sweep plans
    state.previous["c2"] = Profile(G, (2.0,) * 4)
    assert sigma_for(state, "c1").values == (5.0,) * 4
    with pytest.raises(KeyError):
        sigma_for(state, "nobody")


def test_sigma_for_single_controller_is_zero():
    state = IsoState.fresh(("only",), G)
    state.begin_sweep()
    assert sigma_for(state, "only").values == (0.0,) * 4


def test_constant_controllers_converge_at_sweep_2():
    cs = [ConstController("a", (1.0, 2.0, 3.0, 4.0)),
          ConstController("b", (0.5,) * 4)]
    state = IsoState.fresh(("a", "b"), G)
    res = run_round(cs, state, ConvergenceConfig(epsilon=0.1))
    assert res.converged
    assert res.iterations_used == 2
    assert res.aggregate.values == (1.5, 2.5, 3.5, 4.5)
    # each controller solved exactly twice (once per sweep)
    assert len(cs[0].seen_sigmas) == 2
    # b's sigma in each sweep is a's (constant) plan
    assert cs[1].seen_sigmas[-1].values == (1.0, 2.0, 3.0, 4.0)


def test_epsilon_infinity_converges_after_one_sweep():
    cs = [ConstController("a", (5.0,) * 4)]
    state = IsoState.fresh(("a",), G)
    res = run_round(cs, state, ConvergenceConfig(epsilon=math.inf))
    assert res.converged and res.iterations_used == 1


def test_non_convergence_is_reported_not_raised():
    class Flipper:
        """Alternates between two plans forever."""
        controller_id = "flip"

        def __init__(self):
            self.n = 0

        def compute_plan(self, sigma):
            self.n += 1
            return Profile(G, ((10.0 if self.n % 2 else 0.0),) * 4)

    state = IsoState.fresh(("flip",), G)
    res = run_round([Flipper()], state, ConvergenceConfig(epsilon=0.1,
                                                          max_iterations=6))
    assert not res.converged
    assert res.iterations_used == 6


def test_controller_failure_aborts_with_context():
    state = IsoState.fresh(("boom",), G)
    with pytest.raises(CoordinationError) as err:
        run_round([FailingController()], state, ConvergenceConfig())
    assert err.value.controller_id == "boom"
    assert err.value.iteration == 1


def test_run_round_checks_registration():
    state = IsoState.fresh(("a", "b"), G)
    with pytest.raises(ValueError):
        run_round([ConstController("a", (0.0,) * 4)], state,
                  ConvergenceConfig())
    with pytest.raises(ValueError):
        run_round([], state, ConvergenceConfig())


def test_seed_plans_feed_first_sweep_sigma():
    seed = {"a": Profile(G, (0.0,) * 4), "b": Profile(G, (7.0,) * 4)}
    cs = [ConstController("a", (1.0,) * 4), ConstController("b", (7.0,) * 4)]
    state = IsoState.fresh(("a", "b"), G)
    state.previous = dict(seed)
    run_round(cs, state, ConvergenceConfig())
    # a's very first sigma is b's previous-time-step plan
    assert cs[0].seen_sigmas[0].values == (7.0,) * 4


def test_commit_day_ahead():
    rr = RoundResult(plans={}, iterations_used=2, converged=True,
                     aggregate=Profile(G, (5.0,) * 4))
    band = commit_day_ahead(rr, half_width=2.0)
    assert band.committed.values == (5.0,) * 4
    assert band.half_width == 2.0
    bad = RoundResult(plans={}, iterations_used=50, converged=False,
                      aggregate=Profile(G, (5.0,) * 4))
    with pytest.raises(ValueError):
        commit_day_ahead(bad, 2.0)
    assert commit_day_ahead(bad, 0.0, force=True).half_width == 0.0


def test_convergence_config_validation():
    with pytest.raises(ValueError):
        ConvergenceConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        ConvergenceConfig(max_iterations=0)
