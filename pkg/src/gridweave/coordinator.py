"""ISO coordination: the sequential-iterative fixed-point loop over controllers.

The ISO is a pure data manager: it stores each controller's predicted net-load
profile, hands controller i the aggregate of everyone else (current-sweep
plans for earlier controllers, previous-sweep plans for later ones), and stops
once the aggregate profile changes by less than epsilon between sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .core import Band, Profile, TimeGrid, aggregate

__all__ = [
    "IsoState",
    "ConvergenceConfig",
    "RoundResult",
    "CoordinationError",
    "sigma_for",
    "run_round",
    "commit_day_ahead",
]


class ControllerHandle(Protocol):
    """What the ISO needs from a controller: an id and one solve per visit."""

    @property
    def controller_id(self) -> str: ...

    def compute_plan(self, sigma: Profile) -> Profile: ...


class CoordinationError(RuntimeError):
    """A controller failed mid-round; carries who and at which iteration."""

    def __init__(self, controller_id: str, iteration: int, cause: Exception):
        super().__init__(
            f"round aborted: controller {controller_id} failed at "
            f"iteration {iteration}: {cause}")
        self.controller_id = controller_id
        self.iteration = iteration


@dataclass
class IsoState:
    """Stored plans per controller plus the aggregate history of one round."""

    order: tuple[str, ...]
    grid: TimeGrid
    current: dict[str, Profile] = field(default_factory=dict)
    previous: dict[str, Profile] = field(default_factory=dict)
    iteration: int = 0
    aggregate_history: list[Profile] = field(default_factory=list)

    @classmethod
    def fresh(cls, order: Sequence[str], grid: TimeGrid,
              seed_plans: dict[str, Profile] | None = None) -> "IsoState":
        """Seed the round; missing previous-time-step plans default to zero."""
        prev = {cid: (seed_plans or {}).get(cid, Profile.zeros(grid))
                for cid in order}
        return cls(order=tuple(order), grid=grid, previous=prev)

    def begin_sweep(self) -> None:
        self.iteration += 1
        if self.current:
            self.previous = dict(self.current)
        self.current = {}


@dataclass(frozen=True)
class ConvergenceConfig:
    epsilon: float = 0.1  # kW, infinity norm on successive aggregates
    max_iterations: int = 50

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class RoundResult:
    plans: dict[str, Profile]
    iterations_used: int
    converged: bool
    aggregate: Profile


def sigma_for(state: IsoState, controller_id: str) -> Profile:
    """Aggregate of everyone else: current sweep before i, previous sweep after.

    During sweep l = 1 the "previous sweep" entries are the previous
    time step's plans (zeros on the very first step).
    """
    if controller_id not in state.order:
        raise KeyError(f"controller {controller_id} is not registered")
    i = state.order.index(controller_id)
    parts: list[Profile] = []
    for j, cid in enumerate(state.order):
        if cid == controller_id:
            continue
        source = state.current if j < i else state.previous
        if cid not in source:
            raise KeyError(f"no stored plan for controller {cid}")
        parts.append(source[cid])
    return aggregate(parts, state.grid)


def run_round(controllers: Sequence[ControllerHandle], state: IsoState,
              cfg: ConvergenceConfig) -> RoundResult:
    """Run sweeps of sequential solves until the aggregate settles.

    Non-convergence within max_iterations is a reported outcome
    (converged=False), never an exception; an infeasible controller aborts
    the round with a CoordinationError.
    """
    if not controllers:
        raise ValueError("at least one controller must be registered")
    ids = tuple(c.controller_id for c in controllers)
    if set(ids) != set(state.order):
        raise ValueError("controller set does not match the registered order")
    by_id = {c.controller_id: c for c in controllers}

    prev_aggregate = Profile.zeros(state.grid)  # U^0 = 0
    converged = False
    while state.iteration < cfg.max_iterations:
        state.begin_sweep()
        for cid in state.order:
            sigma = sigma_for(state, cid)
            try:
                plan = by_id[cid].compute_plan(sigma)
            except Exception as exc:
                raise CoordinationError(cid, state.iteration, exc) from exc
            if plan.grid != state.grid:
                raise CoordinationError(
                    cid, state.iteration,
                    ValueError("submitted plan is on the wrong grid"))
            state.current[cid] = plan
        agg = aggregate([state.current[cid] for cid in state.order], state.grid)
        state.aggregate_history.append(agg)
        delta = max(abs(a - b) for a, b in zip(agg.values, prev_aggregate.values))
        prev_aggregate = agg
        if delta < cfg.epsilon:
            converged = True
            break
    return RoundResult(
        plans=dict(state.current),
        iterations_used=state.iteration,
        converged=converged,
        aggregate=prev_aggregate,
    )


def commit_day_ahead(round_result: RoundResult, half_width: float,
                     force: bool = False) -> Band:
    """Freeze the round's aggregate as the committed day-ahead band."""
    if not round_result.converged and not force:
        raise ValueError("refusing to commit a non-converged round "
                         "(pass force=True to override)")
    return Band(committed=round_result.aggregate, half_width=half_width)
