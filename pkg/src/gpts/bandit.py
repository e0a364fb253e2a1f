"""Thompson-sampling bandit over a finite hyperparameter grid.

The policy models the per-interaction reward (the decrease in validation
loss between consecutive interactions) with a GP, draws one joint sample
of the posterior over all arms, and plays the argmax. Fixed-arm and
uniform-random baselines share the same run loop.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import gp
from .errors import BridgeError, EnvironmentFailure, InvalidArgumentError

__all__ = [
    "Arm",
    "GridDim",
    "ArmSpace",
    "LossObservation",
    "RewardRecord",
    "History",
    "PolicyConfig",
    "GP_TS",
    "FIXED_ARM",
    "UNIFORM_RANDOM",
    "make_grid",
    "reward_from_losses",
    "cumulative_reward",
    "history_from_losses",
    "default_gp_hyperparams",
    "ts_select_arm",
    "run_policy",
]

Arm = tuple[float, ...]

GP_TS = "gp_ts"
FIXED_ARM = "fixed_arm"
UNIFORM_RANDOM = "uniform_random"


@dataclass(frozen=True)
class GridDim:
    lower: float
    upper: float
    step: float
    name: str = "psi"


@dataclass(frozen=True)
class ArmSpace:
    """Finite arm set: the Cartesian product of regular per-dimension grids.

    Endpoints are excluded (the search intervals are open); arms are
    unique and enumerated in lexicographic order.
    """

    dims: tuple[GridDim, ...]
    arms: tuple[Arm, ...]

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def __len__(self) -> int:
        return len(self.arms)

    def index_of(self, arm: Arm) -> int:
        try:
            return self.arms.index(tuple(arm))
        except ValueError:
            raise InvalidArgumentError(f"arm {arm!r} is not in the arm space") from None

    def as_array(self) -> np.ndarray:
        return np.array(self.arms, dtype=float)


def make_grid(dims) -> ArmSpace:
    """Materialize the arm grid from per-dimension (lower, upper, step) specs."""
    dims = tuple(d if isinstance(d, GridDim) else GridDim(**d) for d in dims)
    value_lists: list[list[float]] = []
    for d in dims:
        if not (d.step > 0.0):
            raise InvalidArgumentError(f"dimension {d.name!r}: step must be positive")
        if not (d.lower < d.upper):
            raise InvalidArgumentError(f"dimension {d.name!r}: lower must be below upper")
        eps = 1e-9 * d.step
        values = []
        i = 1
        while True:
            v = round(d.lower + i * d.step, 12)
            if v >= d.upper - eps:
                break
            values.append(v)
            i += 1
        if not values:
            raise InvalidArgumentError(
                f"dimension {d.name!r}: step {d.step} leaves no interior grid points in "
                f"({d.lower}, {d.upper})"
            )
        value_lists.append(values)
    arms = tuple(itertools.product(*value_lists))
    return ArmSpace(dims=dims, arms=arms)


@dataclass(frozen=True)
class LossObservation:
    interaction: int
    validation_loss: float


class RewardRecord(NamedTuple):
    # a NamedTuple rather than a dataclass: histories can hold millions
    # of records and tuple construction is measurably cheaper
    interaction: int
    arm: Arm
    reward: float
    loss_before: float
    loss_after: float


@dataclass
class History:
    """Interaction log of one run: reward records plus the initial loss.

    ``error`` is set (and the history left partial) when the environment
    fails mid-run.
    """

    initial_loss: float
    records: list[RewardRecord] = field(default_factory=list)
    error: str | None = None
    # One entry per record for GP-TS runs (the hyperparameters used to
    # select that interaction's arm); empty for baseline policies.
    gp_trace: list[gp.GpHyperparams] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss_after if self.records else self.initial_loss

    def losses(self) -> list[float]:
        """The loss trajectory (initial loss first)."""
        return [self.initial_loss] + [r.loss_after for r in self.records]


def reward_from_losses(
    prev: LossObservation, curr: LossObservation, arm: Arm
) -> RewardRecord:
    """Reward for one interaction: the drop in validation loss."""
    if curr.interaction != prev.interaction + 1:
        raise InvalidArgumentError(
            f"non-consecutive interactions: {prev.interaction} -> {curr.interaction}"
        )
    return RewardRecord(
        interaction=curr.interaction,
        arm=tuple(arm),
        reward=prev.validation_loss - curr.validation_loss,
        loss_before=prev.validation_loss,
        loss_after=curr.validation_loss,
    )


def cumulative_reward(h: History) -> float:
    """Sum of rewards; telescopes to initial loss minus final loss."""
    return float(sum(r.reward for r in h.records))


def history_from_losses(losses, arms) -> History:
    """Build a History from a loss trajectory (initial loss first)."""
    losses = list(losses)
    arms = list(arms)
    if len(losses) != len(arms) + 1:
        raise InvalidArgumentError("need exactly one more loss than arms")
    records = [
        RewardRecord(
            interaction=t,
            arm=tuple(arm),
            reward=before - after,
            loss_before=before,
            loss_after=after,
        )
        for t, (arm, before, after) in enumerate(zip(arms, losses[:-1], losses[1:]), start=1)
    ]
    return History(initial_loss=losses[0], records=records)


def default_gp_hyperparams(ndim: int) -> gp.GpHyperparams:
    """Matérn-5/2 with ARD lengthscales and a constant mean."""
    return gp.GpHyperparams(
        mean=gp.MeanSpec(family="constant", constant_value=0.0),
        kernel=gp.KernelSpec(
            family=gp.MATERN52,
            lengthscales=(0.1,) * ndim,
            output_scale=1.0,
        ),
        noise_variance=0.01,
    )


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = GP_TS
    seed: int = 0
    fixed_arm_index: int | None = None
    gp_init: gp.GpHyperparams | None = None
    fit_budget: gp.FitBudget = field(default_factory=lambda: gp.FitBudget(restarts=2, max_evals=60))

    def __post_init__(self):
        if self.kind not in (GP_TS, FIXED_ARM, UNIFORM_RANDOM):
            raise InvalidArgumentError(f"unknown policy kind: {self.kind!r}")
        if self.kind == FIXED_ARM and self.fixed_arm_index is None:
            raise InvalidArgumentError("fixed_arm policy needs fixed_arm_index")


def ts_select_arm(
    space: ArmSpace, post: gp.PosteriorGp, rng: np.random.Generator
) -> tuple[Arm, int]:
    """Draw one joint posterior sample over all arms and play the argmax.

    Ties break toward the lowest arm index.
    """
    if len(space) == 0:
        raise InvalidArgumentError("arm space is empty")
    sample = post.sample_joint(space.as_array(), rng)
    idx = int(np.argmax(sample))
    return space.arms[idx], idx


def run_policy(space: ArmSpace, cfg: PolicyConfig, env, T: int, u: int) -> History:
    """Run one policy for T interactions of u trainer updates each.

    GP-TS: per interaction, sample the reward posterior jointly over the
    arms, play the argmax, observe the loss, convert it to a reward, and
    refit the GP on the full history (warm-started from the previous
    fit, which is kept whenever refitting fails or degrades). Baselines
    replace the selection step and maintain no GP.

    Environment failures abort the run; the partial history is returned
    with its ``error`` field set.
    """
    if T < 1 or u < 1:
        raise InvalidArgumentError("T and u must be at least 1")
    if cfg.kind == FIXED_ARM and not (0 <= cfg.fixed_arm_index < len(space)):
        raise InvalidArgumentError(
            f"fixed_arm_index {cfg.fixed_arm_index} out of range for {len(space)} arms"
        )

    rng = np.random.default_rng(cfg.seed)
    prev = env.init()
    hist = History(initial_loss=prev.validation_loss)

    theta = cfg.gp_init or default_gp_hyperparams(space.ndim)
    arms_played: list[Arm] = []
    rewards: list[float] = []

    for t in range(1, T + 1):
        if cfg.kind == GP_TS:
            post = gp.posterior(theta, gp.RegressionData(
                np.array(arms_played, dtype=float).reshape(len(arms_played), space.ndim),
                np.array(rewards, dtype=float),
            ))
            arm, _ = ts_select_arm(space, post, rng)
        elif cfg.kind == FIXED_ARM:
            arm = space.arms[cfg.fixed_arm_index]
        else:
            arm = space.arms[int(rng.integers(len(space)))]

        try:
            obs = env.step(arm, u)
        except (EnvironmentFailure, BridgeError) as exc:
            hist.error = f"interaction {t}: {exc}"
            return hist

        record = reward_from_losses(prev, obs, arm)
        hist.records.append(record)
        prev = obs

        if cfg.kind == GP_TS:
            hist.gp_trace.append(theta)
            arms_played.append(arm)
            rewards.append(record.reward)
            if len(rewards) >= 2:
                data = gp.RegressionData(np.array(arms_played, dtype=float), np.array(rewards))
                theta = gp.fit_type2_mle(data, theta, cfg.fit_budget)

    return hist
