"""Primitives of the inspection game: parameters, beliefs, flow payoffs.

Everything here is a pure function of its arguments.  Reputation ``p`` is the
principal's posterior that quality is high; ``theta`` is the true quality.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np


class ModelError(ValueError):
    """Base class for domain errors raised by this package."""


class NonPositiveParam(ModelError):
    pass


class EffortNeverWorthwhile(ModelError):
    pass


class WrongDirection(ModelError):
    pass


class InfiniteTravel(ModelError):
    pass


class DegenerateSpread(ModelError):
    pass


class BadBracket(ModelError):
    pass


PARAM_NAMES = ("H", "L", "c", "lam", "r", "u", "k")


@dataclass(frozen=True)
class ModelParams:
    """The seven primitives.

    H, L: principal's flow gain when quality is high / flow loss when low
    c: agent's marginal effort cost
    lam: intensity of quality transitions
    r: common discount rate
    u: agent's flow utility while approved
    k: lump-sum inspection cost
    """

    H: float
    L: float
    c: float
    lam: float
    r: float
    u: float
    k: float

    @property
    def p_dagger(self) -> float:
        return self.L / (self.H + self.L)

    @property
    def gamma(self) -> float:
        return (self.r + self.lam) / self.lam

    @property
    def rho(self) -> float:
        """Exponent r/lam linking reputation ratios to discount factors."""
        return self.r / self.lam

    def replace(self, **changes) -> "ModelParams":
        d = asdict(self)
        d.update(changes)
        return validate_params(**d)

    def as_dict(self) -> dict:
        return asdict(self)


def validate_params(H, L, c, lam, r, u, k) -> ModelParams:
    raw = dict(H=H, L=L, c=c, lam=lam, r=r, u=u, k=k)
    for name, value in raw.items():
        value = float(value)
        if not math.isfinite(value) or value <= 0.0:
            raise NonPositiveParam(f"{name} must be a positive finite number, got {value!r}")
        raw[name] = value
    if raw["u"] / (raw["r"] + raw["lam"]) <= raw["c"] / raw["r"]:
        raise EffortNeverWorthwhile(
            f"u/(r+lam) = {raw['u'] / (raw['r'] + raw['lam']):.6g} does not exceed "
            f"c/r = {raw['c'] / raw['r']:.6g}; effort would never pay off"
        )
    return ModelParams(**raw)


@dataclass(frozen=True)
class ReputationState:
    p: float
    theta: int

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ModelError(f"reputation {self.p} outside [0, 1]")
        if self.theta not in (0, 1):
            raise ModelError(f"quality must be 0 or 1, got {self.theta}")


@dataclass(frozen=True)
class BoundaryValues:
    """Continuation values right after an inspection."""

    V0: float
    V1: float
    U11: float
    U00: float

    @property
    def spread(self) -> float:
        return self.V1 - self.V0


def flow_value(p, params: ModelParams):
    """Expected flow payoff of approving at reputation p."""
    return p * params.H - (1.0 - p) * params.L


def flow_value_pos(p, params: ModelParams):
    return np.maximum(flow_value(p, params), 0.0)


def approval_threshold(params: ModelParams) -> float:
    return params.p_dagger


def approve(p, params: ModelParams):
    """Myopic approval rule, closed at the threshold."""
    return np.asarray(p) >= params.p_dagger


def reputation_drift(p, eta_believed, params: ModelParams):
    return params.lam * (eta_believed - p)


def travel_time(p0: float, p1: float, regime: Literal["zero_effort", "full_effort"],
                params: ModelParams) -> float:
    """Time for the belief to move from p0 to p1 under constant zero or full effort."""
    if regime == "zero_effort":
        if not 1.0 >= p0 >= p1 >= 0.0:
            raise WrongDirection(f"zero effort moves reputation down; got {p0} -> {p1}")
        if p1 == 0.0:
            raise InfiniteTravel("reputation 0 is never reached under zero effort")
        return math.log(p0 / p1) / params.lam
    if regime == "full_effort":
        if not 0.0 <= p0 <= p1 <= 1.0:
            raise WrongDirection(f"full effort moves reputation up; got {p0} -> {p1}")
        if p1 == 1.0:
            raise InfiniteTravel("reputation 1 is never reached under full effort")
        return math.log((1.0 - p0) / (1.0 - p1)) / params.lam
    raise ValueError(f"unknown regime {regime!r}")


def eta_bar(p, bv: BoundaryValues, params: ModelParams):
    """Believed effort at which the principal is indifferent between inspecting and waiting.

    Inspection is weakly preferred at p iff believed effort <= eta_bar(p).
    """
    spread = bv.V1 - bv.V0
    if not spread > 0.0:
        raise DegenerateSpread(f"V1 - V0 = {spread} must be positive")
    r, lam = params.r, params.lam
    return (r * (bv.V0 - params.k) / (lam * spread)
            + p * (r + lam) / lam
            - flow_value_pos(p, params) / (lam * spread))


def mixing_rate(x_star: float, x_bar: float, params: ModelParams) -> float:
    """Exponential contraction rate of the belief toward x* under the interior effort rule."""
    return params.lam * x_bar / (x_bar - x_star)


def mixing_effort(p, x_star: float, x_bar: float):
    return x_star * (x_bar - p) / (x_bar - x_star)


def mixing_drift_solution(p0: float, t, x_star: float, x_bar: float, params: ModelParams):
    if not x_star < p0 <= x_bar:
        raise BadBracket(f"p0={p0} outside ({x_star}, {x_bar}]")
    kappa = mixing_rate(x_star, x_bar, params)
    return x_star + (p0 - x_star) * np.exp(-kappa * np.asarray(t, dtype=float))
