"""Closed-form construction of the equilibrium classes and their existence map.

The principal's side of each class (cutoffs, boundary values) depends only on
(H, L, lam, r, k); the agent's side adds u and c and pins down the inspection
hazard through a one-dimensional fixed point.  Principal constructions are
cached on the parameters they actually depend on, which keeps parameter
sweeps cheap.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model_core import (
    BoundaryValues,
    ModelError,
    ModelParams,
    eta_bar,
    mixing_effort,
    mixing_rate,
    travel_time,
    validate_params,
)

log = logging.getLogger(__name__)

CLASSES = ("NoInspection", "Periodic", "Breakdown", "Recovery", "Disclosure")


class NoRoot(ModelError):
    pass


class NoFixedPoint(ModelError):
    pass


class NotSupported(ModelError):
    pass


@dataclass(frozen=True)
class Cutoffs:
    x_low: float | None = None
    x_bar: float | None = None
    x_star: float | None = None
    x_zero: float | None = None


class Inspection(NamedTuple):
    kind: str  # "none", "hazard" or "immediate"
    rate: float = 0.0


@dataclass(frozen=True)
class ReportingRule:
    """Cheap-talk reports used in the disclosure class.

    At p = 0 a high agent reports at once and a low agent reports falsely at
    ``false_rate``.  On (0, x_low) a report is a one-shot lottery.  Any report
    moves the belief to ``x_zero`` where the principal inspects at once.
    """

    x_zero: float
    x_low: float
    lam: float

    @property
    def false_rate(self) -> float:
        return self.lam * (1.0 - self.x_zero) / self.x_zero

    @property
    def total_rate(self) -> float:
        return self.lam / self.x_zero

    def report_prob(self, p, theta):
        p = np.asarray(p, dtype=float)
        inside = (p > 0.0) & (p < self.x_low)
        if theta == 1:
            return np.where(p < self.x_low, 1.0, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = p / (1.0 - p) * (1.0 - self.x_zero) / self.x_zero
        return np.where(inside, q, 0.0)


class Evaluation(NamedTuple):
    V: float
    eta: float
    inspection: Inspection
    alpha: int


@dataclass
class EquilibriumSolution:
    cls: str
    params: ModelParams
    cutoffs: Cutoffs
    bv: BoundaryValues
    sigma_star: float | None = None
    reporting: ReportingRule | None = None
    diagnostics: dict = field(default_factory=dict)

    # ---- principal -------------------------------------------------------
    def phi(self, p):
        """Inspection payoff."""
        bv = self.bv
        return bv.V0 + np.asarray(p, dtype=float) * (bv.V1 - bv.V0) - self.params.k

    def value(self, p):
        pr = self.params
        p = np.asarray(p, dtype=float)
        if self.cls == "NoInspection":
            return no_inspection_value(p, pr)
        c = self.cutoffs
        out = np.where(p > c.x_bar, upper_value(np.maximum(p, c.x_bar), c.x_bar, self.bv, pr),
                       self.phi(p))
        if self.cls in ("Periodic", "Breakdown"):
            out = np.where(p < c.x_low, 0.0, out)
        elif self.cls == "Recovery":
            with np.errstate(divide="ignore", invalid="ignore"):
                low = ((1.0 - c.x_low) / (1.0 - p)) ** pr.rho * self.phi(c.x_low)
            out = np.where(p < c.x_low, low, out)
        elif self.cls == "Disclosure":
            x0 = c.x_zero
            low = (p / x0) * self.phi(x0) + (1.0 - p / x0) * self.bv.V0
            out = np.where(p < c.x_low, low, out)
        return out[()] if out.ndim == 0 else out

    # ---- strategies ------------------------------------------------------
    def effort(self, p):
        p = np.asarray(p, dtype=float)
        c = self.cutoffs
        if self.cls in ("NoInspection", "Periodic"):
            out = np.zeros_like(p)
        elif self.cls == "Breakdown":
            out = np.where((p >= c.x_star) & (p < c.x_bar),
                           mixing_effort(p, c.x_star, c.x_bar), 0.0)
        else:
            out = np.where(p < c.x_zero, 1.0,
                           np.where(p < c.x_bar, mixing_effort(p, c.x_star, c.x_bar), 0.0))
            # the mixing rule equals 1 at x_zero only up to rounding
            out = np.minimum(out, 1.0)
        return out[()] if out.ndim == 0 else out

    def hazard(self, p):
        """Inspection hazard per reputation; ``inf`` marks immediate inspection."""
        p = np.asarray(p, dtype=float)
        c = self.cutoffs
        out = np.zeros_like(p)
        if self.cls == "NoInspection":
            pass
        elif self.cls == "Periodic":
            out[(p >= c.x_low) & (p <= c.x_bar)] = np.inf
        elif self.cls == "Breakdown":
            out[(p >= c.x_low) & (p < c.x_star)] = np.inf
            out[(p >= c.x_star) & (p <= c.x_bar)] = self.sigma_star
        else:
            out[(p >= c.x_low) & (p <= c.x_zero)] = np.inf
            out[(p > c.x_zero) & (p <= c.x_bar)] = self.sigma_star
        return out[()] if out.ndim == 0 else out

    def inspection(self, p: float) -> Inspection:
        h = float(self.hazard(p))
        if h == 0.0:
            return Inspection("none")
        if math.isinf(h):
            return Inspection("immediate")
        return Inspection("hazard", h)

    def approval(self, p):
        out = (np.asarray(p, dtype=float) >= self.params.p_dagger).astype(int)
        return out[()] if out.ndim == 0 else out

    def evaluate(self, p: float) -> Evaluation:
        return Evaluation(float(self.value(p)), float(self.effort(p)),
                          self.inspection(p), int(self.approval(p)))

    # ---- agent -----------------------------------------------------------
    def agent_value(self, p, theta: int):
        """Agent's equilibrium value U(p, theta) from the closed forms."""
        pr = self.params
        p = np.asarray(p, dtype=float)
        u, r, lam = pr.u, pr.r, pr.lam
        if self.cls == "NoInspection":
            pd = pr.p_dagger
            with np.errstate(divide="ignore"):
                out = np.where(p > pd, u / r * (1.0 - (pd / np.maximum(p, pd)) ** pr.rho), 0.0)
            return out[()] if out.ndim == 0 else out
        c, bv = self.cutoffs, self.bv
        xb = c.x_bar
        at_top = self._agent_at_x_bar()
        s = (xb / np.maximum(p, xb)) ** pr.rho
        if theta == 1:
            q = xb / np.maximum(p, xb)
            top = u / r * (1.0 - s) + s * (q * at_top[1] + (1.0 - q) * at_top[0])
        else:
            top = u / r * (1.0 - s) + s * at_top[0]
        out = np.where(p > xb, top, bv.U11 if theta == 1 else bv.U00)
        if self.cls != "Periodic":
            lo_mix = c.x_star if self.cls == "Breakdown" else c.x_zero
            mix = self._mixing_agent(theta)
            inside = (p <= xb) & ((p >= lo_mix) if self.cls == "Breakdown" else (p > lo_mix))
            out = np.where(inside, mix, out)
        below = p < c.x_low
        if self.cls in ("Periodic", "Breakdown"):
            out = np.where(below, 0.0, out)
        elif self.cls == "Recovery":
            with np.errstate(divide="ignore", invalid="ignore"):
                a = ((1.0 - c.x_low) / (1.0 - p)) ** pr.rho
                pass_prob = 1.0 if theta == 1 else 1.0 - (1.0 - c.x_low) / (1.0 - p)
                leg = -pr.c / r * (1.0 - a) + a * (pass_prob * bv.U11 + (1.0 - pass_prob) * bv.U00)
            out = np.where(below, leg, out)
        elif self.cls == "Disclosure":
            out = np.where(below, bv.U11 if theta == 1 else bv.U00, out)
        return out[()] if out.ndim == 0 else out

    def _mixing_agent(self, theta: int) -> float:
        pr, bv, s = self.params, self.bv, self.sigma_star
        u0 = (pr.u + s * bv.U00) / (pr.r + s)
        return u0 + (pr.c / pr.lam if theta == 1 else 0.0)

    def _agent_at_x_bar(self) -> tuple[float, float]:
        if self.cls == "Periodic":
            return self.bv.U00, self.bv.U11
        return self._mixing_agent(0), self._mixing_agent(1)

    def incentive_residual(self) -> float:
        """(r+lam)c/lam + sigma c/lam - sigma (U11 - U00); zero on the mixing region."""
        pr, bv, s = self.params, self.bv, self.sigma_star
        return (pr.r + pr.lam) * pr.c / pr.lam + s * pr.c / pr.lam - s * (bv.U11 - bv.U00)

    def summary(self) -> dict:
        c = self.cutoffs
        return {
            "class": self.cls,
            "params": self.params.as_dict(),
            "cutoffs": {"x_low": c.x_low, "x_zero": c.x_zero, "x_star": c.x_star, "x_bar": c.x_bar},
            "sigma_star": self.sigma_star,
            "boundary_values": {"V0": self.bv.V0, "V1": self.bv.V1,
                                "U11": self.bv.U11, "U00": self.bv.U00},
            "reporting": None if self.reporting is None else {
                "x_zero": self.reporting.x_zero,
                "false_report_rate": self.reporting.false_rate,
                "total_report_rate": self.reporting.total_rate,
            },
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# principal building blocks


def no_inspection_value(p, params: ModelParams):
    """Approve until the belief decays to the threshold, then nothing."""
    pr = params
    pd = pr.p_dagger
    p = np.asarray(p, dtype=float)
    q = pd / np.maximum(p, pd)
    val = (np.maximum(p, pd) * (pr.H + pr.L) * (1.0 - q ** pr.gamma) / (pr.r + pr.lam)
           - pr.L * (1.0 - q ** pr.rho) / pr.r)
    out = np.where(p > pd, val, 0.0)
    return out[()] if out.ndim == 0 else out


def upper_value(p, x_bar: float, bv: BoundaryValues, params: ModelParams):
    """Value on the blind-trust region p >= x_bar, matched to inspection at x_bar."""
    pr = params
    spread = bv.V1 - bv.V0
    p = np.asarray(p, dtype=float)
    bracket = pr.L / pr.r - x_bar * (pr.H + pr.L) / (pr.r + pr.lam) + bv.V0 + x_bar * spread - pr.k
    return -pr.L / pr.r + p * (pr.H + pr.L) / (pr.r + pr.lam) + (x_bar / p) ** pr.rho * bracket


def v1_given_v0(x_bar: float, w: float, params: ModelParams) -> float:
    """Value at p=1 when inspections start at x_bar and a failed one is worth w."""
    pr = params
    b = x_bar ** pr.rho
    g = x_bar ** pr.gamma
    return (-pr.L / pr.r * (1.0 - b) / (1.0 - g) + (pr.H + pr.L) / (pr.r + pr.lam)
            + b * ((1.0 - x_bar) * w - pr.k) / (1.0 - g))


def no_effort_bracket(x, params: ModelParams):
    """Decreasing function whose root is the blind-trust cutoff without effort."""
    pr = params
    a = (pr.L - pr.r * pr.k) / (pr.r + pr.lam)
    return a - x * pr.L / pr.r + x ** pr.gamma * (pr.lam / pr.r) * a


def no_effort_sp_residual(x, params: ModelParams):
    return no_effort_bracket(x, params) / (x * (1.0 - x ** params.gamma))


def critical_points(bv: BoundaryValues, params: ModelParams) -> dict:
    """Where eta_bar crosses 0, p and 1 on the branch above the threshold,
    and where it crosses 1 below it."""
    pr = params
    d = bv.V1 - bv.V0
    num = pr.L + pr.r * (bv.V0 - pr.k)
    hl = pr.H + pr.L
    return {
        "x_bar": num / (hl - (pr.r + pr.lam) * d),
        "x_star": num / (hl - pr.r * d),
        "x_zero": (num - pr.lam * d) / (hl - (pr.r + pr.lam) * d),
        "x_low_unit": (pr.lam * d - pr.r * (bv.V0 - pr.k)) / ((pr.r + pr.lam) * d),
    }


def solve_x_bar_no_effort(params: ModelParams) -> float:
    pd = params.p_dagger
    if no_effort_bracket(pd, params) <= 0.0:
        raise NoRoot("inspection is never worthwhile without effort at this cost")
    return brentq(no_effort_bracket, pd, 1.0, args=(params,), xtol=1e-15, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


# ---------------------------------------------------------------------------
# agent building blocks


def _low_leg(regime: str, x_low: float | None, params: ModelParams) -> tuple[float, float]:
    """U00 = alpha + beta * U11 after a failed inspection."""
    pr = params
    if regime == "breakdown":
        return 0.0, 0.0
    if regime == "recovery":
        a = (1.0 - x_low) ** pr.rho
        den = 1.0 - a * (1.0 - x_low)
        return -pr.c / pr.r * (1.0 - a) / den, a * x_low / den
    if regime == "disclosure":
        return -pr.c / (pr.r + pr.lam), pr.lam / (pr.r + pr.lam)
    raise ValueError(f"unknown regime {regime!r}")


def agent_boundary(sigma, x_bar: float, x_low: float | None, regime: str, params: ModelParams):
    """(U11, U00) when the principal inspects at hazard sigma from x_bar down."""
    pr = params
    sigma = np.asarray(sigma, dtype=float)
    alpha, beta = _low_leg(regime, x_low, pr)
    b = x_bar ** pr.rho
    w = sigma / (pr.r + sigma)
    num = pr.u / pr.r * (1.0 - b) + b * (pr.u - x_bar * pr.c) / (pr.r + sigma) + b * w * (1.0 - x_bar) * alpha
    den = 1.0 - b * w * x_bar - b * w * (1.0 - x_bar) * beta
    u11 = num / den
    return u11, alpha + beta * u11


def periodic_agent_U11(x_bar: float, params: ModelParams) -> float:
    pr = params
    return (1.0 - x_bar ** pr.rho) / (1.0 - x_bar ** pr.gamma) * pr.u / pr.r


def h_function(sigma, x_bar, x_low, regime, params: ModelParams):
    pr = params
    u11, u00 = agent_boundary(sigma, x_bar, x_low, regime, pr)
    cl = pr.c / pr.lam
    return (u11 - u00 - cl) / ((pr.r + pr.lam) * cl) - 1.0 / sigma


_SIGMA_GRID = np.logspace(-8, 8, 321)


def sigma_star_fixed_point(x_bar: float, x_low: float | None, regime: str, params: ModelParams,
                           diagnostics: dict | None = None) -> float:
    """Smallest inspection hazard that leaves the agent indifferent over effort."""
    pd = params.p_dagger
    if not pd < x_bar < 1.0:
        raise NoFixedPoint(f"x_bar={x_bar} outside ({pd}, 1)")
    if regime == "recovery" and not (x_low is not None and 0.0 < x_low < pd):
        raise NoFixedPoint(f"x_low={x_low} outside (0, {pd})")
    h = lambda s: float(h_function(s, x_bar, x_low, regime, params))
    vals = h_function(_SIGMA_GRID, x_bar, x_low, regime, params)
    pos = np.flatnonzero(vals >= 0.0)
    sign_changes = int(np.count_nonzero(np.diff(np.sign(vals)) != 0))
    if pos.size == 0:
        # h may poke above zero between grid points when u sits at the threshold
        i = int(np.argmax(vals))
        lo, hi = _SIGMA_GRID[max(i - 1, 0)], _SIGMA_GRID[min(i + 1, _SIGMA_GRID.size - 1)]
        res = minimize_scalar(lambda t: -h(math.exp(t)), bounds=(math.log(lo), math.log(hi)),
                              method="bounded", options={"xatol": 1e-12})
        if -res.fun < 0.0:
            raise NoFixedPoint("inspection can not make the agent indifferent at any hazard")
        s_hi = math.exp(res.x)
        s_lo = lo
    else:
        j = int(pos[0])
        if j == 0:
            raise NoFixedPoint("h is nonnegative at the smallest hazard; no interior fixed point")
        s_lo, s_hi = _SIGMA_GRID[j - 1], _SIGMA_GRID[j]
    sigma = brentq(h, s_lo, s_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
    if diagnostics is not None:
        diagnostics["h_sign_changes_on_scan"] = sign_changes
        diagnostics["h_at_sigma_star"] = h(sigma)
    return sigma


# ---------------------------------------------------------------------------
# principal constructions, cached on the u-independent parameters


def _principal_key(params: ModelParams):
    return (params.H, params.L, params.lam, params.r, params.k)


def _keyed_params(key) -> ModelParams:
    H, L, lam, r, k = key
    # agent primitives are irrelevant for the principal; pick harmless valid ones
    return ModelParams(H=H, L=L, c=1.0, lam=lam, r=r, u=1.0, k=k)


@lru_cache(maxsize=4096)
def _no_effort_principal(key):
    pr = _keyed_params(key)
    x_bar = solve_x_bar_no_effort(pr)
    v1 = v1_given_v0(x_bar, 0.0, pr)
    return x_bar, v1, pr.k / v1


def recovery_residuals(x_low, x_bar, params: ModelParams):
    """The two cutoff conditions of the recovery class (lower and upper)."""
    pr = params
    g = pr.gamma
    num = pr.lam * (pr.H + pr.L) * x_bar ** g + pr.H * pr.r - pr.lam * pr.L
    den = (pr.lam + pr.r) * (pr.lam * (x_bar ** g + (1.0 - x_low) ** g) + pr.r)
    q = num / den
    lower = q * (pr.r * x_low + pr.lam * ((1.0 - x_low) ** g - (1.0 - x_low))) - pr.r * pr.k
    upper = (q * (pr.r * x_bar + pr.lam * ((1.0 - x_low) ** g + x_bar))
             - pr.r * pr.k - pr.H * x_bar + pr.L * (1.0 - x_bar))
    return lower, upper


def recovery_boundary_values(x_low: float, x_bar: float, params: ModelParams) -> tuple[float, float]:
    """(V0, V1) of the recovery value function for given cutoffs."""
    pr = params
    a = (1.0 - x_low) ** pr.rho
    b = x_bar ** pr.rho
    A = np.array([[1.0 - a + a * x_low, -a * x_low],
                  [-(b - b * x_bar), 1.0 - b * x_bar]])
    rhs = np.array([-a * pr.k,
                    b * (pr.L / pr.r - x_bar * (pr.H + pr.L) / (pr.r + pr.lam) - pr.k)
                    - pr.L / pr.r + (pr.H + pr.L) / (pr.r + pr.lam)])
    v0, v1 = np.linalg.solve(A, rhs)
    return float(v0), float(v1)


def _recovery_inner(x_bar: float, pr: ModelParams) -> float | None:
    pd = pr.p_dagger
    g = pr.gamma
    if pr.lam * (pr.H + pr.L) * x_bar ** g + pr.H * pr.r - pr.lam * pr.L <= 0.0:
        return None
    f = lambda x: recovery_residuals(x, x_bar, pr)[0]
    if f(pd) <= 0.0:
        return None
    return brentq(f, 0.0, pd, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


_OUTER_GRID = 400


@lru_cache(maxsize=4096)
def _recovery_principal(key):
    pr = _keyed_params(key)
    pd = pr.p_dagger
    xs = np.linspace(pd, 1.0, _OUTER_GRID + 2)[1:-1]
    outer = np.full(xs.size, np.nan)
    for i, xb in enumerate(xs):
        xl = _recovery_inner(xb, pr)
        if xl is not None:
            outer[i] = recovery_residuals(xl, xb, pr)[1]
    ok = np.isfinite(outer)
    brackets = [i for i in range(xs.size - 1)
                if ok[i] and ok[i + 1] and np.sign(outer[i]) != np.sign(outer[i + 1])]
    if not brackets:
        raise NoRoot("no cutoff pair solves the recovery conditions")
    i = brackets[-1]

    def g(xb):
        return recovery_residuals(_recovery_inner(xb, pr), xb, pr)[1]

    x_bar = brentq(g, xs[i], xs[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    x_low = _recovery_inner(x_bar, pr)
    v0, v1 = recovery_boundary_values(x_low, x_bar, pr)
    return x_low, x_bar, v0, v1, len(brackets)


def _disclosure_x_bar(w: float, pr: ModelParams) -> float:
    """Smooth-pasting cutoff given the value w of a failed inspection."""
    hl = pr.H + pr.L

    def G(x):
        # smooth pasting multiplied through by 1 - x**gamma so it stays finite at x = 1
        g = x ** pr.gamma
        b = x ** pr.rho
        v1_scaled = -pr.L / pr.r * (1.0 - b) + hl * (1.0 - g) / (pr.r + pr.lam) + b * ((1.0 - x) * w - pr.k)
        return (x * (hl * (1.0 - g) - (pr.r + pr.lam) * (v1_scaled - (1.0 - g) * w))
                - (pr.L + pr.r * (w - pr.k)) * (1.0 - g))

    xs = np.linspace(pr.p_dagger, 1.0, 402)[1:-1]
    vals = G(xs)
    idx = np.flatnonzero((vals[:-1] < 0.0) & (vals[1:] >= 0.0))
    if idx.size == 0:
        raise NoRoot(f"no smooth-pasting cutoff for failed-inspection value {w}")
    i = int(idx[-1])
    return brentq(G, xs[i], xs[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


@lru_cache(maxsize=4096)
def _disclosure_principal(key, damping=0.5, tol=1e-10, max_iter=10_000):
    """Damped iteration on the value w of a failed inspection.

    Intermediate iterates may be inadmissible; only the fixed point is checked.
    """
    pr = _keyed_params(key)
    w = 0.0
    for it in range(1, max_iter + 1):
        x_bar = _disclosure_x_bar(w, pr)
        v1 = v1_given_v0(x_bar, w, pr)
        if not v1 > w:
            raise NoRoot("V1 <= V0 during the failed-inspection iteration")
        x0 = critical_points(BoundaryValues(V0=w, V1=v1, U11=0.0, U00=0.0), pr)["x_zero"]
        target = (pr.lam / x0) / (pr.r + pr.lam) * (x0 * v1 - pr.k)
        resid = target - w
        if abs(resid) < tol:
            break
        w = w + damping * resid
    else:
        raise NoRoot(f"failed-inspection value did not settle in {max_iter} iterations")
    bv = BoundaryValues(V0=w, V1=v1, U11=0.0, U00=0.0)
    if not (pr.r + pr.lam) * (v1 - w) < pr.H + pr.L:
        raise NoRoot("boundary values leave the admissible region")
    if eta_bar(pr.p_dagger, bv, pr) < 1.0:
        raise NoRoot("full effort never makes immediate inspection optimal")
    return x_bar, v1, w, x0, it, resid


# ---------------------------------------------------------------------------
# public solvers


def solve_no_inspection(params: ModelParams) -> EquilibriumSolution:
    pr = params
    v1 = float(no_inspection_value(1.0, pr))
    u11 = pr.u / pr.r * (1.0 - pr.p_dagger ** pr.rho)
    return EquilibriumSolution("NoInspection", pr, Cutoffs(),
                               BoundaryValues(V0=0.0, V1=v1, U11=u11, U00=0.0),
                               diagnostics={"equilibrium": True})


def solve_periodic(params: ModelParams) -> EquilibriumSolution:
    pr = params
    try:
        x_bar, v1, x_low = _no_effort_principal(_principal_key(pr))
    except NoRoot:
        return solve_no_inspection(pr)
    u11 = periodic_agent_U11(x_bar, pr)
    bv = BoundaryValues(V0=0.0, V1=v1, U11=u11, U00=0.0)
    diag = {
        "sp_residual": float(no_effort_sp_residual(x_bar, pr)),
        "x_low_times_V1_minus_k": x_low * v1 - pr.k,
        "u_bar_P": u_bar_periodic(x_bar, pr),
        "agent_gap_minus_c_over_lam": u11 - pr.c / pr.lam,
    }
    diag["agent_incentive_ok"] = bool(u11 <= pr.c / pr.lam)
    diag["equilibrium"] = diag["agent_incentive_ok"]
    return EquilibriumSolution("Periodic", pr, Cutoffs(x_low=x_low, x_bar=x_bar), bv, diagnostics=diag)


def _mixing_cutoffs(bv: BoundaryValues, pr: ModelParams, x_bar: float) -> tuple[float, float]:
    pts = critical_points(bv, pr)
    x_star = pts["x_star"]
    if not pr.p_dagger < x_star < x_bar:
        raise NotSupported(f"x*={x_star} outside ({pr.p_dagger}, {x_bar})")
    return x_star, 1.0 + x_bar - x_bar / x_star


def solve_breakdown(params: ModelParams) -> EquilibriumSolution:
    pr = params
    try:
        x_bar, v1, x_low = _no_effort_principal(_principal_key(pr))
    except NoRoot as e:
        raise NotSupported(str(e)) from e
    diag: dict = {}
    try:
        sigma = sigma_star_fixed_point(x_bar, x_low, "breakdown", pr, diag)
    except NoFixedPoint as e:
        raise NotSupported(str(e)) from e
    u11, u00 = (float(v) for v in agent_boundary(sigma, x_bar, x_low, "breakdown", pr))
    bv = BoundaryValues(V0=0.0, V1=v1, U11=u11, U00=u00)
    x_star, _ = _mixing_cutoffs(bv, pr, x_bar)
    sol = EquilibriumSolution("Breakdown", pr, Cutoffs(x_low=x_low, x_bar=x_bar, x_star=x_star),
                              bv, sigma_star=sigma, diagnostics=diag)
    diag["incentive_residual"] = sol.incentive_residual()
    diag["sp_residual"] = float(no_effort_sp_residual(x_bar, pr))
    diag["equilibrium"] = True
    return sol


def recovery_incentive(x_low: float, bv: BoundaryValues, pr: ModelParams) -> dict:
    """Value of quality at p=0 under the two discount conventions for the recovery leg."""
    tau = travel_time(0.0, x_low, "full_effort", pr)
    gap = bv.U11 - bv.U00
    return {"D0_r": math.exp(-pr.r * tau) * gap, "D0_r_lambda": math.exp(-(pr.r + pr.lam) * tau) * gap}


def solve_recovery(params: ModelParams) -> EquilibriumSolution:
    pr = params
    try:
        x_low, x_bar, v0, v1, n_roots = _recovery_principal(_principal_key(pr))
    except NoRoot as e:
        raise NotSupported(str(e)) from e
    bv0 = BoundaryValues(V0=v0, V1=v1, U11=0.0, U00=0.0)
    d = v1 - v0
    if not (d > 0.0 and (pr.r + pr.lam) * d < pr.H + pr.L):
        raise NotSupported("recovery boundary values leave the admissible region")
    x_star, x_zero = _mixing_cutoffs(bv0, pr, x_bar)
    if not (x_low <= x_zero and x_zero >= pr.p_dagger):
        raise NotSupported(f"x0={x_zero} not in [max(x_low, p_dagger), x*)")
    diag: dict = {"outer_root_count": n_roots}
    try:
        sigma = sigma_star_fixed_point(x_bar, x_low, "recovery", pr, diag)
    except NoFixedPoint as e:
        raise NotSupported(str(e)) from e
    u11, u00 = (float(v) for v in agent_boundary(sigma, x_bar, x_low, "recovery", pr))
    bv = BoundaryValues(V0=v0, V1=v1, U11=u11, U00=u00)
    diag.update(recovery_incentive(x_low, bv, pr))
    cl = pr.c / pr.lam
    diag["incentive_ok_r"] = bool(diag["D0_r"] >= cl)
    diag["incentive_ok_r_lambda"] = bool(diag["D0_r_lambda"] >= cl)
    if not diag["incentive_ok_r_lambda"]:
        raise NotSupported(f"value of quality at p=0 ({diag['D0_r_lambda']:.6g}) is below c/lam")
    lo, hi = recovery_residuals(x_low, x_bar, pr)
    diag["residual_lower"] = float(lo)
    diag["residual_upper"] = float(hi)
    pts = critical_points(bv, pr)
    diag["x_zero_from_eta_bar"] = pts["x_zero"]
    diag["x_zero_difference"] = pts["x_zero"] - x_zero
    sol = EquilibriumSolution("Recovery", pr, Cutoffs(x_low, x_bar, x_star, x_zero), bv,
                              sigma_star=sigma, diagnostics=diag)
    diag["incentive_residual"] = sol.incentive_residual()
    diag["equilibrium"] = True
    return sol


def solve_disclosure(params: ModelParams) -> EquilibriumSolution:
    pr = params
    try:
        x_bar, v1, w, x0, iters, resid = _disclosure_principal(_principal_key(pr))
    except NoRoot as e:
        raise NotSupported(str(e)) from e
    bv0 = BoundaryValues(V0=w, V1=v1, U11=0.0, U00=0.0)
    pts = critical_points(bv0, pr)
    x_low = pts["x_low_unit"]
    x_star, x_zero_line = _mixing_cutoffs(bv0, pr, x_bar)
    if not (0.0 < x_low <= x0 and x_low < pr.p_dagger):
        raise NotSupported(f"lower cutoff {x_low} not in (0, min(x0, p_dagger))")
    if not x0 < x_star:
        raise NotSupported("x0 must lie below x*")
    diag: dict = {"fixed_point_iterations": iters, "fixed_point_residual": resid,
                  "x_zero_from_line": x_zero_line, "x_zero_difference": x0 - x_zero_line}
    try:
        sigma = sigma_star_fixed_point(x_bar, None, "disclosure", pr, diag)
    except NoFixedPoint as e:
        raise NotSupported(str(e)) from e
    u11, u00 = (float(v) for v in agent_boundary(sigma, x_bar, None, "disclosure", pr))
    bv = BoundaryValues(V0=w, V1=v1, U11=u11, U00=u00)
    cl = pr.c / pr.lam
    diag["D0"] = u11 - u00
    diag["D0_without_effort_cost"] = pr.r / (pr.r + pr.lam) * u11
    if not diag["D0"] >= cl:
        raise NotSupported(f"value of quality at p=0 ({diag['D0']:.6g}) is below c/lam")
    sol = EquilibriumSolution("Disclosure", pr, Cutoffs(x_low, x_bar, x_star, x0), bv,
                              sigma_star=sigma, reporting=ReportingRule(x0, x_low, pr.lam),
                              diagnostics=diag)
    diag["incentive_residual"] = sol.incentive_residual()
    diag["value_jump_at_x_low"] = float(pr.k * (1.0 - x_low / x0))
    diag["equilibrium"] = True
    return sol


SOLVERS = {
    "Periodic": solve_periodic,
    "Breakdown": solve_breakdown,
    "Recovery": solve_recovery,
    "Disclosure": solve_disclosure,
}


def solve_all(params: ModelParams) -> dict[str, EquilibriumSolution]:
    """Every class that is an equilibrium at these parameters, keyed by class name."""
    out: dict[str, EquilibriumSolution] = {}
    per = solve_periodic(params)
    if per.cls == "NoInspection":
        out["NoInspection"] = per
    elif per.diagnostics["equilibrium"]:
        out["Periodic"] = per
    for name in ("Breakdown", "Recovery", "Disclosure"):
        try:
            out[name] = SOLVERS[name](params)
        except NotSupported:
            pass
    if not out:
        # inspection would pay off but no class sustains it; zero effort and no inspections remains
        out["NoInspection"] = solve_no_inspection(params)
    return out


# ---------------------------------------------------------------------------
# existence thresholds in u


def u_bar_periodic(x_bar: float, params: ModelParams) -> float:
    pr = params
    return pr.c / pr.lam * pr.r * (1.0 - x_bar ** pr.gamma) / (1.0 - x_bar ** pr.rho)


def _bisect_u(pred, params: ModelParams, lo: float, hi: float, tol=1e-12):
    """Smallest u in [lo, hi] with pred(u) true, assuming pred is monotone."""
    if pred(lo):
        log.warning("threshold search: predicate already holds at the lower end u=%g", lo)
        return lo, "lower_end_binds"
    while not pred(hi):
        hi *= 2.0
        if hi > 1e8 * params.c:
            return None, "not_found"
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi, "ok"


@dataclass
class Thresholds:
    u_bar_P: float | None
    u_low_B: float | None
    u_low_R_r: float | None
    u_low_R_rl: float | None
    notes: dict = field(default_factory=dict)

    @property
    def u_low_R(self) -> float | None:
        """Conservative recovery threshold used for existence flags."""
        vals = [v for v in (self.u_low_R_r, self.u_low_R_rl) if v is not None]
        return max(vals) if len(vals) == 2 else None


def thresholds(params: ModelParams, k: float | None = None) -> Thresholds:
    """Approval-utility thresholds at cost k; the u of ``params`` is ignored."""
    base = params if k is None else ModelParams(**{**params.as_dict(), "k": float(k)})
    key = _principal_key(base)
    # thresholds are defined over all u > 0, not only where effort can pay off
    lo, hi = base.c * base.r / base.lam * 1e-6, 1e4 * base.c
    notes: dict = {}

    def with_u(u):
        return ModelParams(**{**base.as_dict(), "u": u})

    try:
        x_bar, v1, x_low = _no_effort_principal(key)
    except NoRoot:
        return Thresholds(None, None, None, None, {"no_effort_cutoff": "none"})
    u_bar_P = u_bar_periodic(x_bar, base)

    def breakdown_ok(u):
        try:
            sigma_star_fixed_point(x_bar, x_low, "breakdown", with_u(u))
            return True
        except NoFixedPoint:
            return False

    u_low_B, notes["u_low_B"] = _bisect_u(breakdown_ok, base, lo, hi)

    u_low_R = {}
    try:
        rx_low, rx_bar, v0, v1r, _ = _recovery_principal(key)
        bv0 = BoundaryValues(V0=v0, V1=v1r, U11=0.0, U00=0.0)
        _, x_zero = _mixing_cutoffs(bv0, base, rx_bar)
        feasible = rx_low <= x_zero and x_zero >= base.p_dagger
    except (NoRoot, NotSupported):
        feasible = False
    for tag in ("D0_r", "D0_r_lambda"):
        if not feasible:
            u_low_R[tag], notes["u_low_R_" + tag] = None, "recovery_cutoffs_infeasible"
            continue

        def recovery_ok(u, tag=tag):
            pu = with_u(u)
            try:
                s = sigma_star_fixed_point(rx_bar, rx_low, "recovery", pu)
            except NoFixedPoint:
                return False
            u11, u00 = agent_boundary(s, rx_bar, rx_low, "recovery", pu)
            bv = BoundaryValues(V0=v0, V1=v1r, U11=float(u11), U00=float(u00))
            return recovery_incentive(rx_low, bv, pu)[tag] >= pu.c / pu.lam

        u_low_R[tag], notes["u_low_R_" + tag] = _bisect_u(recovery_ok, base, lo, hi)
    return Thresholds(u_bar_P, u_low_B, u_low_R["D0_r"], u_low_R["D0_r_lambda"], notes)


# ---------------------------------------------------------------------------
# existence map


@dataclass
class ExistenceCell:
    k: float
    u: float
    periodic_exists: bool
    breakdown_exists: bool
    recovery_exists: bool
    disclosure_exists: bool
    thresholds: Thresholds


def _flags(params: ModelParams) -> dict[str, bool]:
    sols = solve_all(params)
    return {name: name in sols for name in ("Periodic", "Breakdown", "Recovery", "Disclosure")}


def _column(params: ModelParams, k: float, u_grid) -> list[ExistenceCell]:
    th = thresholds(params, k)
    cells = []
    for u in u_grid:
        try:
            pr = ModelParams(**{**params.as_dict(), "k": float(k), "u": float(u)})
            validate_params(**pr.as_dict())
            f = _flags(pr)
        except ModelError:
            f = dict.fromkeys(("Periodic", "Breakdown", "Recovery", "Disclosure"), False)
        cells.append(ExistenceCell(float(k), float(u), f["Periodic"], f["Breakdown"],
                                   f["Recovery"], f["Disclosure"], th))
    return cells


def existence_map(params: ModelParams, k_grid, u_grid, workers: int = 1) -> list[ExistenceCell]:
    """One cell per (k, u), ordered k-major.  ``params`` supplies H, L, c, lam, r."""
    k_grid = [float(k) for k in k_grid]
    u_grid = [float(u) for u in u_grid]
    for name, grid in (("k", k_grid), ("u", u_grid)):
        if any(g <= 0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"{name} grid must be positive and strictly increasing")
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            cols = list(ex.map(_column, [params] * len(k_grid), k_grid, [u_grid] * len(k_grid)))
    else:
        cols = [_column(params, k, u_grid) for k in k_grid]
    return [cell for col in cols for cell in col]


def map_diagnostics(cells: list[ExistenceCell]) -> dict:
    """Structure checks across the map: monotone flags, threshold orderings, witnesses."""
    ks = sorted({c.k for c in cells})
    us = sorted({c.u for c in cells})
    grid = {(c.k, c.u): c for c in cells}
    out = {"breakdown_monotone_in_u": True, "u_low_B_below_u_bar_P": True,
           "u_low_B_below_u_low_R": True, "u_bar_P_decreasing_in_k": True,
           "u_low_B_decreasing_in_k": True, "violations": [], "witnesses": []}

    for k in ks:
        flags = [grid[(k, u)].breakdown_exists for u in us]
        if any(a and not b for a, b in zip(flags, flags[1:])):
            out["breakdown_monotone_in_u"] = False
            out["violations"].append({"check": "breakdown_monotone_in_u", "k": k})
        th = grid[(k, us[0])].thresholds
        if th.u_low_B is not None and th.u_bar_P is not None and not th.u_low_B < th.u_bar_P:
            out["u_low_B_below_u_bar_P"] = False
            out["violations"].append({"check": "u_low_B_below_u_bar_P", "k": k})
        if th.u_low_B is not None and th.u_low_R is not None and not th.u_low_B < th.u_low_R:
            out["u_low_B_below_u_low_R"] = False
            out["violations"].append({"check": "u_low_B_below_u_low_R", "k": k})

    for k_small, k_big in zip(ks, ks[1:]):
        a = grid[(k_small, us[0])].thresholds
        b = grid[(k_big, us[0])].thresholds
        for attr, key in (("u_bar_P", "u_bar_P_decreasing_in_k"), ("u_low_B", "u_low_B_decreasing_in_k")):
            va, vb = getattr(a, attr), getattr(b, attr)
            if va is not None and vb is not None and not va > vb:
                out[key] = False
                out["violations"].append({"check": key, "k_small": k_small, "k_big": k_big})

    # breakdown exists at the larger cost but not at the smaller one
    for i, k_small in enumerate(ks):
        for k_big in ks[i + 1:]:
            for u in us:
                if grid[(k_big, u)].breakdown_exists and not grid[(k_small, u)].breakdown_exists:
                    out["witnesses"].append({"k": k_big, "k_prime": k_small, "u": u})

    feasible_B = [k for k in ks if any(grid[(k, u)].breakdown_exists for u in us)]
    feasible_R = [k for k in ks if any(grid[(k, u)].recovery_exists for u in us)]
    out["k_B_empirical"] = max(feasible_B) if feasible_B else None
    out["k_R_empirical"] = max(feasible_R) if feasible_R else None
    return out


# ---------------------------------------------------------------------------
# structural invariants


def structural_invariants(sol: EquilibriumSolution, h: float = 1e-6) -> dict:
    """Residuals of the boundary conditions and cutoff identities of a solution.

    Slopes at a cutoff are central differences of the closed-form piece that
    lives on the far side of the cutoff, extended analytically across it.  A
    central difference straddling the cutoff mixes two pieces whose second
    derivatives differ, which alone costs about |V''| h / 4; that number is
    reported too as ``*_straddling``.
    """
    pr, c, bv = sol.params, sol.cutoffs, sol.bv
    spread = bv.V1 - bv.V0
    out: dict = {"class": sol.cls}
    if sol.cls == "NoInspection":
        return out
    xb, xl = c.x_bar, c.x_low

    order = [xl, xb]
    if sol.cls == "Breakdown":
        order = [xl, pr.p_dagger, c.x_star, xb]
    elif sol.cls in ("Recovery", "Disclosure"):
        order = [xl, c.x_zero, c.x_star, xb]
        out["p_dagger_below_x_zero"] = bool(pr.p_dagger <= c.x_zero)
    out["cutoff_ordering"] = bool(all(a < b for a, b in zip(order, order[1:])) and 0 < xl and xb < 1)

    def upper(p):
        return upper_value(p, xb, bv, pr)

    out["value_match_x_bar"] = abs(float(upper(xb) - sol.phi(xb)))
    out["smooth_pasting_x_bar"] = abs((float(upper(xb + h)) - float(upper(xb - h))) / (2 * h) - spread)
    out["smooth_pasting_x_bar_straddling"] = abs(
        (float(sol.value(xb + h)) - float(sol.value(xb - h))) / (2 * h) - spread)

    if sol.cls in ("Periodic", "Breakdown"):
        # failure is absorbing: value matching only, the slope jumps from 0 to the spread
        out["value_match_x_low"] = abs(float(sol.phi(xl)))
        out["slope_jump_x_low"] = spread
    elif sol.cls == "Recovery":
        def lower(p):
            return ((1.0 - xl) / (1.0 - p)) ** pr.rho * float(sol.phi(xl))

        below = float(sol.value(np.nextafter(xl, 0.0)))
        out["value_match_x_low"] = abs(below - float(sol.phi(xl)))
        out["smooth_pasting_x_low"] = abs((lower(xl + h) - lower(xl - h)) / (2 * h) - spread)
    elif sol.cls == "Disclosure":
        below = float(sol.value(np.nextafter(xl, 0.0)))
        jump = below - float(sol.phi(xl))
        out["value_jump_x_low"] = jump
        out["value_jump_formula_error"] = abs(jump - pr.k * (1.0 - xl / c.x_zero))

    if sol.cls in ("Recovery", "Disclosure"):
        out["x_zero_formula"] = abs(c.x_zero - (1.0 + xb - xb / c.x_star))
    if sol.sigma_star is not None:
        lo = c.x_star if sol.cls == "Breakdown" else c.x_zero
        p = np.linspace(lo, xb, 201)
        out["eta_bar_vs_linear_effort"] = float(np.max(np.abs(
            eta_bar(p, bv, pr) - mixing_effort(p, c.x_star, xb))))
        out["incentive_residual"] = abs(sol.incentive_residual())
    return out
