"""Discrete-time grid oracle for fixed strategy profiles.

A profile is evaluated by a semi-Lagrangian scheme: over a step dt the belief
moves by an Euler step of its drift and lands between two nodes, where
continuation values are interpolated linearly.  Event probabilities over the
step use exact exponential clocks.  Nodes with immediate inspection or a
report lottery have zero dwell time and simply point at the values they
jump to.

The discounted evaluation is a linear system.  It is solved directly with a
sparse LU by default; ``method="iterate"`` runs the Jacobi sweeps instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .equilibrium_solver import EquilibriumSolution
from .model_core import ModelError, ModelParams, flow_value


class StepTooCoarse(ModelError):
    pass


class NoConvergence(ModelError):
    pass


@dataclass
class GridModel:
    params: ModelParams
    dt: float
    p: np.ndarray
    marks: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def discount(self) -> float:
        return math.exp(-self.params.r * self.dt)

    @property
    def dp(self) -> float:
        return float(np.max(np.diff(self.p)))

    def node(self, x: float) -> int:
        i = int(np.argmin(np.abs(self.p - x)))
        if abs(self.p[i] - x) > 1e-14:
            raise KeyError(f"{x} is not a grid node")
        return i

    def interp_weights(self, q: np.ndarray):
        """Left node index and weight on the right node for points q in [0, 1]."""
        q = np.clip(q, 0.0, 1.0)
        j = np.clip(np.searchsorted(self.p, q, side="right") - 1, 0, self.n - 2)
        w = (q - self.p[j]) / (self.p[j + 1] - self.p[j])
        return j, np.clip(w, 0.0, 1.0)


@dataclass
class GridProfile:
    """Markov strategies on the grid.

    ``sigma`` is the inspection hazard with ``inf`` for immediate inspection.
    Reporting (disclosure only): ``report_low`` is the probability that a low
    agent reports at a lottery node (NaN where there is no lottery), and
    ``report_rate0`` the false-report hazard at p = 0.
    """

    eta: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    report_low: np.ndarray | None = None
    report_rate0: float = 0.0
    report_target: float | None = None

    def __post_init__(self):
        if np.any((self.eta < 0) | (self.eta > 1)):
            raise ValueError("effort must lie in [0, 1]")
        if np.any(self.sigma < 0):
            raise ValueError("hazard must be nonnegative")
        if not np.all(np.isin(self.alpha, (0, 1))):
            raise ValueError("approval must be 0 or 1")

    @property
    def immediate(self) -> np.ndarray:
        return np.isinf(self.sigma)

    @property
    def lottery(self) -> np.ndarray:
        if self.report_low is None:
            return np.zeros(self.eta.size, dtype=bool)
        return np.isfinite(self.report_low)


def build_grid(params: ModelParams, n_nodes: int, dt: float, cutoffs=(), max_hazard: float = 0.0) -> GridModel:
    """Uniform grid with 0, 1, the approval threshold and any cutoffs as exact nodes.

    A required point replaces the nearest uniform node when it falls within a
    quarter spacing of it, so spacing stays close to uniform.
    """
    if n_nodes < 101:
        raise ValueError("n_nodes must be at least 101")
    if params.lam * dt >= 0.1:
        raise StepTooCoarse(f"lam*dt = {params.lam * dt:.3g} must be below 0.1")
    if max_hazard * dt >= 0.5:
        raise StepTooCoarse(f"hazard*dt = {max_hazard * dt:.3g} must be below 0.5")
    p = np.linspace(0.0, 1.0, n_nodes)
    h = 1.0 / (n_nodes - 1)
    marks = {"p_dagger": params.p_dagger}
    for name, x in dict(cutoffs).items():
        if x is not None:
            marks[name] = float(x)
    extra = []
    for x in marks.values():
        i = int(np.argmin(np.abs(p - x)))
        if 0 < i < n_nodes - 1 and abs(p[i] - x) < 0.25 * h:
            p[i] = x
        elif abs(p[i] - x) > 0.0:
            extra.append(x)
    p = np.unique(np.concatenate([p, extra]))
    return GridModel(params, dt, p, marks)


def grid_for_solution(sol: EquilibriumSolution, n_nodes: int, dt: float) -> GridModel:
    c = sol.cutoffs
    cut = {"x_low": c.x_low, "x_zero": c.x_zero, "x_star": c.x_star, "x_bar": c.x_bar}
    hz = sol.sigma_star or 0.0
    if sol.reporting is not None:
        hz = max(hz, sol.reporting.total_rate)
    return build_grid(sol.params, n_nodes, dt, cut, hz)


def profile_from_solution(sol: EquilibriumSolution, grid: GridModel) -> GridProfile:
    p = grid.p
    eta = np.asarray(sol.effort(p), dtype=float)
    sigma = np.asarray(sol.hazard(p), dtype=float)
    alpha = np.asarray(sol.approval(p), dtype=int)
    if sol.reporting is None:
        return GridProfile(eta, sigma, alpha)
    rep = sol.reporting
    report_low = np.full(p.size, np.nan)
    inside = (p > 0.0) & (p < rep.x_low)
    report_low[inside] = rep.report_prob(p[inside], 0)
    return GridProfile(eta, sigma, alpha, report_low, rep.false_rate, rep.x_zero)


# ---------------------------------------------------------------------------


@dataclass
class _Operator:
    """x = M x + b for the stacked unknowns [V, U0, U1]."""

    M: sp.csr_matrix
    b: np.ndarray
    n: int


def _drift_targets(grid: GridModel, prof: GridProfile) -> np.ndarray:
    lam = grid.params.lam
    q = grid.p + lam * (prof.eta - grid.p) * grid.dt
    if prof.report_low is not None:
        # without a report the belief at 0 stays put
        q[0] = 0.0
    return q


def _assemble(grid: GridModel, prof: GridProfile, agent_eta=None) -> _Operator:
    """Build the evaluation operator.

    ``agent_eta`` = (effort when low, effort when high) replaces the agent's
    own effort without changing what the principal believes.
    """
    pr = grid.params
    n = grid.n
    p = grid.p
    dt = grid.dt
    beta = grid.discount
    tau = (1.0 - beta) / pr.r
    eta0, eta1 = (prof.eta, prof.eta) if agent_eta is None else agent_eta
    iV, iU0, iU1 = 0, n, 2 * n
    last = n - 1

    rows, cols, vals = [], [], []
    b = np.zeros(3 * n)

    def add(r_idx, c_idx, v):
        r_idx = np.atleast_1d(r_idx)
        rows.append(r_idx)
        cols.append(np.broadcast_to(c_idx, r_idx.shape))
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r_idx.shape))

    imm = prof.immediate
    lot = prof.lottery
    dwell = ~(imm | lot)
    disclosure = prof.report_low is not None
    x0_node = grid.node(prof.report_target) if disclosure else None

    # immediate inspection
    idx = np.flatnonzero(imm)
    add(iV + idx, iV + last, p[idx])
    add(iV + idx, iV + 0, 1.0 - p[idx])
    b[iV + idx] = -pr.k
    add(iU0 + idx, iU0 + 0, 1.0)
    add(iU1 + idx, iU1 + last, 1.0)

    # report lotteries
    idx = np.flatnonzero(lot)
    if idx.size:
        q = prof.report_low[idx]
        x0 = prof.report_target
        add(iV + idx, iV + x0_node, p[idx] / x0)
        add(iV + idx, iV + 0, 1.0 - p[idx] / x0)
        add(iU1 + idx, iU1 + x0_node, 1.0)
        add(iU0 + idx, iU0 + x0_node, q)
        add(iU0 + idx, iU0 + 0, 1.0 - q)

    # dwell nodes
    idx = np.flatnonzero(dwell)
    j, w = grid.interp_weights(_drift_targets(grid, prof)[idx])
    pi_s = -np.expm1(-prof.sigma[idx] * dt)
    stay = beta * (1.0 - pi_s)
    pi_r = np.zeros(idx.size)
    pf = np.zeros(idx.size)
    if disclosure:
        pi_r[idx == 0] = -np.expm1(-(pr.lam / prof.report_target) * dt)
        pf[idx == 0] = -np.expm1(-prof.report_rate0 * dt)
    approved = prof.alpha[idx]

    b[iV + idx] = approved * flow_value(p[idx], pr) * tau - beta * pi_s * pr.k
    add(iV + idx, iV + last, beta * pi_s * p[idx])
    add(iV + idx, iV + 0, beta * pi_s * (1.0 - p[idx]))
    add(iV + idx, iV + j, stay * (1.0 - pi_r) * (1.0 - w))
    add(iV + idx, iV + j + 1, stay * (1.0 - pi_r) * w)
    if disclosure:
        add(iV + idx, iV + x0_node, stay * pi_r)

    lam_dt = pr.lam * dt
    # high state; under disclosure a high agent at 0 reports at once
    i1 = idx if not disclosure else idx[idx != 0]
    sel = np.isin(idx, i1)
    e1 = eta1[i1]
    down = -np.expm1(-lam_dt * (1.0 - e1))
    b[iU1 + i1] = (pr.u * prof.alpha[i1] - pr.c * e1) * tau
    add(iU1 + i1, iU1 + last, beta * pi_s[sel])
    add(iU1 + i1, iU1 + j[sel], stay[sel] * (1.0 - down) * (1.0 - w[sel]))
    add(iU1 + i1, iU1 + j[sel] + 1, stay[sel] * (1.0 - down) * w[sel])
    add(iU1 + i1, iU0 + j[sel], stay[sel] * down * (1.0 - w[sel]))
    add(iU1 + i1, iU0 + j[sel] + 1, stay[sel] * down * w[sel])
    if disclosure:
        add(iU1 + 0, iU1 + x0_node, 1.0)

    # low state
    e0 = eta0[idx]
    up = -np.expm1(-lam_dt * e0)
    keep = stay * (1.0 - pf)
    b[iU0 + idx] = (pr.u * approved - pr.c * e0) * tau
    add(iU0 + idx, iU0 + 0, beta * pi_s)
    add(iU0 + idx, iU0 + j, keep * (1.0 - up) * (1.0 - w))
    add(iU0 + idx, iU0 + j + 1, keep * (1.0 - up) * w)
    add(iU0 + idx, iU1 + j, keep * up * (1.0 - w))
    add(iU0 + idx, iU1 + j + 1, keep * up * w)
    if disclosure:
        add(iU0 + idx, iU0 + x0_node, stay * pf)

    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(3 * n, 3 * n))
    return _Operator(M, b, n)


@dataclass
class Evaluation:
    V: np.ndarray
    U0: np.ndarray
    U1: np.ndarray
    iterations: int = 0
    sweep_ratios: np.ndarray | None = None


def policy_evaluate(grid: GridModel, prof: GridProfile, method: str = "direct",
                    tol: float = 1e-12, max_iter: int = 1_000_000, agent_eta=None) -> Evaluation:
    op = _assemble(grid, prof, agent_eta)
    n = op.n
    if method == "direct":
        A = sp.identity(3 * n, format="csr") - op.M
        x = spsolve(A.tocsc(), op.b)
        return Evaluation(x[:n], x[n:2 * n], x[2 * n:])
    if method != "iterate":
        raise ValueError(f"unknown method {method!r}")
    x = np.zeros(3 * n)
    ratios = []
    prev = None
    for it in range(1, max_iter + 1):
        x_new = op.M @ x + op.b
        diff = float(np.max(np.abs(x_new - x)))
        if prev is not None and prev > 0:
            ratios.append(diff / prev)
        prev = diff
        x = x_new
        if diff < tol:
            return Evaluation(x[:n], x[n:2 * n], x[2 * n:], it, np.array(ratios))
    raise NoConvergence(f"no convergence after {max_iter} sweeps (last change {prev:.3g})")


def apply_operator(grid: GridModel, prof: GridProfile, V, U0, U1):
    """One application of the evaluation operator to given node values."""
    op = _assemble(grid, prof)
    x = op.M @ np.concatenate([V, U0, U1]) + op.b
    n = op.n
    return x[:n], x[n:2 * n], x[2 * n:]


# ---------------------------------------------------------------------------
# deviation audit

MENU = (0.0, 0.5, 1.0)


@dataclass
class Gaps:
    agent_gap: float
    principal_gap: float
    agent_one_step: float
    bound: float
    agent_argmax: tuple
    principal_argmax: float
    flags: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.agent_gap <= self.bound and self.principal_gap <= self.bound


def gap_bound(grid: GridModel) -> float:
    pr = grid.params
    return 10.0 * (grid.dt + grid.dp) * max(pr.H, pr.L, pr.u)


def _agent_q(grid: GridModel, prof: GridProfile, ev: Evaluation, e: float):
    """One-step agent values at every node if effort e is used over the next step."""
    pr = grid.params
    dt, beta = grid.dt, grid.discount
    tau = (1.0 - beta) / pr.r
    j, w = grid.interp_weights(_drift_targets(grid, prof))
    U0n = ev.U0[j] * (1 - w) + ev.U0[j + 1] * w
    U1n = ev.U1[j] * (1 - w) + ev.U1[j + 1] * w
    pi_s = np.where(np.isinf(prof.sigma), 1.0, -np.expm1(-np.where(np.isinf(prof.sigma), 0.0, prof.sigma) * dt))
    flow = (pr.u * prof.alpha - pr.c * e) * tau
    down = -np.expm1(-pr.lam * dt * (1.0 - e))
    up = -np.expm1(-pr.lam * dt * e)
    q1 = flow + beta * (pi_s * ev.U1[-1] + (1 - pi_s) * ((1 - down) * U1n + down * U0n))
    cont0 = (1 - up) * U0n + up * U1n
    if prof.report_low is not None:
        pf = -np.expm1(-prof.report_rate0 * dt)
        cont0[0] = (1 - pf) * cont0[0] + pf * ev.U0[grid.node(prof.report_target)]
    q0 = flow + beta * (pi_s * ev.U0[0] + (1 - pi_s) * cont0)
    return q0, q1


def deviation_gap(grid: GridModel, prof: GridProfile, ev: Evaluation | None = None,
                  max_rounds: int = 100) -> Gaps:
    """Audit both players against deviations.

    Principal: inspect now, or wait one step without inspecting under the
    better approval decision.  Agent: the one-step advantage of the best
    effort in {0, 1/2, 1}, and the gain from the best stationary deviation
    over that menu, state by state (policy iteration with the principal's
    strategy and beliefs held fixed).  The stationary gain is the one
    certified; a one-step advantage is O(dt) for any profile.
    """
    pr = grid.params
    if ev is None:
        ev = policy_evaluate(grid, prof)
    p = grid.p
    dwell = ~(prof.immediate | prof.lottery)
    dwell1 = dwell.copy()
    if prof.report_low is not None:
        dwell1[0] = False  # a high agent at 0 reports at once
    menu = np.array(MENU)

    qs = [_agent_q(grid, prof, ev, e) for e in MENU]
    one0 = np.where(dwell, np.max([q[0] for q in qs], axis=0) - ev.U0, 0.0)
    one1 = np.where(dwell1, np.max([q[1] for q in qs], axis=0) - ev.U1, 0.0)
    agent_one_step = float(max(one0.max(), one1.max(), 0.0))

    dev0, dev1 = prof.eta.copy(), prof.eta.copy()
    cur = ev
    for _ in range(max_rounds):
        qs = [_agent_q(grid, prof, cur, e) for e in MENU]
        q0 = np.array([q[0] for q in qs])
        q1 = np.array([q[1] for q in qs])
        # keep the current action unless another is strictly better
        tol = 1e-13
        cur0 = np.array([np.isclose(dev0, e) for e in MENU])
        cur1 = np.array([np.isclose(dev1, e) for e in MENU])
        best0 = menu[np.argmax(q0 + tol * cur0, axis=0)]
        best1 = menu[np.argmax(q1 + tol * cur1, axis=0)]
        new0 = np.where(dwell, best0, dev0)
        new1 = np.where(dwell1, best1, dev1)
        if np.array_equal(new0, dev0) and np.array_equal(new1, dev1):
            break
        dev0, dev1 = new0, new1
        cur = policy_evaluate(grid, prof, agent_eta=(dev0, dev1))
    gain = np.maximum(cur.U0 - ev.U0, cur.U1 - ev.U1)
    agent_gap = float(max(gain.max(), 0.0))

    dt, beta = grid.dt, grid.discount
    tau = (1.0 - beta) / pr.r
    inspect = p * ev.V[-1] + (1 - p) * ev.V[0] - pr.k
    j, w = grid.interp_weights(_drift_targets(grid, prof))
    cont = ev.V[j] * (1 - w) + ev.V[j + 1] * w
    if prof.report_low is not None:
        pr0 = -np.expm1(-(pr.lam / prof.report_target) * dt)
        cont[0] = (1 - pr0) * cont[0] + pr0 * ev.V[grid.node(prof.report_target)]
    wait = np.maximum(flow_value(p, pr), 0.0) * tau + beta * cont
    adv = np.where(prof.lottery, 0.0, np.maximum(inspect, wait) - ev.V)
    principal_gap = float(max(adv.max(), 0.0))

    flags = {}
    c = grid.marks.get("x_low")
    if c is not None:
        i = grid.node(c) - 1
        if i >= 0:
            flags["below_x_low_principal_adv"] = float(adv[i])
            flags["below_x_low_agent_adv"] = float(max(one0[i], one1[i]))
    return Gaps(agent_gap, principal_gap, agent_one_step, gap_bound(grid),
                (float(p[int(np.argmax(gain))]),), float(p[int(np.argmax(adv))]), flags)


# ---------------------------------------------------------------------------
# comparison helpers


@dataclass
class OracleComparison:
    n_nodes: int
    dt: float
    err_V: float
    err_U: float
    gaps: Gaps

    @property
    def err(self) -> float:
        return max(self.err_V, self.err_U)


def compare_with_solution(sol: EquilibriumSolution, n_nodes: int, dt: float) -> OracleComparison:
    grid = grid_for_solution(sol, n_nodes, dt)
    prof = profile_from_solution(sol, grid)
    ev = policy_evaluate(grid, prof)
    p = grid.p
    err_V = float(np.max(np.abs(ev.V - sol.value(p))))
    err_U = float(max(np.max(np.abs(ev.U0 - sol.agent_value(p, 0))),
                      np.max(np.abs(ev.U1 - sol.agent_value(p, 1)))))
    return OracleComparison(grid.n, dt, err_V, err_U, deviation_gap(grid, prof, ev))


def breakdown_without_inspection(sol: EquilibriumSolution, grid: GridModel) -> GridProfile:
    """Negative control: breakdown effort but the principal never inspects."""
    prof = profile_from_solution(sol, grid)
    return GridProfile(prof.eta, np.zeros_like(prof.sigma), prof.alpha)


def effort_on_blind_trust(sol: EquilibriumSolution, grid: GridModel) -> GridProfile:
    """Negative control: full effort where the agent should rest."""
    prof = profile_from_solution(sol, grid)
    eta = np.where(grid.p > sol.cutoffs.x_bar, 1.0, prof.eta)
    return GridProfile(eta, prof.sigma, prof.alpha, prof.report_low, prof.report_rate0, prof.report_target)
