"""Event-driven Monte Carlo of equilibrium play.

Paths are advanced in lockstep, one segment per iteration, with numpy arrays
over all live paths.  Between events the belief follows its closed-form path
and discounted flows are integrated exactly.  Quality switches on the mixing
region, where effort varies along the path, are drawn by thinning against the
bound ``lam``.

Random numbers come from a counter-based generator: draw j of segment s on
path i is a SplitMix64 hash of (seed, i, s, j).  A path's draws do not depend
on which other paths share its batch, so serial, chunked and parallel runs
give bit-identical results.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .equilibrium_solver import EquilibriumSolution
from .model_core import ModelError


class HorizonTooShort(ModelError):
    pass


# region codes
BT, MIX, INSPECT, REC, DISC0, DEAD, LOT = range(7)

EVENT_KINDS = ("transition", "inspection", "report", "region_cross", "absorb")
_TRANSITION, _INSPECTION, _REPORT, _CROSS, _ABSORB = range(5)

_DRAWS_PER_STEP = 4


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    horizon: float | None = None
    seed: int = 0
    record_paths: bool = False
    truncation_policy: str = "analytic_tail"
    tail_bound: float = 1e-6
    workers: int = 1
    chunk_size: int = 8192

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.truncation_policy not in ("analytic_tail", "hard_cut"):
            raise ValueError(f"unknown truncation policy {self.truncation_policy!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be positive")

    def horizon_for(self, r: float) -> float:
        return 20.0 / r if self.horizon is None else float(self.horizon)


class Event(NamedTuple):
    """One logged event.  ``theta`` is the left limit, quality just before the event."""

    t: float
    kind: str
    p_before: float
    p_after: float
    theta: int


@dataclass
class PathRecord:
    events: list
    agent_payoff: float
    principal_payoff: float
    inspections_count: int
    time_in_regions: tuple
    path_id: int = 0
    start: tuple = (1.0, 1)
    end_state: tuple = (0.0, 0.0, 0)
    tail: tuple = (0.0, 0.0)
    absorbed: bool = False


# ---------------------------------------------------------------------------
# counter-based uniforms

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def path_keys(seed: int, path_ids) -> np.ndarray:
    ids = np.asarray(path_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        s = _mix(np.array([seed], dtype=np.uint64) + _GOLDEN)
        return _mix(s ^ _mix(ids * _GOLDEN + _GOLDEN))


def uniforms(keys: np.ndarray, counter, width: int) -> np.ndarray:
    """Uniforms on [0, 1) of shape (len(keys), width) for the given counters."""
    ctr = np.asarray(counter, dtype=np.uint64).reshape(-1, 1) * np.uint64(width) \
        + np.arange(1, width + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(keys.reshape(-1, 1) + ctr * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# geometry of a solution


@dataclass(frozen=True)
class _Geometry:
    cls: str
    lam: float
    r: float
    H: float
    L: float
    u: float
    c: float
    k: float
    p_dagger: float
    x_top: float  # exit of blind trust
    x_low: float
    x_star: float
    x_bar: float
    x_zero: float
    sigma: float
    kappa: float

    @classmethod
    def of(cls, sol: EquilibriumSolution) -> "_Geometry":
        pr, ct = sol.params, sol.cutoffs
        nan = float("nan")
        x_bar = ct.x_bar if ct.x_bar is not None else pr.p_dagger
        x_star = ct.x_star if ct.x_star is not None else nan
        kappa = pr.lam * x_bar / (x_bar - x_star) if ct.x_star is not None else nan
        return cls(sol.cls, pr.lam, pr.r, pr.H, pr.L, pr.u, pr.c, pr.k, pr.p_dagger,
                   x_bar, ct.x_low if ct.x_low is not None else nan, x_star, x_bar,
                   ct.x_zero if ct.x_zero is not None else nan,
                   sol.sigma_star if sol.sigma_star is not None else nan, kappa)

    def region(self, p: float, theta: int) -> int:
        g = self
        if g.cls == "NoInspection":
            return BT if p > g.p_dagger else DEAD
        if p > g.x_bar:
            return BT
        if g.cls == "Periodic":
            if p >= g.x_low:
                return INSPECT
        elif g.cls == "Breakdown":
            if p >= g.x_star:
                return MIX
            if p >= g.x_low:
                return INSPECT
        else:
            if p > g.x_zero:
                return MIX
            if p >= g.x_low:
                return INSPECT
            if g.cls == "Recovery":
                return REC
            return DISC0 if p == 0.0 else LOT
        if p == 0.0 or p < min(g.x_low, g.p_dagger):
            return DEAD
        raise ValueError(f"start at p={p} is off the simulated state space")

    def after_failure(self) -> int:
        return {"Recovery": REC, "Disclosure": DISC0}.get(self.cls, DEAD)


def _disc_integral(a, b, mu, r, d):
    """Integral of e^(-r s) (a + b e^(-mu s)) over [0, d]."""
    return a * (-np.expm1(-r * d)) / r + b * (-np.expm1(-(r + mu) * d)) / (r + mu)


def _exp_draw(u, rate):
    with np.errstate(divide="ignore"):
        return -np.log1p(-u) / rate


# ---------------------------------------------------------------------------
# batch simulation


@dataclass
class _Batch:
    path_ids: np.ndarray
    agent: np.ndarray
    principal: np.ndarray
    inspections: np.ndarray
    regions: np.ndarray
    absorbed: np.ndarray
    t_end: np.ndarray
    p_end: np.ndarray
    theta_end: np.ndarray
    tail_agent: np.ndarray
    tail_principal: np.ndarray
    p0: np.ndarray
    theta0: np.ndarray
    events: dict | None


def _simulate_batch(sol: EquilibriumSolution, cfg: SimConfig, path_ids: np.ndarray,
                    p0: float, theta0) -> _Batch:
    g = _Geometry.of(sol)
    T = cfg.horizon_for(g.r)
    n = path_ids.size
    keys = path_keys(int(cfg.seed), path_ids)

    if theta0 == "bernoulli":
        th = (uniforms(keys, np.zeros(n, dtype=np.uint64), 1)[:, 0] < p0).astype(np.int64)
    else:
        th = np.full(n, int(theta0), dtype=np.int64)
    theta_start = th.copy()
    p = np.full(n, float(p0))
    reg = np.array([g.region(float(p0), int(x)) for x in th], dtype=np.int64)
    t = np.zeros(n)
    A = np.zeros(n)  # agent payoff
    P = np.zeros(n)  # principal payoff
    n_insp = np.zeros(n, dtype=np.int64)
    regions = np.zeros((n, 3))
    absorbed = reg == DEAD
    tail_a = np.zeros(n)
    tail_p = np.zeros(n)
    active = np.ones(n, dtype=bool)
    step = np.zeros(n, dtype=np.uint64)

    log = [] if cfg.record_paths else None

    def emit(i, kind, pb, pa, theta_left):
        if log is not None and np.size(i):
            log.append((path_ids[i], t[i].copy(), np.full(np.size(i), kind), np.broadcast_to(pb, np.shape(i)).copy(),
                        np.broadcast_to(pa, np.shape(i)).copy(), theta_left.copy()))

    # paths that start absorbed just sit out the horizon
    i = np.flatnonzero(absorbed)
    regions[i, 2] += T
    t[i] = T
    active[i] = False

    r = g.r
    while active.any():
        live = np.flatnonzero(active)
        U = uniforms(keys[live], step[live] + np.uint64(1), _DRAWS_PER_STEP)
        step[live] += np.uint64(1)
        lreg = reg[live]

        # ---- zero-duration states -------------------------------------
        m = lreg == INSPECT
        if m.any():
            i = live[m]
            disc = np.exp(-r * t[i])
            P[i] -= g.k * disc
            n_insp[i] += 1
            emit(i, _INSPECTION, p[i], th[i].astype(float), th[i])
            ok = th[i] == 1
            p[i] = th[i].astype(float)
            reg[i[ok]] = BT
            fail = i[~ok]
            reg[fail] = g.after_failure()
            if g.after_failure() == DEAD and fail.size:
                emit(fail, _ABSORB, p[fail], p[fail], th[fail])
                absorbed[fail] = True
                regions[fail, 2] += T - t[fail]
                t[fail] = T
                active[fail] = False

        m = lreg == LOT
        if m.any():
            i = live[m]
            q = sol.reporting.report_prob(p[i], 0)
            rep = (th[i] == 1) | (U[m, 0] < q)
            j = i[rep]
            emit(j, _REPORT, p[j], g.x_zero, th[j])
            p[j] = g.x_zero
            reg[j] = INSPECT
            j = i[~rep]
            emit(j, _CROSS, p[j], 0.0, th[j])
            p[j] = 0.0
            reg[j] = DISC0

        # ---- dwell states ----------------------------------------------
        m = lreg == BT
        if m.any():
            i, u = live[m], U[m]
            hit = np.log(p[i] / g.x_top) / g.lam
            flip = np.where(th[i] == 1, _exp_draw(u[:, 0], g.lam), np.inf)
            d = np.minimum(np.minimum(hit, flip), T - t[i])
            disc = np.exp(-r * t[i])
            A[i] += disc * g.u * (-np.expm1(-r * d)) / r
            P[i] += disc * _disc_integral(-g.L, (g.H + g.L) * p[i], g.lam, r, d)
            regions[i, 0] += d
            p_new = p[i] * np.exp(-g.lam * d)
            t[i] += d
            is_flip = (flip <= hit) & (flip < T - t[i] + d)
            is_hit = ~is_flip & (hit < T - t[i] + d)
            j = i[is_flip]
            p[i] = p_new
            emit(j, _TRANSITION, p[j], p[j], th[j])
            th[j] = 0
            j = i[is_hit]
            p[j] = g.x_top
            if g.cls == "NoInspection":
                emit(j, _ABSORB, p[j], p[j], th[j])
                absorbed[j] = True
                reg[j] = DEAD
                regions[j, 2] += T - t[j]
                t[j] = T
                active[j] = False
            else:
                emit(j, _CROSS, p[j], p[j], th[j])
                reg[j] = INSPECT if g.cls == "Periodic" else MIX

        m = lreg == MIX
        if m.any():
            i, u = live[m], U[m]
            cand = _exp_draw(u[:, 0], g.lam)
            insp = _exp_draw(u[:, 1], g.sigma)
            left = T - t[i]
            d = np.minimum(np.minimum(cand, insp), left)
            disc = np.exp(-r * t[i])
            gap = p[i] - g.x_star
            b_eta = -g.x_star * gap / (g.x_bar - g.x_star)
            A[i] += disc * (g.u * (-np.expm1(-r * d)) / r - g.c * _disc_integral(g.x_star, b_eta, g.kappa, r, d))
            P[i] += disc * _disc_integral((g.H + g.L) * g.x_star - g.L, (g.H + g.L) * gap, g.kappa, r, d)
            regions[i, 1] += d
            t[i] += d
            p[i] = g.x_star + gap * np.exp(-g.kappa * d)
            is_cand = (cand < insp) & (cand < left)
            is_insp = (insp <= cand) & (insp < left)
            eta = g.x_star * (g.x_bar - p[i]) / (g.x_bar - g.x_star)
            accept = is_cand & (u[:, 2] < np.where(th[i] == 1, 1.0 - eta, eta))
            j = i[accept]
            emit(j, _TRANSITION, p[j], p[j], th[j])
            th[j] = 1 - th[j]
            reg[i[is_insp]] = INSPECT

        m = lreg == REC
        if m.any():
            i, u = live[m], U[m]
            to_dagger = (p[i] < g.p_dagger) & (g.p_dagger < g.x_low)
            target = np.where(to_dagger, g.p_dagger, g.x_low)
            hit = np.log((1.0 - p[i]) / (1.0 - target)) / g.lam
            flip = np.where(th[i] == 0, _exp_draw(u[:, 0], g.lam), np.inf)
            left = T - t[i]
            d = np.minimum(np.minimum(hit, flip), left)
            disc = np.exp(-r * t[i])
            approved = (p[i] >= g.p_dagger).astype(float)
            A[i] += disc * ((g.u * approved - g.c) * (-np.expm1(-r * d)) / r)
            P[i] += disc * approved * _disc_integral(g.H, -(g.H + g.L) * (1.0 - p[i]), g.lam, r, d)
            regions[i, 2] += d
            t[i] += d
            p[i] = 1.0 - (1.0 - p[i]) * np.exp(-g.lam * d)
            is_flip = (flip < hit) & (flip < left)
            is_hit = ~is_flip & (hit < left)
            j = i[is_flip]
            emit(j, _TRANSITION, p[j], p[j], th[j])
            th[j] = 1
            j = i[is_hit]
            p[j] = target[is_hit]
            emit(j, _CROSS, p[j], p[j], th[j])
            reg[j[~to_dagger[is_hit]]] = INSPECT

        m = lreg == DISC0
        if m.any():
            i, u = live[m], U[m]
            hi = th[i] == 1
            j = i[hi]
            emit(j, _REPORT, p[j], g.x_zero, th[j])
            p[j] = g.x_zero
            reg[j] = INSPECT
            i, u = i[~hi], u[~hi]
            flip = _exp_draw(u[:, 0], g.lam)
            false = _exp_draw(u[:, 1], sol.reporting.false_rate)
            left = T - t[i]
            d = np.minimum(np.minimum(flip, false), left)
            disc = np.exp(-r * t[i])
            A[i] -= disc * g.c * (-np.expm1(-r * d)) / r
            regions[i, 2] += d
            t[i] += d
            is_flip = (flip < false) & (flip < left)
            is_false = (false <= flip) & (false < left)
            j = i[is_flip]
            emit(j, _TRANSITION, p[j], p[j], th[j])
            th[j] = 1
            j = i[is_flip | is_false]
            emit(j, _REPORT, p[j], g.x_zero, th[j])
            p[j] = g.x_zero
            reg[j] = INSPECT

        # ---- horizon ---------------------------------------------------
        done = active & (t >= T) & ~absorbed
        if done.any():
            i = np.flatnonzero(done)
            active[i] = False
            t[i] = T
            if cfg.truncation_policy == "analytic_tail":
                disc = math.exp(-r * T)
                for th_val in (0, 1):
                    j = i[th[i] == th_val]
                    tail_a[j] = disc * sol.agent_value(p[j], th_val)
                tail_p[i] = disc * sol.value(p[i])
                A[i] += tail_a[i]
                P[i] += tail_p[i]

    events = None
    if log is not None:
        cols = list(zip(*log)) if log else [[]] * 6
        events = {
            "path_id": np.concatenate(cols[0]) if log else np.zeros(0, dtype=np.int64),
            "t": np.concatenate(cols[1]) if log else np.zeros(0),
            "kind": np.concatenate(cols[2]) if log else np.zeros(0, dtype=np.int64),
            "p_before": np.concatenate(cols[3]) if log else np.zeros(0),
            "p_after": np.concatenate(cols[4]) if log else np.zeros(0),
            "theta": np.concatenate(cols[5]) if log else np.zeros(0, dtype=np.int64),
        }
        order = np.argsort(events["path_id"], kind="stable")
        events = {k: v[order] for k, v in events.items()}
    return _Batch(path_ids, A, P, n_insp, regions, absorbed, t, p, th, tail_a, tail_p,
                  np.full(n, float(p0)), theta_start, events)


# ---------------------------------------------------------------------------
# public surface


@dataclass
class SimResult:
    cls: str
    horizon: float
    path_ids: np.ndarray
    agent: np.ndarray
    principal: np.ndarray
    inspections: np.ndarray
    time_in_regions: np.ndarray
    absorbed: np.ndarray
    end_t: np.ndarray
    end_p: np.ndarray
    end_theta: np.ndarray
    tail_agent: np.ndarray
    tail_principal: np.ndarray
    start_p: np.ndarray
    start_theta: np.ndarray
    events: dict | None = None
    _records: list | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.path_ids.size

    @property
    def records(self) -> list[PathRecord]:
        if self.events is None:
            raise ValueError("paths were not recorded; set record_paths=True")
        if self._records is None:
            ev = self.events
            bounds = np.searchsorted(ev["path_id"], self.path_ids, side="left")
            ends = np.searchsorted(ev["path_id"], self.path_ids, side="right")
            out = []
            for n, pid in enumerate(self.path_ids):
                a, b = bounds[n], ends[n]
                events = [Event(float(ev["t"][q]), EVENT_KINDS[ev["kind"][q]], float(ev["p_before"][q]),
                                float(ev["p_after"][q]), int(ev["theta"][q])) for q in range(a, b)]
                out.append(PathRecord(
                    events, float(self.agent[n]), float(self.principal[n]), int(self.inspections[n]),
                    tuple(float(x) for x in self.time_in_regions[n]), int(pid),
                    (float(self.start_p[n]), int(self.start_theta[n])),
                    (float(self.end_t[n]), float(self.end_p[n]), int(self.end_theta[n])),
                    (float(self.tail_agent[n]), float(self.tail_principal[n])), bool(self.absorbed[n])))
            self._records = out
        return self._records


def _run_chunk(args):
    sol, cfg, ids, p0, theta0 = args
    return _simulate_batch(sol, cfg, ids, p0, theta0)


def simulate(sol: EquilibriumSolution, cfg: SimConfig, p0: float = 1.0, theta0=1,
             stream: int = 0) -> SimResult:
    """Simulate ``cfg.n_paths`` paths from belief p0 and quality theta0.

    ``theta0`` may be 0, 1 or "bernoulli" (drawn with probability p0).
    Different ``stream`` values give independent sets of paths for the same seed.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    if theta0 not in (0, 1, "bernoulli"):
        raise ValueError("theta0 must be 0, 1 or 'bernoulli'")
    pr = sol.params
    T = cfg.horizon_for(pr.r)
    base = np.uint64(stream) << np.uint64(40)
    ids = np.arange(cfg.n_paths, dtype=np.uint64) + base
    chunks = [ids[a:a + cfg.chunk_size] for a in range(0, ids.size, cfg.chunk_size)]
    jobs = [(sol, cfg, ch, p0, theta0) for ch in chunks]
    if cfg.workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]

    def cat(name):
        return np.concatenate([getattr(b, name) for b in parts])

    events = None
    if cfg.record_paths:
        events = {k: np.concatenate([b.events[k] for b in parts]) for k in parts[0].events}
    res = SimResult(sol.cls, T, ids, cat("agent"), cat("principal"), cat("inspections"),
                    np.concatenate([b.regions for b in parts]), cat("absorbed"), cat("t_end"),
                    cat("p_end"), cat("theta_end"), cat("tail_agent"), cat("tail_principal"),
                    cat("p0"), cat("theta0"), events)
    if cfg.truncation_policy == "hard_cut":
        bound = math.exp(-pr.r * T) * max(pr.H, pr.u) / pr.r
        if bound > cfg.tail_bound and not res.absorbed.all():
            raise HorizonTooShort(
                f"{int((~res.absorbed).sum())} paths not absorbed by t={T:g} and the tail bound "
                f"{bound:.3g} exceeds {cfg.tail_bound:.3g}")
    return res


def simulate_path(sol: EquilibriumSolution, seed: int, path_id: int = 0, p0: float = 1.0,
                  theta0: int = 1, horizon: float | None = None,
                  truncation_policy: str = "analytic_tail") -> PathRecord:
    """Simulate one recorded path; identical to path ``path_id`` of a batch run."""
    cfg = SimConfig(n_paths=1, horizon=horizon, seed=seed, record_paths=True,
                    truncation_policy=truncation_policy)
    g = _Geometry.of(sol)
    T = cfg.horizon_for(g.r)
    b = _simulate_batch(sol, cfg, np.array([path_id], dtype=np.uint64), p0, theta0)
    if truncation_policy == "hard_cut" and not b.absorbed[0]:
        bound = math.exp(-g.r * T) * max(g.H, g.u) / g.r
        if bound > cfg.tail_bound:
            raise HorizonTooShort(f"path not absorbed by t={T:g}; tail bound {bound:.3g}")
    res = SimResult(sol.cls, T, b.path_ids, b.agent, b.principal, b.inspections, b.regions,
                    b.absorbed, b.t_end, b.p_end, b.theta_end, b.tail_agent, b.tail_principal,
                    b.p0, b.theta0, b.events)
    return res.records[0]


class Estimate(NamedTuple):
    mean: float
    se: float


@dataclass
class ValueEstimates:
    V1: Estimate
    V0: Estimate
    U11: Estimate
    U00: Estimate
    n_paths: int

    def as_dict(self) -> dict:
        return {name: {"mean": e.mean, "se": e.se}
                for name, e in (("V1", self.V1), ("V0", self.V0), ("U11", self.U11), ("U00", self.U00))} \
            | {"n_paths": self.n_paths}


def _estimate(x: np.ndarray) -> Estimate:
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(x.mean()), se)


def estimate_values(sol: EquilibriumSolution, cfg: SimConfig) -> ValueEstimates:
    """Sample means of discounted payoffs from (1, 1) and (0, 0)."""
    hi = simulate(sol, cfg, 1.0, 1, stream=1)
    lo = simulate(sol, cfg, 0.0, 0, stream=2)
    return ValueEstimates(_estimate(hi.principal), _estimate(lo.principal),
                          _estimate(hi.agent), _estimate(lo.agent), cfg.n_paths)


# ---------------------------------------------------------------------------
# trajectories, replay and cycle statistics


def _segment_region(g: _Geometry, p: float, theta: int, prev_region: int | None) -> int:
    if prev_region == MIX and g.cls != "Periodic" and p <= g.x_bar:
        return MIX
    return g.region(p, theta)


def _belief_after(g: _Geometry, region: int, p: float, s: float) -> float:
    if region == BT:
        return p * math.exp(-g.lam * s)
    if region == MIX:
        return g.x_star + (p - g.x_star) * math.exp(-g.kappa * s)
    if region == REC:
        return 1.0 - (1.0 - p) * math.exp(-g.lam * s)
    return p


def _walk(record: PathRecord, g: _Geometry):
    """Yield (t0, t1, region, p0, theta) for every dwell segment of the path."""
    t, (p, theta) = 0.0, record.start
    region = g.region(p, theta)
    for ev in record.events:
        yield t, ev.t, region, p, theta
        if ev.kind == "transition":
            theta = 1 - ev.theta
        p = ev.p_after
        t = ev.t
        if ev.kind == "absorb":
            region = DEAD
        elif ev.kind == "inspection" and ev.p_after == 0.0:
            region = g.after_failure()
        else:
            region = _segment_region(g, p, theta, region)
    yield t, record.end_state[0], region, p, theta


def state_at(record: PathRecord, sol: EquilibriumSolution, t: float) -> tuple[float, int]:
    """Belief and quality at time t, taking left limits at event times."""
    g = _Geometry.of(sol)
    for t0, t1, region, p, theta in _walk(record, g):
        if t0 <= t <= t1:
            return _belief_after(g, region, p, t - t0), theta
    raise ValueError(f"t={t} beyond the simulated horizon")


def replay_payoffs(record: PathRecord, sol: EquilibriumSolution) -> tuple[float, float]:
    """Recompute a path's discounted payoffs from its event log.

    Beliefs between events come from integrating the drift ODE and flows are
    integrated by quadrature, so this shares no arithmetic with the
    simulator's closed-form accumulation.
    """
    from scipy.integrate import quad, solve_ivp

    pr = sol.params
    g = _Geometry.of(sol)
    agent = principal = 0.0
    for t0, t1, region, p0, theta in _walk(record, g):
        if t1 <= t0 or region == DEAD:
            continue
        if region == DISC0:
            eta = lambda q: 1.0  # noqa: E731
            drift = lambda s, y: [0.0]  # noqa: E731
        else:
            eta = lambda q: float(sol.effort(q))  # noqa: E731
            drift = lambda s, y: [pr.lam * (float(sol.effort(y[0])) - y[0])]  # noqa: E731
        if region == MIX:
            eta = lambda q: g.x_star * (g.x_bar - q) / (g.x_bar - g.x_star)  # noqa: E731
            drift = lambda s, y: [pr.lam * (eta(y[0]) - y[0])]  # noqa: E731
        traj = solve_ivp(drift, (t0, t1), [p0], dense_output=True, rtol=1e-12, atol=1e-14,
                         method="DOP853")
        belief = lambda s: float(traj.sol(s)[0])  # noqa: E731
        # approval is constant within a segment; p_dagger is a segment boundary
        approved = 1.0 if p0 >= pr.p_dagger else 0.0

        def fa(s):
            return math.exp(-pr.r * s) * (pr.u * approved - pr.c * eta(belief(s)))

        def fp(s):
            q = belief(s)
            return math.exp(-pr.r * s) * approved * (q * pr.H - (1.0 - q) * pr.L)

        agent += quad(fa, t0, t1, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        principal += quad(fp, t0, t1, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    for ev in record.events:
        if ev.kind == "inspection":
            principal -= pr.k * math.exp(-pr.r * ev.t)
    return agent + record.tail[0], principal + record.tail[1]


def _as_table(records) -> tuple[dict, list[PathRecord] | None]:
    if isinstance(records, SimResult):
        if records.events is None:
            raise ValueError("cycle statistics need recorded paths")
        return records.events, None
    recs = list(records)
    if not recs:
        raise ValueError("no records")
    rows = [(n, e.t, EVENT_KINDS.index(e.kind), e.p_before, e.p_after, e.theta)
            for n, rec in enumerate(recs) for e in rec.events]
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    return {"path_id": arr[:, 0].astype(np.int64), "t": arr[:, 1], "kind": arr[:, 2].astype(np.int64),
            "p_before": arr[:, 3], "p_after": arr[:, 4], "theta": arr[:, 5].astype(np.int64)}, recs


def _mean_se(x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"mean": None, "se": None, "count": 0}
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else None
    return {"mean": float(x.mean()), "se": se, "count": int(x.size)}


def _following(ev, start_mask, end_mask):
    """For each start event, time to the next end event on the same path (NaN if none)."""
    pid, t = ev["path_id"], ev["t"]
    starts = np.flatnonzero(start_mask)
    ends = np.flatnonzero(end_mask)
    out = np.full(starts.size, np.nan)
    pos = np.searchsorted(ends, starts, side="right")
    ok = pos < ends.size
    nxt = ends[np.minimum(pos, ends.size - 1)]
    ok &= pid[nxt] == pid[starts]
    out[ok] = t[nxt[ok]] - t[starts[ok]]
    return out, starts


def mixing_sojourns(result: SimResult, sol: EquilibriumSolution, censor_margin: float = 20.0) -> np.ndarray:
    """Times from entering the mixing region to the inspection that ends the stay.

    A path that starts inside the mixing region counts as entering at t = 0.
    Entries later than horizon - censor_margin / sigma are dropped so that
    right-censoring by the horizon is negligible (probability e^-censor_margin).
    """
    if sol.sigma_star is None or sol.cls == "Periodic":
        return np.zeros(0)
    g = _Geometry.of(sol)
    ev = result.events
    cutoff = result.horizon - censor_margin / sol.sigma_star
    enter = (ev["kind"] == _CROSS) & (ev["p_after"] == sol.cutoffs.x_bar) & (ev["t"] < cutoff)
    d, _ = _following(ev, enter, ev["kind"] == _INSPECTION)
    out = [d[np.isfinite(d)]]
    starts_inside = np.array([g.region(float(p), int(th)) == MIX
                              for p, th in zip(result.start_p, result.start_theta)])
    if starts_inside.any() and cutoff > 0:
        insp = ev["kind"] == _INSPECTION
        pid = ev["path_id"][insp]
        first = np.searchsorted(pid, result.path_ids[starts_inside], side="left")
        ok = (first < pid.size)
        ok[ok] &= pid[first[ok]] == result.path_ids[starts_inside][ok]
        out.append(ev["t"][insp][first[ok]])
    return np.concatenate(out)


def cycle_statistics(records, sol: EquilibriumSolution | None = None) -> dict:
    """Summary of trust cycles across recorded paths.

    Accepts a list of ``PathRecord`` or a recorded ``SimResult``.
    """
    ev, recs = _as_table(records)
    if isinstance(records, SimResult):
        n_paths = records.n_paths
        regions = records.time_in_regions
        absorbed = records.absorbed
        horizon = records.horizon
    else:
        n_paths = len(recs)
        regions = np.array([r.time_in_regions for r in recs])
        absorbed = np.array([r.absorbed for r in recs])
        horizon = max(r.end_state[0] for r in recs)
    kind = ev["kind"]
    insp = kind == _INSPECTION
    passed = insp & (ev["p_after"] == 1.0)

    # consecutive inspections on the same path
    it = np.flatnonzero(insp)
    same = ev["path_id"][it[1:]] == ev["path_id"][it[:-1]]
    inter = (ev["t"][it[1:]] - ev["t"][it[:-1]])[same]

    out = {
        "n_paths": n_paths,
        "horizon": horizon,
        "inspections": int(insp.sum()),
        "inter_inspection_time": _mean_se(inter),
        "pass_fraction": _mean_se(passed[insp].astype(float)),
        "mean_time_in_regions": {
            "blind_trust": float(regions[:, 0].mean()),
            "inspection_region": float(regions[:, 1].mean()),
            "blind_distrust": float(regions[:, 2].mean()),
        },
        "transitions": int((kind == _TRANSITION).sum()),
    }
    if sol is None:
        return out
    c = sol.cutoffs
    if sol.cls in ("Periodic", "Breakdown"):
        out["breakdown_frequency"] = _mean_se(absorbed.astype(float))
    # blind-trust dwell: from a passed inspection to reaching the exit of blind trust
    if c.x_bar is not None:
        reach = (kind == _CROSS) & (ev["p_after"] == c.x_bar)
        d, _ = _following(ev, passed, reach)
        out["blind_trust_dwell"] = _mean_se(d[np.isfinite(d)])
        if d[np.isfinite(d)].size:
            out["blind_trust_dwell"]["spread"] = float(np.ptp(d[np.isfinite(d)]))
    if sol.cls == "Recovery":
        at_low = insp & np.isclose(ev["p_before"], c.x_low, rtol=0, atol=1e-12)
        out["recovery_inspection_failure"] = _mean_se((ev["p_after"][at_low] == 0.0).astype(float))
        failed = insp & (ev["p_after"] == 0.0)
        d, _ = _following(ev, failed, insp)
        out["recovery_cycle_duration"] = _mean_se(d[np.isfinite(d)])
    if sol.cls == "Disclosure":
        rep = kind == _REPORT
        out["reports"] = int(rep.sum())
        out["false_report_fraction"] = _mean_se((ev["theta"][rep] == 0).astype(float))
        out["report_rate_per_path_time"] = float(rep.sum() / (n_paths * horizon))
        failed = insp & (ev["p_after"] == 0.0)
        d, _ = _following(ev, failed, rep)
        out["wait_at_zero_until_report"] = _mean_se(d[np.isfinite(d)])
    if sol.sigma_star is not None and sol.cls != "Periodic" and isinstance(records, SimResult):
        out["mixing_sojourn"] = _mean_se(mixing_sojourns(records, sol))
    return out
