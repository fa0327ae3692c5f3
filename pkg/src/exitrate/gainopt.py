"""Search over constant gain tuples for the smallest variational exit rate.

Candidates are screened with the invariant-set check: a Hurwitz closed loop
with the origin inside D has rate exactly 0 and skips the action sweep.
Ranking: rate (ties within 1e-9), then verdict strength (Hurwitz, simulation,
no evidence), then the optional fixed-eps eigenvalue, then the Frobenius norm
of the stacked gains.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cmp_to_key

import numpy as np
from scipy.optimize import minimize

from .action import asymptotic_rate
from .domain import GridSpec
from .model import GainTuple
from .simulate import InvarianceConfig, invariant_set_nonempty
from .spectrum import assemble, principal_eigen

TIE_TOL = 1e-9
_TIER = {"yes-by-hurwitz": 0, "yes-by-simulation": 1, "no-evidence": 2}


@dataclass(frozen=True)
class RateConfig:
    T_list: tuple = (5.0, 10.0, 20.0, 40.0)
    n_per_T: int = 64
    x_start: tuple = None
    margin: float = 0.0
    levels: int = 7
    converge_tol: float = 0.05
    invariance: InvarianceConfig = InvarianceConfig()
    # optional fixed-eps eigenvalue, used as ranking proxy or as the objective
    rank_epsilon: float = None
    rank_grid: int = 200
    objective: str = "variational"  # or "eigen"


@dataclass
class GainEvaluation:
    gains: GainTuple
    feasible: bool
    verdict: str
    r_hat: float
    flags: list = field(default_factory=list)
    reason: str = ""
    lam_eps: float = None

    @property
    def score(self):
        if self.lam_eps is not None and self._objective == "eigen":
            return self.lam_eps
        return self.r_hat

    _objective: str = "variational"


def evaluate_gain(model, dom, gains, rate_cfg=None):
    """Feasibility verdict and variational rate for one gain tuple.

    Never raises for numerical trouble: failures come back as infeasible
    evaluations carrying the reason.
    """
    cfg = rate_cfg or RateConfig()
    try:
        verdict = invariant_set_nonempty(model, gains, dom, cfg.invariance)
        flags = []
        if verdict.kind == "yes-by-hurwitz":
            r_hat = 0.0
        else:
            est = asymptotic_rate(model, gains, dom, cfg.T_list, cfg.n_per_T, cfg.x_start,
                                  cfg.margin, cfg.levels, cfg.converge_tol)
            r_hat = est.value
            flags = list(est.flags)
        lam = None
        if cfg.rank_epsilon is not None:
            res = principal_eigen(assemble(model, gains, dom, GridSpec(cfg.rank_grid),
                                           cfg.rank_epsilon))
            lam = res.lam
        ev = GainEvaluation(gains, True, verdict.kind, r_hat, flags, verdict.note, lam)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        ev = GainEvaluation(gains, False, "error", math.inf, ["evaluation-failed"],
                            f"{type(exc).__name__}: {exc}")
    ev._objective = cfg.objective
    return ev


@dataclass(frozen=True)
class GainSearchSpace:
    """Per-entry bounds for every K_i; ``mask`` marks free entries (others fixed at 0)."""

    lower: tuple
    upper: tuple
    mask: tuple = None

    def __post_init__(self):
        lo = tuple(np.array(a, dtype=float, ndmin=2) for a in self.lower)
        hi = tuple(np.array(a, dtype=float, ndmin=2) for a in self.upper)
        if len(lo) != len(hi) or any(a.shape != b.shape for a, b in zip(lo, hi)):
            raise ValueError("lower and upper bounds must have matching shapes")
        if any(np.any(b < a) for a, b in zip(lo, hi)):
            raise ValueError("lower bound exceeds upper bound")
        if self.mask is None:
            mk = tuple(np.ones(a.shape, dtype=bool) for a in lo)
        else:
            mk = tuple(np.array(m, dtype=bool, ndmin=2) for m in self.mask)
            if any(m.shape != a.shape for m, a in zip(mk, lo)):
                raise ValueError("mask shape does not match bounds")
        if not any(np.any(m) for m in mk):
            raise ValueError("search space has no free entries")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "mask", mk)

    def free_bounds(self):
        lo = np.concatenate([a[m] for a, m in zip(self.lower, self.mask)])
        hi = np.concatenate([a[m] for a, m in zip(self.upper, self.mask)])
        return lo, hi

    def gains_from_free(self, values):
        values = np.asarray(values, dtype=float)
        out, pos = [], 0
        for a, m in zip(self.lower, self.mask):
            k = np.zeros(a.shape)
            cnt = int(m.sum())
            k[m] = values[pos:pos + cnt]
            pos += cnt
            out.append(k)
        return GainTuple(tuple(out))


@dataclass
class GainSearchResult:
    best: GainEvaluation
    log: list
    ranking: list  # indices into log, best first
    notes: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # incumbent score after each refine evaluation

    @property
    def r_hat(self):
        return self.best.r_hat


def _compare(a, b):
    ea, eb = a[1], b[1]
    if abs(ea.score - eb.score) > TIE_TOL:
        return -1 if ea.score < eb.score else 1
    ta, tb = _TIER.get(ea.verdict, 3), _TIER.get(eb.verdict, 3)
    if ta != tb:
        return -1 if ta < tb else 1
    if ea._objective != "eigen" and ea.lam_eps is not None and eb.lam_eps is not None:
        if ea.lam_eps != eb.lam_eps:
            return -1 if ea.lam_eps < eb.lam_eps else 1
    na, nb = np.linalg.norm(ea.gains.flat()), np.linalg.norm(eb.gains.flat())
    if na != nb:
        return -1 if na < nb else 1
    return -1 if a[0] < b[0] else (1 if a[0] > b[0] else 0)


def rank(log):
    feasible = [(i, e) for i, e in enumerate(log) if e.feasible]
    return [i for i, _ in sorted(feasible, key=cmp_to_key(_compare))]


def lattice(space, resolution):
    """Per free entry: lower + i*resolution up to upper, rounded to 12 decimals
    so that values such as -1.0 are hit exactly."""
    lo, hi = space.free_bounds()
    axes = []
    for a, b in zip(lo, hi):
        count = int(math.floor((b - a) / resolution + 1e-9)) + 1
        axes.append(np.round(a + resolution * np.arange(count), 12))
    return axes


def grid_search(model, dom, space, resolution, rate_cfg=None, cap=10_000, threads=1):
    """Exhaustive evaluation of the gain lattice in lexicographic order."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    axes = lattice(space, resolution)
    size = int(np.prod([a.size for a in axes]))
    if size > cap:
        raise ValueError(f"gain lattice has {size} points, above the cap of {cap}")
    points = [np.array(p) for p in itertools.product(*axes)]
    gains = [space.gains_from_free(p) for p in points]
    run = lambda k: evaluate_gain(model, dom, k, rate_cfg)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            log = list(pool.map(run, gains))
    else:
        log = [run(k) for k in gains]
    order = rank(log)
    if not order:
        raise ValueError("no feasible gain in the search space")
    return GainSearchResult(log[order[0]], log, order)


def refine_search(result, model, dom, rate_cfg=None, space=None, budget=200, step=None):
    """Nelder-Mead polish around the grid incumbent.

    Coefficients are the standard 1, 2, 0.5 with shrink 0.5.  Points outside
    the search box or failing evaluation score max feasible rate + 1.  The
    returned incumbent is never worse than the input one.
    """
    cfg = rate_cfg or RateConfig()
    feasible = [e for e in result.log if e.feasible]
    if not feasible:
        raise ValueError("refinement needs at least one feasible evaluation")
    inc = result.best
    notes = list(result.notes)
    trace = [inc.score]
    if inc.score <= TIE_TOL:
        notes.append("incumbent already optimal; refinement skipped")
        return GainSearchResult(inc, list(result.log), rank(result.log), notes, trace)
    if space is None:
        mask = tuple(np.ones(k.shape, dtype=bool) for k in inc.gains.K)
        space = GainSearchSpace(tuple(k - np.inf for k in inc.gains.K),
                                tuple(k + np.inf for k in inc.gains.K), mask)
    lo, hi = space.free_bounds()
    x0 = np.concatenate([k[m] for k, m in zip(inc.gains.K, space.mask)])
    penalty = max(e.score for e in feasible if math.isfinite(e.score)) + 1.0
    log = list(result.log)
    cache = {}
    state = {"inc": inc}

    def objective(v):
        key = tuple(np.round(v, 14))
        if key in cache:
            return cache[key]
        if np.any(v < lo) or np.any(v > hi):
            val = penalty
        else:
            ev = evaluate_gain(model, dom, space.gains_from_free(v), cfg)
            log.append(ev)
            val = ev.score if ev.feasible else penalty
            if ev.feasible and ev.score < state["inc"].score:
                state["inc"] = ev
        trace.append(state["inc"].score)
        cache[key] = val
        return val

    h = np.full(x0.size, step if step is not None else 0.1)
    simplex = np.vstack([x0] + [x0 + h[i] * np.eye(x0.size)[i] for i in range(x0.size)])
    minimize(objective, x0, method="Nelder-Mead",
             options={"initial_simplex": simplex, "maxfev": budget, "xatol": 1e-10,
                      "fatol": 1e-12, "adaptive": False})
    if state["inc"] is inc:
        notes.append("no feasible improvement found near the incumbent")
    return GainSearchResult(state["inc"], log, rank(log), notes, trace)
