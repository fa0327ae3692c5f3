"""Discretized action functional and its constrained minimization.

For a piecewise-linear path with nodes x_0..x_N the action is evaluated with
the midpoint rule on every segment,

    S = 1/2 sum_k dt_k r_k^T (sigma sigma^T)^{-1}(m_k) r_k,
    r_k = (x_{k+1} - x_k)/dt_k - M m_k,   m_k = (x_k + x_{k+1})/2,

where M is the closed-loop matrix.  Minimization keeps x_0 fixed (and x_N
when pinned) and projects every other node onto the closed domain after
each step.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .domain import Box, interior_grid
from .errors import DomainError
from .model import closed_loop_matrix
from .simulate import DiscretePath, RateEstimate, simulate_deterministic


def rho_0T(phi, psi):
    """Uniform distance between two paths on the same time grid."""
    if phi.times.shape != psi.times.shape or not np.allclose(phi.times, psi.times,
                                                             rtol=0, atol=1e-12):
        raise ValueError("paths must share the same time grid")
    return float(np.max(np.sqrt(np.sum((phi.states - psi.states) ** 2, axis=1))))


def d_0T(psi, Phi):
    """Largest uniform distance from ``psi`` to the members of ``Phi``."""
    Phi = list(Phi)
    if not Phi:
        raise ValueError("Phi must be nonempty")
    return max(rho_0T(psi, phi) for phi in Phi)


@dataclass(frozen=True)
class ActionValue:
    value: float
    contributions: np.ndarray


class _Functional:
    """Action, gradient and Gauss-Newton Hessian for a fixed closed loop."""

    def __init__(self, model, gains):
        self.M = np.asarray(closed_loop_matrix(model, gains))
        self.sigma = model.sigma
        self.d = model.d
        if self.sigma.is_constant:
            self.W = np.linalg.inv(self.sigma.covariance(None))

    def _residuals(self, X, dt):
        mid = 0.5 * (X[:-1] + X[1:])
        R = np.diff(X, axis=0) / dt[:, None] - mid @ self.M.T
        return mid, R

    def contributions(self, X, dt):
        mid, R = self._residuals(X, dt)
        if self.sigma.is_constant:
            quad = np.einsum("ki,ij,kj->k", R, self.W, R)
        else:
            quad = np.sum(R**2 / self.sigma.diagonal_values(mid) ** 2, axis=1)
        return 0.5 * dt * quad

    def value(self, X, dt):
        return float(np.sum(self.contributions(X, dt)))

    def gradient(self, X, dt):
        mid, R = self._residuals(X, dt)
        if self.sigma.is_constant:
            Q = dt[:, None] * (R @ self.W.T)
        else:
            diag = self.sigma.diagonal_values(mid)
            Q = dt[:, None] * R / diag**2
        MTQ = Q @ self.M
        G = np.zeros_like(X)
        G[:-1] += -Q / dt[:, None] - 0.5 * MTQ
        G[1:] += Q / dt[:, None] - 0.5 * MTQ
        if not self.sigma.is_constant:
            s, c = self.sigma.s, self.sigma.c
            dw = -2.0 * s * np.sign(mid) / (c + s * np.abs(mid)) ** 3
            extra = 0.25 * dt[:, None] * R**2 * dw
            G[:-1] += extra
            G[1:] += extra
        return G

    def hessian(self, X, dt):
        """Sparse Hessian over all nodes (exact for constant sigma, Gauss-Newton
        with frozen weights otherwise), as a CSR matrix of size (N+1)d."""
        n_nodes, d = X.shape
        I = np.eye(d)
        if self.sigma.is_constant:
            Ws = np.broadcast_to(self.W, (n_nodes - 1, d, d))
        else:
            mid = 0.5 * (X[:-1] + X[1:])
            Ws = np.stack([np.diag(w) for w in 1.0 / self.sigma.diagonal_values(mid) ** 2])
        P = I / dt[:, None, None] - 0.5 * self.M
        Q = I / dt[:, None, None] + 0.5 * self.M
        QtW = np.transpose(Q, (0, 2, 1)) @ Ws
        PtW = np.transpose(P, (0, 2, 1)) @ Ws
        Hkk = dt[:, None, None] * (QtW @ Q)
        Hk1 = dt[:, None, None] * (PtW @ P)
        Hoff = -dt[:, None, None] * (QtW @ P)
        rows, cols, vals = [], [], []
        base = np.arange(n_nodes - 1) * d
        ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        for blk, ro, co in ((Hkk, 0, 0), (Hk1, d, d), (Hoff, 0, d), (np.transpose(Hoff, (0, 2, 1)), d, 0)):
            rows.append((base[:, None, None] + ro + ii).ravel())
            cols.append((base[:, None, None] + co + jj).ravel())
            vals.append(blk.ravel())
        size = n_nodes * d
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(size, size))


def action(model, gains, path):
    """Midpoint-rule action of a piecewise-linear path."""
    X = path.states
    if not np.all(np.isfinite(X)):
        raise ValueError("path has non-finite states")
    fn = _Functional(model, gains)
    contrib = fn.contributions(X, np.diff(path.times))
    return ActionValue(float(np.sum(contrib)), contrib)


def action_gradient(model, gains, path):
    """Gradient of the discretized action with respect to every node."""
    fn = _Functional(model, gains)
    return fn.gradient(path.states, np.diff(path.times))


@dataclass
class MinActionProblem:
    model: object
    gains: object
    dom: object
    T: float
    N: int
    x_start: np.ndarray
    x_end: np.ndarray = None
    margin: float = 0.0
    initial: np.ndarray = None  # optional (N+1, d) starting states
    max_iter: int = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least 2 segments")
        if not self.T > 0:
            raise ValueError("T must be positive")
        self.x_start = np.asarray(self.x_start, dtype=float).ravel()
        if self.x_end is not None:
            self.x_end = np.asarray(self.x_end, dtype=float).ravel()
        for name, pt in (("x_start", self.x_start), ("x_end", self.x_end)):
            if pt is not None and self.dom.boundary_distance(pt) < self.margin - 1e-12:
                raise DomainError(f"{name}={pt.tolist()} lies outside the constraint set")


@dataclass
class ConvergenceReport:
    status: str  # "converged" | "cap-reached"
    iterations: int
    residual: float  # sup-norm of x - P(x - grad) over the free nodes
    history: list = field(default_factory=list)


def _initial_states(problem):
    n, d = problem.N + 1, problem.x_start.size
    if problem.initial is not None:
        X = np.array(problem.initial, dtype=float).reshape(n, d)
    elif problem.x_end is not None:
        s = np.linspace(0.0, 1.0, n)[:, None]
        X = (1 - s) * problem.x_start + s * problem.x_end
    else:
        X = np.tile(problem.x_start, (n, 1))
    X = problem.dom.project(X, problem.margin)
    X[0] = problem.x_start
    if problem.x_end is not None:
        X[-1] = problem.x_end
    return X


def _active_mask(dom, margin, X, G, tol):
    """Nodes/coordinates sitting on the constraint with the gradient pushing out."""
    if isinstance(dom, Box):
        lo = dom.lower + margin
        hi = dom.upper - margin
        return ((X - lo <= tol) & (G > 0)) | ((hi - X <= tol) & (G < 0))
    off = X - dom.center
    nrm = np.sqrt(np.sum(off**2, axis=1, keepdims=True))
    on = (dom.radius - margin) - nrm <= tol
    outward = np.sum(G * off, axis=1, keepdims=True) < 0
    return np.broadcast_to(on & outward, X.shape).copy()


def minimize_action(problem):
    """Projected Newton-type descent on the interior nodes.

    Free coordinates move along the Newton (Gauss-Newton) direction of the
    discretized action, coordinates held by an active constraint along the
    diagonally scaled gradient (two-metric projection).  Each trial point is
    projected onto the closed domain and accepted by an Armijo test along
    the projection arc.  Stops when the relative decrease stays below 1e-10
    for 10 consecutive iterations, or at 50*N*d iterations.

    Returns (path, ActionValue, ConvergenceReport); the objective is
    nonincreasing across iterations.
    """
    pb = problem
    fn = _Functional(pb.model, pb.gains)
    d = pb.x_start.size
    dt = np.full(pb.N, pb.T / pb.N)
    times = np.linspace(0.0, pb.T, pb.N + 1)
    X = _initial_states(pb)
    var = np.ones((pb.N + 1, d), dtype=bool)
    var[0] = False
    if pb.x_end is not None:
        var[-1] = False
    cap = pb.max_iter if pb.max_iter is not None else 50 * pb.N * d
    proj = lambda Y: pb.dom.project(Y, pb.margin)

    f = fn.value(X, dt)
    history = [f]
    small = 0
    it = 0
    status = "cap-reached"
    H = None
    while it < cap:
        it += 1
        G = fn.gradient(X, dt)
        G[~var] = 0.0
        pg = X - proj(X - G)
        pg[~var] = 0.0
        eps_act = min(1e-8, float(np.max(np.abs(pg)))) if pg.size else 0.0
        active = _active_mask(pb.dom, pb.margin, X, G, eps_act) & var
        free = var & ~active
        if H is None or not pb.model.sigma.is_constant:
            H = fn.hessian(X, dt)
            Hdiag = H.diagonal().reshape(X.shape)
        D = np.zeros_like(X)
        D[active] = -G[active] / Hdiag[active]
        fidx = np.flatnonzero(free.ravel())
        if fidx.size:
            Hff = H[fidx][:, fidx].tocsc()
            try:
                step = spsolve(Hff, -G.ravel()[fidx])
            except RuntimeError:
                step = np.full(fidx.size, np.nan)
            if not np.all(np.isfinite(step)):
                step = -G.ravel()[fidx] / Hdiag.ravel()[fidx]
            D.ravel()[fidx] = step
        X_new, f_new = _arc_search(fn, X, dt, f, G, D, proj, var)
        if X_new is None:
            # fall back to a plain projected-gradient step
            scale = 1.0 / float(np.max(Hdiag[var])) if np.any(var) else 1.0
            X_new, f_new = _arc_search(fn, X, dt, f, G, -G * scale, proj, var)
        if X_new is None:
            X_new, f_new = X, f
        # below 1e-8 of the starting value the objective is zero up to roundoff,
        # so decreases there are measured against that floor
        decrease = (f - f_new) / max(abs(f), 1e-8 * history[0], 1e-300) if f > 0 else 0.0
        X, f = X_new, f_new
        history.append(f)
        small = small + 1 if decrease < 1e-10 else 0
        if small >= 10:
            status = "converged"
            break
    G = fn.gradient(X, dt)
    G[~var] = 0.0
    pg = X - proj(X - G)
    pg[~var] = 0.0
    residual = float(np.max(np.abs(pg))) if pg.size else 0.0
    path = DiscretePath(times, X)
    contrib = fn.contributions(X, dt)
    return (path, ActionValue(float(np.sum(contrib)), contrib),
            ConvergenceReport(status, it, residual, history))


def _arc_search(fn, X, dt, f, G, D, proj, var, c1=1e-4, max_halvings=40):
    alpha = 1.0
    for _ in range(max_halvings):
        Y = X + alpha * D
        Y = np.where(var, proj(Y), X)
        lin = float(np.sum(G * (Y - X)))
        if lin < 0:
            fy = fn.value(Y, dt)
            if fy <= f + c1 * lin:
                return Y, fy
        alpha *= 0.5
    return None, None


def _better(a, b, tol=1e-12):
    """Tie-break rule for candidate minima: smaller action, then smaller path norm."""
    va, vb = a[1].value, b[1].value
    if abs(va - vb) > tol * max(1.0, abs(va), abs(vb)):
        return va < vb
    return np.linalg.norm(a[0].states) < np.linalg.norm(b[0].states)


def start_paths(model, gains, dom, T, N, x_start, margin=0.0, levels=7):
    """Multi-start set: constant paths at a grid of interior levels (first node
    at ``x_start``) and the projected noise-free trajectory."""
    x_start = np.asarray(x_start, dtype=float).ravel()
    inner = dom.inflate(-margin) if margin > 0 else dom
    out = []
    for lvl in interior_grid(inner, levels).points:
        X = np.tile(lvl, (N + 1, 1))
        X[0] = x_start
        out.append(("level " + ",".join(f"{v:.6g}" for v in lvl), X))
    det = simulate_deterministic(model, gains, x_start, T, T / N).states
    out.append(("deterministic", dom.project(det, margin)))
    return out


def minimize_multistart(model, gains, dom, T, N, x_start, margin=0.0, levels=7, extra=()):
    """Best free-endpoint minimum over the multi-start set.

    Returns (path, ActionValue, report, label).  ``extra`` adds (label, states)
    starts, e.g. a minimizer from a smaller domain.
    """
    best = None
    for label, X0 in list(start_paths(model, gains, dom, T, N, x_start, margin, levels)) + list(extra):
        prob = MinActionProblem(model, gains, dom, T, N, x_start, None, margin, initial=X0)
        path, val, rep = minimize_action(prob)
        cand = (path, val, rep, label)
        if best is None or _better(cand, best):
            best = cand
    return best


def pinned_minimum(model, gains, dom, T, N, x, y, margin=0.0):
    prob = MinActionProblem(model, gains, dom, T, N, x, y, margin)
    return minimize_action(prob)


def asymptotic_rate(model, gains, dom, T_list, n_per_T=64, x_start=None, margin=0.0,
                    levels=7, converge_tol=0.05, pinned=False, pinned_points=5):
    """Minimal action per unit time at the largest horizon of a T-sweep.

    The returned estimate carries the (T, S_min, S_min/T) table, the relative
    spread of the last two S_min/T values, and flags "not-converged" when
    that spread exceeds ``converge_tol``.  With ``pinned`` the sup over a
    coarse grid of pinned endpoint pairs is reported as well.
    """
    T_list = [float(t) for t in T_list]
    if len(T_list) < 3 or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be increasing with at least 3 entries")
    if x_start is None:
        x_start = dom.center
    x_start = np.asarray(x_start, dtype=float).ravel()
    table = []
    flags = []
    best = None
    for T in T_list:
        N = max(2, int(round(n_per_T * T)))
        path, val, rep, label = minimize_multistart(model, gains, dom, T, N, x_start,
                                                    margin, levels)
        table.append({"T": T, "N": N, "S_min": val.value, "S_min_over_T": val.value / T,
                      "converged": rep.status == "converged", "start": label})
        if rep.status != "converged":
            flags.append(f"cap-reached at T={T:g}")
        best = path
    a, b = table[-2]["S_min_over_T"], table[-1]["S_min_over_T"]
    spread = abs(a - b) / max(abs(a), abs(b)) if max(abs(a), abs(b)) > 1e-12 else 0.0
    if spread > converge_tol:
        flags.append("not-converged")
    r_hat = max(table[-1]["S_min_over_T"], 0.0)
    meta = {"table": table, "relative_spread": spread, "x_start": x_start.tolist()}
    if pinned:
        meta["pinned_sup"] = _pinned_sup(model, gains, dom, T_list[-1],
                                         table[-1]["N"], margin, pinned_points)
    est = RateEstimate(r_hat, "variational", spread, flags, meta)
    est.path = best
    return est


def _pinned_sup(model, gains, dom, T, N, margin, points):
    grid = interior_grid(dom.inflate(-margin) if margin > 0 else dom, points).points
    sup = -np.inf
    for x in grid:
        for y in grid:
            _, val, _ = pinned_minimum(model, gains, dom, T, N, x, y, margin)
            sup = max(sup, val.value / T)
    return float(sup)


def lemma3_gap(model, gains, dom, delta, T, N, x_start=None, levels=7):
    """Free-endpoint minima on the shrunken and the inflated domain.

    Returns (inner, outer, gap).  The inner minimizer seeds the outer search,
    so outer <= inner always holds.
    """
    delta = abs(float(delta))
    if x_start is None:
        x_start = dom.center
    x_start = np.asarray(x_start, dtype=float).ravel()
    inner_dom = dom.inflate(-delta)
    if not bool(inner_dom.contains(x_start)) and delta > 0:
        raise DomainError("x_start must lie in the shrunken domain")
    p_in, v_in, _, _ = minimize_multistart(model, gains, inner_dom, T, N, x_start, 0.0, levels)
    if delta == 0:
        return v_in.value, v_in.value, 0.0
    outer_dom = dom.inflate(delta)
    _, v_out, _, _ = minimize_multistart(model, gains, outer_dom, T, N, x_start, 0.0, levels,
                                         extra=[("inner minimizer", p_in.states)])
    return v_in.value, v_out.value, abs(v_in.value - v_out.value)
