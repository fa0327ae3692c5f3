"""Principal Dirichlet eigenvalue of the closed-loop generator.

-L v = -<grad v, M x> - (eps/2) tr(sigma sigma^T hess v) is discretized on the
interior nodes of a tensor grid.  Second derivatives use central
differences; the drift uses one-sided differences oriented so that every
off-diagonal entry is nonpositive (M-matrix).  Nodes outside the domain are
Dirichlet zeros and simply drop out of the stencil.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .domain import GridSpec, interior_grid
from .errors import DomainError, NumericalError
from .model import closed_loop_matrix
from .simulate import RateEstimate


@dataclass(frozen=True)
class DiscretizedGenerator:
    matrix: sp.csr_matrix
    grid: object
    epsilon: float

    @property
    def n(self):
        return self.matrix.shape[0]


def assemble(model, gains, dom, grid, epsilon):
    """Sparse matrix of -L_h on the interior grid nodes."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not isinstance(grid, GridSpec):
        grid = GridSpec(grid)
    g = interior_grid(dom, grid)
    d = dom.d
    X = np.asarray(g.points)
    h = g.h
    M = np.asarray(closed_loop_matrix(model, gains))
    b = X @ M.T
    if model.sigma.is_constant:
        cov = np.broadcast_to(model.sigma.covariance(None), (g.n, d, d))
    else:
        cov = np.stack([np.diag(v) for v in model.sigma.diagonal_values(X) ** 2])
    half = 0.5 * epsilon

    coef = {}

    def add(offset, values):
        offset = tuple(offset)
        coef[offset] = coef.get(offset, 0.0) + values

    zero = (0,) * d
    for j in range(d):
        e = np.zeros(d, dtype=int)
        e[j] = 1
        ajj = cov[:, j, j]
        add(zero, 2 * half * ajj / h[j] ** 2)
        add(e, -half * ajj / h[j] ** 2)
        add(-e, -half * ajj / h[j] ** 2)
        bj = b[:, j]
        fwd = np.where(bj > 0, bj, 0.0) / h[j]
        bwd = np.where(bj < 0, -bj, 0.0) / h[j]
        add(zero, fwd + bwd)
        add(e, -fwd)
        add(-e, -bwd)
    for j, l in ((j, l) for j in range(d) for l in range(j + 1, d)):
        ajl = cov[:, j, l]
        if not np.any(ajl):
            continue
        ej = np.zeros(d, dtype=int)
        el = np.zeros(d, dtype=int)
        ej[j] = 1
        el[l] = 1
        w = epsilon * np.abs(ajl) / (2 * h[j] * h[l])
        pos = ajl > 0
        add(zero, -2 * w)
        add(ej + el, np.where(pos, -w, 0.0))
        add(-ej - el, np.where(pos, -w, 0.0))
        add(ej - el, np.where(pos, 0.0, -w))
        add(-ej + el, np.where(pos, 0.0, -w))
        for off in (ej, -ej, el, -el):
            add(off, w)

    multi = np.argwhere(g.index >= 0)
    order = g.index[tuple(multi.T)]
    multi = multi[np.argsort(order)]
    shape = np.array(g.index.shape)
    rows, cols, vals = [], [], []
    for off, val in coef.items():
        val = np.broadcast_to(val, (g.n,))
        nb = multi + np.array(off)
        inside = np.all((nb >= 0) & (nb < shape), axis=1)
        target = np.full(g.n, -1)
        target[inside] = g.index[tuple(nb[inside].T)]
        keep = target >= 0
        rows.append(np.flatnonzero(keep))
        cols.append(target[keep])
        vals.append(val[keep])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(g.n, g.n))
    A.sum_duplicates()
    A.eliminate_zeros()
    off = A - sp.diags(A.diagonal())
    if off.nnz and off.data.max() > 0:
        raise NumericalError(
            "assembled operator is not an M-matrix (positive off-diagonal "
            f"{off.data.max():.3g}); mixed diffusion terms dominate the diagonal ones. "
            "Use a diagonal sigma or adjust the grid spacing ratio."
        )
    n_comp, _ = connected_components(abs(off) + abs(off).T, directed=False)
    if g.n > 1 and n_comp != 1:
        raise DomainError(f"interior grid splits into {n_comp} disconnected pieces")
    return DiscretizedGenerator(A.tocsr(), g, float(epsilon))


@dataclass
class EigenResult:
    lam: float
    eigenfunction: np.ndarray
    residual: float
    iterations: int
    converged: bool = True
    flags: list = field(default_factory=list)


def principal_eigen(genr, tol_eig=None, max_iter=20000):
    """Inverse power iteration with one sparse LU factorization.

    The eigenvector is normalized to max-norm 1 with a positive largest
    entry; the eigenvalue is the Rayleigh quotient <v, A v>/<v, v>.
    """
    A = genr.matrix.tocsc()
    norm_inf = float(abs(A).sum(axis=1).max())
    tol = 1e-10 * norm_inf if tol_eig is None else float(tol_eig)
    flags = []
    try:
        lu = splu(A)
    except RuntimeError:
        lu = splu((A + 1e-8 * sp.identity(A.shape[0], format="csc")).tocsc())
        flags.append("shift-restart")
    v = np.ones(A.shape[0])
    lam = np.nan
    residual = np.inf
    converged = False
    it = 0
    signs_flipped = 0
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        k = int(np.argmax(np.abs(w)))
        if w[k] < 0:
            signs_flipped += 1
        v = w / w[k]
        if not np.all(np.isfinite(v)):
            raise NumericalError("inverse iteration produced non-finite values")
        Av = A @ v
        lam = float(v @ Av / (v @ v))
        residual = float(np.max(np.abs(Av - lam * v)))
        if residual <= tol:
            converged = True
            break
    if signs_flipped > it // 2 and not converged:
        raise NumericalError("iterates alternate sign; dominant eigenvalue is not real and simple")
    if not converged:
        flags.append("not-converged")
    if np.min(v) <= 0:
        flags.append("non-positive eigenfunction")
    return EigenResult(lam, v, residual, it, converged, flags)


def _refined(spec):
    return GridSpec(tuple(2 * n + 1 for n in spec.points_per_axis))


@dataclass
class EigenRateTable:
    rows: list  # dicts: epsilon, lambda, eps_times_lambda, resolved
    flags: list
    estimate: RateEstimate


def eigen_rate(model, gains, dom, epsilon_list, grid, refine_tol=0.02, tol_eig=None):
    """(eps, lambda_eps, eps*lambda_eps) for decreasing eps, with a grid
    refinement check (halved spacing) at the smallest eps."""
    eps = [float(e) for e in epsilon_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon_list must be strictly decreasing")
    if not isinstance(grid, GridSpec):
        grid = GridSpec(grid)
    rows, flags = [], []
    for e in eps:
        res = principal_eigen(assemble(model, gains, dom, grid, e), tol_eig)
        flags += [f"eps={e:g}: {f}" for f in res.flags]
        rows.append({"epsilon": e, "lambda": res.lam, "eps_times_lambda": e * res.lam,
                     "resolved": True})
    fine = principal_eigen(assemble(model, gains, dom, _refined(grid), eps[-1]), tol_eig)
    change = abs(fine.lam - rows[-1]["lambda"]) / max(abs(fine.lam), 1e-300)
    if change >= refine_tol:
        rows[-1]["resolved"] = False
        flags.append("under-resolved")
    est = RateEstimate(max(rows[-1]["eps_times_lambda"], 0.0), "pde", change * rows[-1]["eps_times_lambda"],
                       list(flags), {"epsilon": eps[-1], "refinement_change": change,
                                     "points_per_axis": list(grid.points_per_axis)})
    return EigenRateTable(rows, flags, est)


def moment_boundary_test(lambda_eps, epsilon, R_list, rtol=1e-12):
    """Classify E[exp(R tau / eps)] as finite (R/eps < lambda) or infinite.

    Returns (threshold R* = eps * lambda, list of (R, label)).
    """
    thr = float(epsilon) * float(lambda_eps)
    out = []
    for R in R_list:
        if abs(R - thr) <= rtol * max(abs(thr), 1e-300):
            label = "boundary"
        elif R / epsilon < lambda_eps:
            label = "finite"
        else:
            label = "infinite"
        out.append((float(R), label))
    return thr, out
