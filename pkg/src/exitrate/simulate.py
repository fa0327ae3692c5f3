"""Trajectory simulation, first-exit detection and survival statistics.

Stochastic paths use Euler-Maruyama

    x_{k+1} = x_k + f(x_k) dt + sqrt(eps dt) sigma(x_k) xi_k

where ``xi_k`` is drawn from the counter-based stream keyed by
``(seed, stream_id, k)``.  A trajectory's output therefore does not depend on
which batch or thread simulated it.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from statsmodels.stats.proportion import proportion_confint

from . import rng
from .domain import Box
from .errors import DomainError, NumericalError
from .model import closed_loop_matrix, eigenvalues, is_hurwitz


@dataclass(frozen=True)
class SdeConfig:
    epsilon: float
    dt: float
    t_max: float
    seed: int = 0
    stream_id: int = 0
    # "linear": interpolate the signed distance across the crossing step.
    # "bridge": additionally test for excursions between grid points with the
    # Brownian-bridge crossing probability (half-space approximation).
    exit_correction: str = "linear"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max >= self.dt:
            raise ValueError("t_max must be at least dt")
        if self.exit_correction not in ("linear", "bridge"):
            raise ValueError(f"unknown exit correction {self.exit_correction!r}")


@dataclass(frozen=True)
class DiscretePath:
    """Piecewise-linear path sampled at ``times`` (N+1,) with ``states`` (N+1, d)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        x = np.asarray(self.states, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != t.size or t.size < 2:
            raise ValueError("need at least two nodes and one state per node")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise ValueError("path has non-finite entries")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @classmethod
    def uniform(cls, T, states):
        states = np.asarray(states, dtype=float)
        return cls(np.linspace(0.0, T, states.shape[0]), states)

    @property
    def T(self):
        return float(self.times[-1] - self.times[0])

    @property
    def n_segments(self):
        return self.times.size - 1

    @property
    def d(self):
        return self.states.shape[1]

    def is_uniform(self, tol=1e-12):
        dt = np.diff(self.times)
        return bool(np.max(np.abs(dt - dt.mean())) <= tol * max(1.0, self.T))

    def at(self, t):
        """Linear interpolation of the path at times ``t``."""
        t = np.asarray(t, dtype=float)
        return np.stack(
            [np.interp(t, self.times, self.states[:, j]) for j in range(self.d)], axis=-1
        )


@dataclass(frozen=True)
class ExitSample:
    exited: bool
    tau: float
    x_exit: np.ndarray


def _affine(M, X):
    # fixed column order keeps batch and single-trajectory results identical
    out = X[:, 0:1] * M[:, 0]
    for j in range(1, M.shape[1]):
        out = out + X[:, j:j + 1] * M[:, j]
    return out


def _noise(sigma, X, Z):
    if sigma.is_constant:
        return _affine(sigma.matrix, Z)
    return sigma.diagonal_values(X) * Z


def _normal_variance(sigma, dom, X):
    """Diffusion variance along the outward normal of the nearest boundary piece."""
    if isinstance(dom, Box):
        gap = np.minimum(X - dom.lower, dom.upper - X)
        j = np.argmin(gap, axis=1)
        if sigma.is_constant:
            return np.sum(sigma.matrix**2, axis=1)[j]
        diag = sigma.diagonal_values(X)
        return diag[np.arange(X.shape[0]), j] ** 2
    off = X - dom.center
    nrm = np.sqrt(np.sum(off**2, axis=1, keepdims=True))
    n = off / np.where(nrm > 0, nrm, 1.0)
    if sigma.is_constant:
        v = n @ sigma.matrix
        return np.sum(v**2, axis=1)
    return np.sum((sigma.diagonal_values(X) * n) ** 2, axis=1)


def _n_steps(horizon, dt):
    n = int(math.ceil(horizon / dt - 1e-9))
    return max(n, 1)


def _simulate_batch(M, sigma, dom, cfg, x0, stream_ids, horizon, record=False):
    """Run trajectories for ``stream_ids`` until exit or ``horizon``.

    Returns (exited, tau, x_exit, recorded) where ``recorded`` is a list of
    per-step state arrays (only for single-trajectory recording).
    """
    n = stream_ids.size
    d = M.shape[0]
    dt = cfg.dt
    amp = math.sqrt(cfg.epsilon * dt)
    bridge = cfg.exit_correction == "bridge"
    n_rand = d + (1 if bridge else 0)
    exited = np.zeros(n, dtype=bool)
    tau = np.full(n, float(horizon))
    x_exit = np.empty((n, d))
    pos = np.arange(n)
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    g = dom.boundary_distance(x)
    recorded = [x[0].copy()] if record else None
    steps = _n_steps(horizon, dt)
    for k in range(steps):
        if pos.size == 0:
            break
        U = rng.uniforms(cfg.seed, stream_ids[pos], k, n_rand)
        Z = rng.normals_from_uniforms(U[:, :d])
        x_new = x + _affine(M, x) * dt + amp * _noise(sigma, x, Z)
        if not np.all(np.isfinite(x_new)):
            bad = int(stream_ids[pos[~np.all(np.isfinite(x_new), axis=1)][0]])
            raise NumericalError(f"non-finite state at step {k + 1} (stream {bad})")
        g_new = dom.boundary_distance(x_new)
        crossed = g_new <= 0
        frac = np.ones(pos.size)
        if np.any(crossed):
            frac[crossed] = g[crossed] / (g[crossed] - g_new[crossed])
        if bridge:
            var = _normal_variance(sigma, dom, x)
            with np.errstate(over="ignore", under="ignore"):
                p_cross = np.exp(-2.0 * g * np.maximum(g_new, 0.0) / (cfg.epsilon * var * dt))
            hit = (~crossed) & (U[:, d] < p_cross)
            if np.any(hit):
                frac[hit] = g[hit] / (g[hit] + g_new[hit])
                crossed = crossed | hit
        if np.any(crossed):
            idx = pos[crossed]
            f = frac[crossed]
            exited[idx] = True
            tau[idx] = np.minimum((k + f) * dt, horizon)
            x_exit[idx] = x[crossed] + f[:, None] * (x_new[crossed] - x[crossed])
            keep = ~crossed
            pos, x_new, g_new = pos[keep], x_new[keep], g_new[keep]
        x, g = x_new, g_new
        if record and pos.size:
            recorded.append(x[0].copy())
    x_exit[pos] = x
    return exited, tau, x_exit, recorded


def _check_start(dom, x0):
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != dom.d:
        raise DomainError(f"x0 has dimension {x0.size}, domain has {dom.d}")
    if not bool(dom.contains(x0)):
        raise DomainError(f"x0={x0.tolist()} is not inside the domain")
    return x0


def simulate_sde(model, gains, dom, cfg, x0):
    """One Euler-Maruyama trajectory on stream ``cfg.stream_id``.

    Stops at the first step that leaves ``dom``; the exit time is refined by
    linear interpolation of the signed boundary distance and the returned
    path ends at the interpolated crossing.
    """
    x0 = _check_start(dom, x0)
    M = closed_loop_matrix(model, gains)
    ids = np.array([cfg.stream_id], dtype=np.uint64)
    exited, tau, x_exit, recorded = _simulate_batch(
        M, model.sigma, dom, cfg, x0, ids, cfg.t_max, record=True
    )
    states = np.array(recorded)
    times = np.arange(states.shape[0]) * cfg.dt
    if exited[0]:
        if tau[0] > times[-1]:
            times = np.append(times, tau[0])
            states = np.vstack([states, x_exit[0]])
        else:
            states[-1] = x_exit[0]
    else:
        times[-1] = min(times[-1], cfg.t_max)
    sample = ExitSample(bool(exited[0]), float(tau[0]), x_exit[0].copy())
    return DiscretePath(times, states), sample


def simulate_exit_times(model, gains, dom, cfg, x0, n_traj, horizon=None, threads=1,
                        chunk=20000):
    """Exit times for streams ``cfg.stream_id + 0 .. n_traj-1``.

    Returns (exited, tau) in stream order.  Trajectories are split into
    chunks which may run on a thread pool; results do not depend on either.
    """
    x0 = _check_start(dom, x0)
    M = closed_loop_matrix(model, gains)
    horizon = cfg.t_max if horizon is None else float(horizon)
    ids = cfg.stream_id + np.arange(n_traj, dtype=np.uint64)
    parts = [ids[i:i + chunk] for i in range(0, n_traj, chunk)]

    def run(part):
        e, t, _, _ = _simulate_batch(M, model.sigma, dom, cfg, x0, part, horizon)
        return e, t

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]
    exited = np.concatenate([r[0] for r in results])
    tau = np.concatenate([r[1] for r in results])
    return exited, tau


@dataclass
class SurvivalResult:
    T: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_traj: int
    survivors: np.ndarray
    warnings: list = field(default_factory=list)


def estimate_survival(model, gains, dom, cfg, x0, T_list, n_traj, threads=1):
    """Fraction of trajectories still inside at each time in ``T_list``,
    with 95% Wilson intervals."""
    if n_traj < 100:
        raise ValueError(f"n_traj must be at least 100, got {n_traj}")
    T = np.asarray(T_list, dtype=float)
    if T.size == 0 or np.any(np.diff(T) <= 0) or T[0] <= 0:
        raise ValueError("T_list must be positive and strictly increasing")
    if T[-1] > cfg.t_max * (1 + 1e-12):
        raise ValueError(f"T_list exceeds t_max={cfg.t_max}")
    exited, tau = simulate_exit_times(model, gains, dom, cfg, x0, n_traj, horizon=T[-1],
                                      threads=threads)
    # survivors carry tau == horizon with exited False
    exit_times = np.sort(tau[exited])
    survivors = n_traj - np.searchsorted(exit_times, T, side="right")
    p_hat = survivors / n_traj
    lo, hi = _wilson(survivors, n_traj, alpha=0.05)
    notes = []
    if survivors[0] == 0:
        notes.append("degenerate-estimate: no survivors at the smallest T")
    return SurvivalResult(T, p_hat, np.asarray(lo), np.asarray(hi), n_traj,
                          np.asarray(survivors), notes)


@dataclass
class RateEstimate:
    value: float
    method: str
    uncertainty: float = float("nan")
    flags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"rate must be nonnegative, got {self.value}")

    def to_dict(self):
        return {
            "value": self.value,
            "method": self.method,
            "uncertainty": self.uncertainty,
            "flags": list(self.flags),
            "metadata": self.metadata,
        }


FIT_WINDOW = (1e-3, 0.5)


def exit_rate_mc(surv, window=FIT_WINDOW):
    """Slope of -log p_hat(T) against T over the exponential-tail window,
    weighted by the binomial variance of log p_hat."""
    p = surv.p_hat
    T = surv.T
    flags = list(surv.warnings)
    if np.all(p >= 1.0):
        return RateEstimate(0.0, "mc", 0.0, flags + ["no-exit-observed"],
                            {"n_traj": surv.n_traj, "fit_points": 0})
    use = (p >= window[0]) & (p <= window[1])
    if use.sum() < 3:
        use = (p > 0) & (p < 1)
        flags.append("outside-fit-window")
        if use.sum() < 3:
            raise NumericalError("fewer than 3 survival points with 0 < p_hat < 1")
    t, q = T[use], p[use]
    y = -np.log(q)
    sd = np.sqrt((1 - q) / (surv.n_traj * q))
    sd = np.where(sd > 0, sd, np.min(sd[sd > 0]) if np.any(sd > 0) else 1.0)
    coef, cov = np.polyfit(t, y, 1, w=1.0 / sd, cov="unscaled")
    slope = float(coef[0])
    se = float(math.sqrt(cov[0, 0]))
    return RateEstimate(max(slope, 0.0), "mc", se, flags, {
        "n_traj": surv.n_traj,
        "fit_points": int(use.sum()),
        "fit_T": [float(v) for v in t],
        "intercept": float(coef[1]),
    })


def _rk4_batch(M, X, h, steps, observe=None):
    out = [X]
    for k in range(steps):
        k1 = _affine(M, X)
        k2 = _affine(M, X + 0.5 * h * k1)
        k3 = _affine(M, X + 0.5 * h * k2)
        k4 = _affine(M, X + h * k3)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"non-finite state at RK4 step {k + 1}")
        if observe is not None:
            if not observe(k + 1, X):
                break
        else:
            out.append(X)
    return out


def simulate_deterministic(model, gains, x0, T, dt):
    """Classical RK4 on the noise-free closed loop; the step is adjusted so
    the grid ends exactly at ``T``."""
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    M = closed_loop_matrix(model, gains)
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    steps = _n_steps(T, dt)
    h = T / steps
    states = np.vstack(_rk4_batch(M, x0, h, steps))
    return DiscretePath(np.arange(steps + 1) * h, states)


@dataclass(frozen=True)
class InvarianceConfig:
    delta_frac: float = 0.05
    horizon: float = None
    points_per_axis: int = 5
    dt: float = None
    starts: tuple = None


@dataclass(frozen=True)
class InvarianceVerdict:
    kind: str  # "yes-by-hurwitz" | "yes-by-simulation" | "no-evidence"
    omega: dict = None
    note: str = ""

    @property
    def nonempty(self):
        return self.kind != "no-evidence"


def invariant_set_nonempty(model, gains, dom, check_cfg=None):
    """Evidence that the noise-free closed loop has a nonempty invariant set in D.

    A Hurwitz closed loop with the origin in D is accepted outright.  Otherwise
    the flow is simulated from a grid in Omega = D shrunk by delta_frac times
    the inradius; only if every sampled trajectory stays in Omega is a
    positive verdict returned.  Simulation verdicts are evidence, not proof.
    """
    cc = check_cfg or InvarianceConfig()
    M = closed_loop_matrix(model, gains)
    origin = np.zeros(dom.d)
    hurwitz = is_hurwitz(M)
    if hurwitz and bool(dom.contains(origin)):
        return InvarianceVerdict("yes-by-hurwitz", None, "closed loop Hurwitz and 0 in D")
    try:
        omega = dom.inflate(-cc.delta_frac * dom.inradius)
    except DomainError as exc:
        raise DomainError(f"invariance region is empty: {exc}") from exc
    eig = eigenvalues(M)
    if cc.horizon is not None:
        horizon = float(cc.horizon)
    elif hurwitz:
        horizon = 50.0 / float(np.min(np.abs(eig.real)))
    else:
        horizon = 50.0
    dt = cc.dt if cc.dt is not None else 0.01 / max(1.0, float(np.max(np.abs(eig))))
    if cc.starts is not None:
        X0 = np.atleast_2d(np.asarray(cc.starts, dtype=float))
        if not np.all(omega.contains(X0)):
            raise DomainError("explicit invariance start points must lie in Omega")
    else:
        from .domain import interior_grid

        X0 = np.array(interior_grid(omega, cc.points_per_axis).points)
    steps = _n_steps(horizon, dt)
    h = horizon / steps
    state = {"ok": True}

    def observe(k, X):
        if not np.all(omega.contains(X)):
            state["ok"] = False
            return False
        return True

    _rk4_batch(M, X0, h, steps, observe)
    desc = {"omega": omega.describe(), "starts": int(X0.shape[0]), "horizon": horizon}
    if state["ok"]:
        return InvarianceVerdict("yes-by-simulation", desc,
                                 "all sampled trajectories stayed in Omega (evidence only)")
    return InvarianceVerdict("no-evidence", desc, "a sampled trajectory left Omega")


def sup_distances(model, gains, cfg, x0, T, references, n_traj, threads=1, chunk=20000):
    """sup over grid times of |x^eps(t) - phi(t)| for each reference path.

    Trajectories are not stopped at any boundary.  References are evaluated on
    the SDE grid by linear interpolation.  Returns an (n_traj, n_ref) array.
    """
    M = closed_loop_matrix(model, gains)
    x0 = np.asarray(x0, dtype=float).ravel()
    steps = _n_steps(T, cfg.dt)
    times = np.arange(steps + 1) * (T / steps)
    refs = np.stack([r.at(times) for r in references])  # (n_ref, steps+1, d)
    h = T / steps
    amp = math.sqrt(cfg.epsilon * h)
    ids = cfg.stream_id + np.arange(n_traj, dtype=np.uint64)
    parts = [ids[i:i + chunk] for i in range(0, n_traj, chunk)]
    d = M.shape[0]

    def run(part):
        x = np.tile(x0, (part.size, 1))
        best = np.sqrt(np.sum((x[None] - refs[:, 0][:, None]) ** 2, axis=-1))
        for k in range(steps):
            Z = rng.normals(cfg.seed, part, k, d)
            x = x + _affine(M, x) * h + amp * _noise(model.sigma, x, Z)
            if not np.all(np.isfinite(x)):
                raise NumericalError(f"non-finite state at step {k + 1}")
            dist = np.sqrt(np.sum((x[None] - refs[:, k + 1][:, None]) ** 2, axis=-1))
            np.maximum(best, dist, out=best)
        return best.T

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]
    return np.vstack(results)


def _wilson(k, n, alpha):
    lo, hi = proportion_confint(k, n, alpha=alpha, method="wilson")
    # the library can round a hair past the unit interval at k = 0 or k = n
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def wilson_bounds(k, n, z):
    """Wilson score interval at ``z`` standard errors."""
    return _wilson(k, n, 2 * norm.sf(z))
