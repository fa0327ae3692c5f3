"""Cross-checks between the Monte Carlo, eigenvalue and variational rates,
and Monte Carlo checks of the small-noise tube bounds."""

import math
from dataclasses import dataclass

import numpy as np

from .action import action, minimize_multistart
from .domain import GridSpec
from .simulate import (DiscretePath, SdeConfig, estimate_survival, exit_rate_mc,
                       simulate_deterministic, sup_distances, wilson_bounds)
from .spectrum import assemble, eigen_rate, principal_eigen

Z_BOUND = 3.0


@dataclass
class BoundCheck:
    name: str
    probability: float
    bound: float
    ci_lo: float
    ci_hi: float
    n_traj: int
    passed: bool
    detail: dict

    def to_dict(self):
        return {
            "name": self.name, "probability": self.probability, "bound": self.bound,
            "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "n_traj": self.n_traj,
            "passed": self.passed, "detail": self.detail,
        }


def lemma_checks(model, gains, dom, x0, epsilon, delta, gamma, T, n_traj, dt=1e-3,
                 n_per_T=64, seed=0, stream_id=1_000_000_000, threads=1):
    """Tube lower bound and tail upper bound at fixed (eps, delta, gamma, T).

    Lower bound: phi is the free-end action minimizer confined to D shrunk by
    delta; P{rho(x, phi) < delta} >= exp(-(S(phi) + gamma)/eps).

    Upper bound: alpha is the confined minimum on D inflated by delta, and
    Phi is sampled as phi0 + theta (phi_alpha - phi0) for theta in
    {0, .25, .5, .75, .95} (phi0 the noise-free path), keeping members with
    action below alpha; P{d(x, Phi) >= delta} <= exp(-(alpha - gamma)/eps).

    Each check passes unless the 3-sigma Wilson interval excludes the bound
    on the wrong side.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    N = max(2, int(round(n_per_T * T)))
    phi, s_phi, _, _ = minimize_multistart(model, gains, dom.inflate(-delta), T, N, x0)
    phi_a, s_alpha, _, _ = minimize_multistart(model, gains, dom.inflate(delta), T, N, x0)
    alpha = s_alpha.value
    phi0 = simulate_deterministic(model, gains, x0, T, T / N)
    family = []
    for theta in (0.0, 0.25, 0.5, 0.75, 0.95):
        cand = DiscretePath(phi0.times, phi0.states + theta * (phi_a.states - phi0.states))
        if action(model, gains, cand).value < alpha:
            family.append(cand)
    cfg = SdeConfig(epsilon, dt, T, seed=seed, stream_id=stream_id)
    dist = sup_distances(model, gains, cfg, x0, T, [phi] + family, n_traj, threads)
    in_tube = int(np.sum(dist[:, 0] < delta))
    far = int(np.sum(np.max(dist[:, 1:], axis=1) >= delta))
    lo1, hi1 = wilson_bounds(in_tube, n_traj, Z_BOUND)
    lo2, hi2 = wilson_bounds(far, n_traj, Z_BOUND)
    b1 = math.exp(-(s_phi.value + gamma) / epsilon)
    b2 = math.exp(-(alpha - gamma) / epsilon)
    lower = BoundCheck("tube-lower-bound", in_tube / n_traj, b1, float(lo1), float(hi1),
                       n_traj, bool(hi1 >= b1),
                       {"action_phi": s_phi.value, "gamma": gamma, "delta": delta})
    upper = BoundCheck("tail-upper-bound", far / n_traj, b2, float(lo2), float(hi2),
                       n_traj, bool(lo2 <= b2),
                       {"alpha": alpha, "family_size": len(family), "gamma": gamma,
                        "delta": delta})
    return lower, upper


def cross_check(model, gains, dom, x0, sec, seed=0, threads=1):
    """Run all three estimators on one instance (``sec`` is a VerifySection)."""
    from .action import asymptotic_rate

    flags = []
    cfg = SdeConfig(sec.epsilon, sec.dt, sec.T_list[-1], seed=seed, stream_id=sec.stream_id)
    surv = estimate_survival(model, gains, dom, cfg, x0, sec.T_list, sec.n_traj, threads)
    mc = exit_rate_mc(surv)
    flags += [f"mc: {f}" for f in mc.flags]
    spec = GridSpec(sec.points_per_axis)
    pde_fixed = principal_eigen(assemble(model, gains, dom, spec, sec.epsilon))
    flags += [f"pde: {f}" for f in pde_fixed.flags]
    table = eigen_rate(model, gains, dom, sec.epsilon_list, spec)
    flags += [f"eigen-rate: {f}" for f in table.flags]
    rs = sec.rate
    var = asymptotic_rate(model, gains, dom, rs.T_list, rs.n_per_T, x0, rs.margin,
                          rs.levels, rs.converge_tol)
    flags += [f"variational: {f}" for f in var.flags]
    eps = sec.epsilon
    r_hat = var.value
    eps_lam_small = table.rows[-1]["eps_times_lambda"]
    report = {
        "epsilon": eps,
        "lambda_mc": mc.value,
        "lambda_mc_stderr": mc.uncertainty,
        "lambda_pde": pde_fixed.lam,
        "eps_lambda_mc": eps * mc.value,
        "eps_lambda_pde": eps * pde_fixed.lam,
        "r_hat": r_hat,
        "eigen_rate_table": table.rows,
        "discrepancies": {
            "mc_vs_pde_lambda": abs(mc.value - pde_fixed.lam),
            "mc_vs_pde_eps_lambda": eps * abs(mc.value - pde_fixed.lam),
            "pde_smallest_eps_vs_r_hat": abs(eps_lam_small - r_hat),
            "mc_eps_lambda_vs_r_hat": abs(eps * mc.value - r_hat),
        },
        "variational_table": var.metadata["table"],
    }
    if sec.lemma is not None:
        lm = sec.lemma
        low, up = lemma_checks(model, gains, dom, x0, lm.epsilon, lm.delta,
                               lm.gamma_per_T * lm.T, lm.T, lm.n_traj, lm.dt, lm.n_per_T,
                               seed, lm.stream_id, threads)
        report["bound_checks"] = [low.to_dict(), up.to_dict()]
    report["flags"] = flags
    return report
