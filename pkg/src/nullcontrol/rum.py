"""Penalized duality solver in the reflexive control space L^q.

For a power index k >= 0 (control produced as an exact (2k+1)-th power) the
conjugate pair is (2k+2, q) with q = (2k+2)/(2k+1). The objective is

    J(h) = (1/q) integral exp((q/2) s rho eta) (s eta)^{-3q/2} |h|^q
         + (1/(q*eps)) ||zeta(T)||_q^q,

where zeta solves the forward problem from zeta0 with source h*chi. The
optimality system couples the terminal condition
phi_T = -(1/eps) * odd_root(zeta(T)) with the adjoint solve and the duality
map

    odd_root(h) = W * phi * chi,     W = exp(-(q/2) s rho eta) (s eta)^{3q/2},

so the produced control is an exact odd power of a regular grid function.
The primary solver damps this fixed-point map with a J-monotone line
search; the discrete quadratures are chosen duality-consistent, which makes
the map direction a strict descent direction for J away from the fixed
point. A relaxation step in the root variable serves as fallback when the
control-space step stagnates in round-off.

General integer powers n >= 1 (duality map sign(x)|x|^{1/n}, q=(n+1)/n) are
supported through the `power` argument; odd n = 2k+1 reproduces the k-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .carleman import WeightSystem
from .errors import ConfigurationError, SolverError, StagnationError
from .grid import (
    Cutoff,
    Grids,
    SpaceTimeField,
    space_lp_norm,
    weighted_lq_norm,
    weighted_power_integral,
)
from .heat import ParabolicOperator, TimeStepper, adjoint_solve, forward_solve


def odd_root(x, n: int):
    """sign(x)|x|^{1/n}: inverse of x -> x^n for odd n, of |x|^{n-1}x for any n."""
    x = np.asarray(x)
    return np.sign(x) * np.abs(x) ** (1.0 / n)


@dataclass(frozen=True)
class RumProblem:
    """One penalized minimization instance.

    Exactly one of `k` (control as (2k+1)-th power; k=0 is the linear case)
    or `power` (general n >= 1) must be given.
    """

    operator: ParabolicOperator
    zeta0: np.ndarray
    weights: WeightSystem
    cutoff: Cutoff
    grids: Grids
    eps: float
    k: int = None
    power: int = None
    scheme: str = "implicit-euler"

    def __post_init__(self):
        if self.k is None and self.power is None:
            raise ConfigurationError("give k or power")
        if self.k is not None:
            if self.k < 0:
                raise ConfigurationError(f"k must be >= 0, got {self.k}")
            if self.power is not None and self.power != 2 * self.k + 1:
                raise ConfigurationError(
                    f"inconsistent k={self.k} and power={self.power}"
                )
            object.__setattr__(self, "power", 2 * self.k + 1)
        else:
            if self.power < 1:
                raise ConfigurationError(f"power must be >= 1, got {self.power}")
            if self.power % 2 == 1:
                object.__setattr__(self, "k", (self.power - 1) // 2)
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")
        if self.scheme != "implicit-euler":
            raise ConfigurationError(
                "the duality-consistent optimality system requires implicit-euler"
            )
        z0 = np.asarray(self.zeta0, dtype=float)
        if z0.shape != (self.grids.space.nx,):
            raise ConfigurationError(
                f"zeta0 shape {z0.shape} does not match nx={self.grids.space.nx}"
            )
        object.__setattr__(self, "zeta0", z0)

    @property
    def q(self) -> float:
        # conjugate exponent: 1/q + 1/(power+1) = 1
        return (self.power + 1) / self.power


@dataclass
class RumIterate:
    """A control with its consistent state, objective value and diagnostics."""

    h: SpaceTimeField
    zeta: SpaceTimeField
    J: float
    phi: SpaceTimeField = None
    residual: float = None
    index: int = 0
    relax_used: float = None


@dataclass
class RumResult:
    problem: RumProblem
    iterate: RumIterate
    converged: bool
    reason: str
    iterations: int
    J_history: list
    residual_history: list
    terminal_q_norm: float
    weighted_control_norm: float


class _Workspace:
    """Per-problem caches: stepper, weight arrays, quadratures."""

    def __init__(self, problem: RumProblem):
        self.problem = problem
        self.grids = problem.grids
        self.n = problem.power
        self.q = problem.q
        self.stepper = TimeStepper(problem.operator, problem.grids, problem.scheme)
        self.chi = problem.cutoff.chi
        wlog = problem.weights.rum_weight_log(self.q)
        self.w_log = wlog.values
        self.W = np.exp(self.w_log)  # 0 at the endpoint rows
        self.j_weight_log = -self.w_log / self.q  # J integrand = exp(q * this)|h|^q
        self.quad2d = problem.grids.quad_weights_2d()
        self.space_quad = problem.grids.space.quad_weights
        self.l2quad = self.quad2d  # reused for residual norms

    def forward(self, y0, source_values):
        return forward_solve(self.problem.operator, y0, source_values, self.grids,
                             stepper=self.stepper)

    def state_for(self, h_values):
        return self.forward(self.problem.zeta0, h_values * self.chi[None, :])

    def J_value(self, h_values, zetaT):
        term1 = weighted_power_integral(h_values, self.j_weight_log, self.q, self.quad2d) / self.q
        term2 = float(np.sum(self.space_quad * np.abs(zetaT) ** self.q))
        return term1 + term2 / (self.q * self.problem.eps)

    def el_state(self, it: RumIterate):
        """Adjoint field, duality-map target W*phi*chi, proposed control, residual.

        The residual is the normalized optimality gap
        ||odd_root(h) - W phi chi||_2 / max(||W phi chi||_2, ||odd_root(h)||_2),
        0 when both sides vanish (the all-zero fixed point).
        """
        zT = it.zeta.values[-1]
        phiT = -odd_root(zT, self.n) / self.problem.eps
        phi = adjoint_solve(self.problem.operator, phiT, self.grids,
                            stepper=self.stepper)
        target = self.W * phi.values * self.chi[None, :]
        proposal = target**self.n
        root = odd_root(it.h.values, self.n)
        num = math.sqrt(float(np.sum(self.l2quad * (root - target) ** 2)))
        den = max(math.sqrt(float(np.sum(self.l2quad * target**2))),
                  math.sqrt(float(np.sum(self.l2quad * root**2))))
        return phi, target, proposal, (num / den if den > 0.0 else 0.0)

    def iterate_from(self, h_values, index=0, relax_used=None):
        zeta = self.state_for(h_values)
        J = self.J_value(h_values, zeta.values[-1])
        return RumIterate(h=SpaceTimeField(h_values, self.grids), zeta=zeta, J=J,
                          index=index, relax_used=relax_used)


def _accepts(J_new, J_old):
    # the step direction is a strict descent direction in exact arithmetic;
    # a few ulps of slack keep float noise in the quadrature sums from
    # freezing the contraction near the fixed point
    return J_new <= J_old + 4.0 * np.spacing(abs(J_old))


def _line_search(ws: _Workspace, it: RumIterate, direction, relax, max_halvings=30):
    """Relax toward `direction` in control space, halving until J does not increase."""
    gamma = relax
    h_old = it.h.values
    for _ in range(max_halvings + 1):
        h_new = (1.0 - gamma) * h_old + gamma * direction
        zeta_new = ws.state_for(h_new)
        J_new = ws.J_value(h_new, zeta_new.values[-1])
        if _accepts(J_new, it.J):
            new_it = RumIterate(h=SpaceTimeField(h_new, ws.grids), zeta=zeta_new,
                                J=J_new, index=it.index + 1, relax_used=gamma)
            return new_it
        gamma *= 0.5
    raise StagnationError(
        f"line search stagnated at iteration {it.index} (J={it.J:.6e})", iterate=it
    )


def evaluate_J(problem: RumProblem, h) -> float:
    """Objective value for a control h (forward-solves the state)."""
    ws = _Workspace(problem)
    h_values = h.values if isinstance(h, SpaceTimeField) else np.asarray(h)
    zeta = ws.state_for(h_values)
    return ws.J_value(h_values, zeta.values[-1])


def make_iterate(problem: RumProblem, h=None) -> RumIterate:
    """Consistent iterate (state solved, J evaluated) for a control, default 0."""
    ws = _Workspace(problem)
    if h is None:
        h_values = np.zeros(problem.grids.shape)
    else:
        h_values = np.array(h.values if isinstance(h, SpaceTimeField) else h, dtype=float)
    return ws.iterate_from(h_values)


def el_residual(problem: RumProblem, iterate: RumIterate) -> float:
    """Normalized optimality gap ||odd_root(h) - W phi chi||_2 / max(1, ||W phi chi||_2)."""
    ws = _Workspace(problem)
    _, _, _, res = ws.el_state(iterate)
    return res


def fixed_point_step(problem: RumProblem, iterate: RumIterate, relax: float) -> RumIterate:
    """One damped step h <- (1-relax) h + relax (W phi chi)^n with J-monotone halving."""
    if not (0.0 < relax <= 1.0):
        raise ConfigurationError(f"relax must be in (0, 1], got {relax}")
    ws = _Workspace(problem)
    phi, _, proposal, res = ws.el_state(iterate)
    it = replace(iterate, phi=phi, residual=res)
    return _line_search(ws, it, proposal, relax)


def solve_rum(problem: RumProblem, relax0: float = 0.5, tol: float = 1e-8,
              max_iter: int = 400, h0=None) -> RumResult:
    """Iterate the damped optimality map until the residual or J stalls.

    Each step relaxes the control toward the duality-map proposal under a
    J-monotone line search; a safeguarded depth-1 Anderson (secant)
    extrapolation of the same map is tried first and accepted only when it
    also does not increase J, which removes the slow-mode crawl of plain
    damping. Stops when the Euler-Lagrange residual drops below tol, or
    when J has sat at float granularity for a streak with no residual
    progress left. Exhausting max_iter or stagnating in the control-space
    and root-space line searches returns a flagged (non-converged) result
    rather than raising.
    """
    if tol <= 0:
        raise ConfigurationError(f"tol must be > 0, got {tol}")
    ws = _Workspace(problem)
    if h0 is None:
        it = ws.iterate_from(np.zeros(problem.grids.shape))
    else:
        h_values = np.array(h0.values if isinstance(h0, SpaceTimeField) else h0, dtype=float)
        it = ws.iterate_from(h_values)
    J_history = [it.J]
    residual_history = []
    relax = relax0
    converged, reason = False, "max_iter"
    flat_steps = 0
    h_prev, F_prev = None, None
    while True:
        phi, _, proposal, res = ws.el_state(it)
        it = replace(it, phi=phi, residual=res)
        residual_history.append(res)
        if res <= tol:
            converged, reason = True, "el_residual"
            break
        if it.index >= max_iter:
            break
        # J at float granularity on a streak with no residual progress left
        if (flat_steps >= 10
                and res > 0.7 * residual_history[-min(10, len(residual_history))]):
            converged, reason = True, "J_stall"
            break
        h = it.h.values
        F = proposal - h
        new_it = None
        if F_prev is not None:
            new_it = _anderson_step(ws, it, h, F, h_prev, F_prev, relax)
        h_prev, F_prev = h, F
        if new_it is None:
            try:
                new_it = _line_search(ws, it, proposal, relax)
            except StagnationError:
                # fallback: relax the root variable instead of the control
                root = odd_root(h, ws.n)
                target = ws.W * phi.values * ws.chi[None, :]
                try:
                    new_it = _root_space_step(ws, it, root, target, relax)
                except StagnationError:
                    converged, reason = False, "stagnation"
                    break
            relax = min(relax0, 2.0 * new_it.relax_used)
        relJ = abs(new_it.J - it.J) / max(abs(it.J), 1e-300)
        # J changes below float granularity cannot be resolved at all
        flat_tol = max(tol * tol, 8.0 * np.finfo(float).eps)
        flat_steps = flat_steps + 1 if relJ <= flat_tol else 0
        it = new_it
        J_history.append(it.J)
    return _finish(ws, it, converged, reason, J_history, residual_history)


def _anderson_step(ws, it, h, F, h_prev, F_prev, relax):
    """Depth-1 Anderson extrapolation of the damped map; None unless it keeps J."""
    dF = F - F_prev
    den = float(np.sum(dF * dF))
    if den <= 0.0:
        return None
    theta = float(np.sum(F * dF)) / den
    h_new = h + relax * F - theta * ((h - h_prev) + relax * dF)
    zeta_new = ws.state_for(h_new)
    J_new = ws.J_value(h_new, zeta_new.values[-1])
    if not _accepts(J_new, it.J):
        return None
    return RumIterate(h=SpaceTimeField(h_new, ws.grids), zeta=zeta_new, J=J_new,
                      index=it.index + 1, relax_used=None)


def _root_space_step(ws, it, root, target, relax, max_halvings=30):
    gamma = relax
    for _ in range(max_halvings + 1):
        r_new = (1.0 - gamma) * root + gamma * target
        h_new = r_new**ws.n
        zeta_new = ws.state_for(h_new)
        J_new = ws.J_value(h_new, zeta_new.values[-1])
        if _accepts(J_new, it.J):
            return RumIterate(h=SpaceTimeField(h_new, ws.grids), zeta=zeta_new,
                              J=J_new, index=it.index + 1, relax_used=gamma)
        gamma *= 0.5
    raise StagnationError("root-space fallback stagnated", iterate=it)


def _finish(ws, it, converged, reason, J_history, residual_history):
    problem = ws.problem
    if it.residual is None:
        phi, _, _, res = ws.el_state(it)
        it = replace(it, phi=phi, residual=res)
    terminal = space_lp_norm(it.zeta.values[-1], problem.grids.space, problem.q)
    wnorm = weighted_lq_norm(it.h, problem.weights.control_norm_weight_log(), problem.q)
    return RumResult(problem=problem, iterate=it, converged=converged, reason=reason,
                     iterations=it.index, J_history=J_history,
                     residual_history=residual_history, terminal_q_norm=terminal,
                     weighted_control_norm=wnorm)


def linear_hum_oracle(problem: RumProblem, cg_tol: float = 1e-12) -> RumResult:
    """k = 0 reference solver: conjugate gradients on the normal equations.

    Solves (eps I + Lambda) phi_T = -zeta_free(T) where Lambda maps phi_T to
    the terminal state produced by the control W phi chi (source W phi chi^2),
    then reconstructs h = W phi chi. Lambda is symmetric positive
    semidefinite by the exact discrete duality of the heat module.
    """
    if problem.power != 1:
        raise ConfigurationError("linear_hum_oracle requires k = 0 (power = 1)")
    ws = _Workspace(problem)
    nx = problem.grids.space.nx

    def apply_lambda(phiT):
        phi = adjoint_solve(problem.operator, phiT, problem.grids, stepper=ws.stepper)
        control = ws.W * phi.values * ws.chi[None, :]
        zeta2 = ws.forward(np.zeros(nx), control * ws.chi[None, :])
        return zeta2.values[-1]

    zeta_free = ws.forward(problem.zeta0, None)
    b = -zeta_free.values[-1]
    bnorm = math.sqrt(float(np.dot(b, b)))
    x = np.zeros(nx)
    iterations = 0
    if bnorm > 0.0:
        r = b.copy()
        p = r.copy()
        rs = float(np.dot(r, r))
        max_cg = 10 * nx
        for i in range(max_cg):
            Ap = problem.eps * p + apply_lambda(p)
            alpha = rs / float(np.dot(p, Ap))
            x = x + alpha * p
            r = r - alpha * Ap
            rs_new = float(np.dot(r, r))
            iterations = i + 1
            if math.sqrt(rs_new) <= cg_tol * bnorm:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        else:
            raise SolverError(
                f"conjugate gradients did not converge in {max_cg} iterations"
            )
    phi = adjoint_solve(problem.operator, x, problem.grids, stepper=ws.stepper)
    h_values = ws.W * phi.values * ws.chi[None, :]
    it = ws.iterate_from(h_values, index=iterations)
    phi_el, _, _, res = ws.el_state(it)
    it = replace(it, phi=phi_el, residual=res)
    return _finish(ws, it, True, "cg", [it.J], [res])


@dataclass
class SweepRow:
    eps: float
    terminal_q_norm: float
    weighted_control_norm: float
    J: float
    converged: bool
    iterations: int


@dataclass
class SweepTable:
    rows: list
    slope: float
    weighted_norm_variation: float


def epsilon_sweep(problem: RumProblem, eps_list, relax0: float = 0.5,
                  tol: float = 1e-8, max_iter: int = 400) -> SweepTable:
    """Solve along a decreasing penalty ladder, warm-starting each rung.

    Emits per-rung terminal q-norm, weighted control norm and J, the
    log-log slope of the terminal norm against eps (fitted over rungs
    resolved above the numerical floor), and the relative spread of the
    weighted control norm across the ladder.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ConfigurationError("eps_list must be strictly decreasing")
    rows = []
    h_warm = None
    for eps in eps_list:
        prob = replace(problem, eps=eps)
        if prob.power == 1:
            result = linear_hum_oracle(prob)
        else:
            result = solve_rum(prob, relax0=relax0, tol=tol, max_iter=max_iter, h0=h_warm)
            h_warm = result.iterate.h
        rows.append(SweepRow(eps=eps, terminal_q_norm=result.terminal_q_norm,
                             weighted_control_norm=result.weighted_control_norm,
                             J=result.iterate.J, converged=result.converged,
                             iterations=result.iterations))
    terms = np.array([r.terminal_q_norm for r in rows])
    eps_arr = np.array([r.eps for r in rows])
    floor = 1e-13 * max(terms.max(), 1e-300)
    keep = terms > floor
    if np.sum(keep) >= 2:
        slope = float(np.polyfit(np.log(eps_arr[keep]), np.log(terms[keep]), 1)[0])
    else:
        slope = math.nan
    wnorms = np.array([r.weighted_control_norm for r in rows])
    wmin = wnorms.min()
    variation = float((wnorms.max() - wmin) / wmin) if wmin > 0 else math.inf
    return SweepTable(rows=rows, slope=slope, weighted_norm_variation=variation)


def xp_norm_diagnostic(h: SpaceTimeField, p: float, power: int) -> float:
    """Discrete parabolic-regularity norm of odd_root(h, power).

    L^p norm of the root plus L^p norms of its first time-difference and
    second space-difference quotients (difference rows/columns carry plain
    cell weights).
    """
    if p < 2 or p == math.inf:
        raise ValueError(f"p must be in [2, inf), got {p}")
    grids = h.grids
    r = odd_root(h.values, power)
    w2d = grids.quad_weights_2d()
    base = float(np.sum(w2d * np.abs(r) ** p)) ** (1.0 / p)
    dt, dx = grids.time.dt, grids.space.dx
    rt = (r[1:] - r[:-1]) / dt
    wt = dt * grids.space.quad_weights[None, :]
    dtn = float(np.sum(wt * np.abs(rt) ** p)) ** (1.0 / p)
    rxx = np.empty_like(r)
    rxx[:, 1:-1] = (r[:, 2:] - 2.0 * r[:, 1:-1] + r[:, :-2]) / dx**2
    rxx[:, 0] = (r[:, 1] - 2.0 * r[:, 0]) / dx**2
    rxx[:, -1] = (r[:, -2] - 2.0 * r[:, -1]) / dx**2
    dxx = float(np.sum(w2d * np.abs(rxx) ** p)) ** (1.0 / p)
    return base + dtn + dxx
