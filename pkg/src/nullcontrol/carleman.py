"""Carleman weight system and empirical inequality diagnostics.

The weight data is eta(t) = 1/(t(T-t)) on interior time nodes (the
endpoints carry +inf and every weight evaluation there is pushed to an
exact 0 or +inf log-weight), a spatial profile rho built from a quartic
auxiliary polynomial psi by the classical construction

    rho(x) = exp(2*lam*max psi) - exp(lam*psi(x)) > 0,

and the bookkeeping exponents: the Sobolev-embedding sequence p_n, the
first index n0 where p exceeds the target integrability 2k+2, and
m = 4*n0 + 1.

The inequality ratios are recorded diagnostics: the continuous theory
guarantees boundedness for s large with non-constructive constants, so
the tests check stability of the empirical ratios across s, never a
specific constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError
from .grid import Grids, SpaceTimeField, _frozen, space_lp_norm
from .heat import ParabolicOperator, adjoint_solve


@dataclass(frozen=True)
class ExponentTable:
    """The integrability ladder p_{-1}=2, p_n = (N+2)p/(N+2-p), and n0, m."""

    N: int
    k: int
    sequence: tuple
    n0: int
    m: int


def exponent_table(N: int, k: int) -> ExponentTable:
    """Run the exponent recursion until it clears 2k+2; m = 4*n0 + 1.

    The branch rules: p -> (N+2)p/(N+2-p) while p < N+2, doubling at
    p == N+2, +inf once p > N+2. n0 is the unique index with
    p_{n0} > 2k+2 >= p_{n0-1}.
    """
    if N < 1 or k < 1:
        raise ConfigurationError(f"need N >= 1 and k >= 1, got N={N}, k={k}")
    target = 2 * k + 2
    cap = Fraction(N + 2)
    seq = [Fraction(2)]
    while True:
        p = seq[-1]
        if p == math.inf or p > target:
            break
        if p < cap:
            seq.append((cap * p) / (cap - p))
        elif p == cap:
            seq.append(2 * p)
        else:
            seq.append(math.inf)
    n0 = len(seq) - 2  # index of the first entry exceeding the target (p_-1 at index 0)
    out = tuple(float(p) if p != math.inf else math.inf for p in seq)
    return ExponentTable(N=N, k=k, sequence=out, n0=n0, m=4 * n0 + 1)


def _quartic_psi(grid, center):
    """psi(x) = x(L-x)((x-a0)^2 + b0), zero at 0 and L, sole interior max at `center`."""
    L = grid.length
    c = float(center)
    if abs(c - 0.5 * L) < 1e-12 * L:
        a0, b0 = c, L * L
    else:
        u = c * (L - c) / (L - 2.0 * c)
        a0, b0 = c + u, u * u

    def psi(x):
        return x * (L - x) * ((x - a0) ** 2 + b0)

    def dpsi(x):
        return (L - 2.0 * x) * ((x - a0) ** 2 + b0) + 2.0 * x * (L - x) * (x - a0)

    # the construction guarantees dpsi(c) = 0; verify it is the only
    # interior critical point (sign change) on a fine probe grid
    probe = np.linspace(0.0, L, 4097)[1:-1]
    signs = np.sign(dpsi(probe))
    signs = signs[signs != 0.0]  # exact zeros at the critical point itself
    crossings = int(np.sum(signs[:-1] * signs[1:] < 0))
    if crossings != 1:
        raise ConfigurationError(
            f"auxiliary profile has {crossings} interior critical points for"
            f" center {c}; move omega1 away from the boundary"
        )
    return psi, dpsi, psi(c)


@dataclass(frozen=True)
class WeightSystem:
    """Evaluated Carleman weight data on a grid pair.

    All weight evaluations are served in log space; the time-endpoint rows
    are exactly +/-inf so that exponentials there underflow to exact zeros
    (or flag an inadmissible control) downstream.
    """

    s: float
    lam: float
    psi: np.ndarray
    psi_max: float
    rho: np.ndarray
    eta: np.ndarray
    k: int
    m: int
    n0: int
    grids: Grids
    omega1: tuple
    chi: object = None  # optional Cutoff

    def __post_init__(self):
        for name in ("psi", "rho", "eta"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))
        if self.s < 1:
            raise ConfigurationError(f"Carleman parameter s must be >= 1, got {self.s}")
        if np.any(self.rho <= 0):
            raise ConfigurationError("rho must be strictly positive")

    def log_s_eta(self) -> np.ndarray:
        """log(s*eta(t_j)); +inf at the endpoint rows."""
        out = np.full(self.eta.shape, np.inf)
        interior = np.isfinite(self.eta)
        out[interior] = np.log(self.s * self.eta[interior])
        return out

    def weight_log(self, rho_coeff: float, power_coeff: float) -> SpaceTimeField:
        """Log of exp(rho_coeff * s*rho*eta) * (s*eta)**power_coeff.

        Endpoint rows are +/-inf according to the dominant exponential
        factor (the power factor when rho_coeff == 0).
        """
        nt = self.grids.time.nt
        wl = np.empty(self.grids.shape)
        eta_int = self.eta[1:nt]
        lse = np.log(self.s * eta_int)
        wl[1:nt] = (rho_coeff * self.s * np.outer(eta_int, self.rho)
                    + power_coeff * lse[:, None])
        if rho_coeff != 0.0:
            edge = -np.inf if rho_coeff < 0 else np.inf
        elif power_coeff != 0.0:
            edge = np.inf if power_coeff > 0 else -np.inf
        else:
            edge = 0.0
        wl[0] = edge
        wl[nt] = edge
        return SpaceTimeField(wl, self.grids)

    def rum_weight_log(self, q: float) -> SpaceTimeField:
        """Log of the duality-map weight exp(-(q/2) s rho eta) (s eta)^{3q/2}."""
        return self.weight_log(-0.5 * q, 1.5 * q)

    def control_norm_weight_log(self) -> SpaceTimeField:
        """Log of the reporting weight exp(s rho eta / 2) (s eta)^{-3/2}."""
        return self.weight_log(0.5, -1.5)


def build_weights(grids: Grids, omega1, s: float, lam: float, k: int,
                  chi=None) -> WeightSystem:
    """Construct the weight system for the observation region omega1.

    psi is a quartic with zeros at 0 and L and its only interior maximum at
    the center of omega1; rho follows the classical profile construction.
    """
    c0, c1 = float(omega1[0]), float(omega1[1])
    L = grids.space.length
    if not (0.0 < c0 < c1 < L):
        raise ConfigurationError(f"omega1={omega1} must be strictly inside (0, {L})")
    center = 0.5 * (c0 + c1)
    psi_fn, _, psi_max = _quartic_psi(grids.space, center)
    x = grids.space.x
    psi = psi_fn(x)
    rho = math.exp(2.0 * lam * psi_max) - np.exp(lam * psi)
    nt = grids.time.nt
    t = grids.time.t
    T = grids.time.horizon
    eta = np.full(nt + 1, np.inf)
    eta[1:nt] = 1.0 / (t[1:nt] * (T - t[1:nt]))
    table = exponent_table(1, max(k, 1))
    return WeightSystem(s=float(s), lam=float(lam), psi=psi, psi_max=psi_max,
                        rho=rho, eta=eta, k=k, m=table.m, n0=table.n0,
                        grids=grids, omega1=(c0, c1), chi=chi)


def _space_gradient(values, grid):
    """Central-difference gradient using the implicit zero boundary values."""
    dx = grid.dx
    g = np.empty_like(values)
    g[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dx)
    g[..., 0] = values[..., 1] / (2.0 * dx)
    g[..., -1] = -values[..., -2] / (2.0 * dx)
    return g


def _interior_quad(ws, integrand):
    """Quadrature over interior time rows (eta is singular at the endpoints)."""
    nt = ws.grids.time.nt
    wt = ws.grids.time.quad_weights[1:nt]
    wx = ws.grids.space.quad_weights
    return float(np.sum(wt[:, None] * wx[None, :] * integrand))


def _ratio(lhs, rhs):
    if rhs > 0.0:
        return lhs / rhs
    return 0.0 if lhs == 0.0 else math.inf


def _omega1_mask(ws):
    x = ws.grids.space.x
    c0, c1 = ws.omega1
    return (x >= c0) & (x <= c1)


def _adjoint_field(ws, phiT, grids, scheme):
    op = ParabolicOperator()
    return adjoint_solve(op, phiT, grids, scheme=scheme)


def carleman_ratio_l2(ws: WeightSystem, phiT, grids=None, scheme="implicit-euler") -> float:
    """LHS/RHS of the L^2 Carleman inequality for the backward heat equation.

    LHS integrates exp(-s rho eta)((s eta)^3 |phi|^2 + (s eta)|grad phi|^2)
    over the whole cylinder, RHS the (s eta)^3 |phi|^2 part over omega1.
    """
    grids = grids if grids is not None else ws.grids
    phi = _adjoint_field(ws, phiT, grids, scheme).values[1:grids.time.nt]
    gphi = _space_gradient(phi, grids.space)
    nt = grids.time.nt
    eta = ws.eta[1:nt]
    se = ws.s * eta
    kernel = np.exp(-ws.s * np.outer(eta, ws.rho))
    phi2 = np.abs(phi) ** 2
    lhs = _interior_quad(
        ws, kernel * (se[:, None] ** 3 * phi2 + se[:, None] * np.abs(gphi) ** 2)
    )
    mask = _omega1_mask(ws)
    rhs = _interior_quad(ws, kernel * se[:, None] ** 3 * phi2 * mask[None, :])
    return _ratio(lhs, rhs)


def carleman_ratio_l2kp2(ws: WeightSystem, phiT, grids=None, scheme="implicit-euler") -> float:
    """LHS/RHS of the L^{2k+2} Carleman inequality (exponents from m)."""
    grids = grids if grids is not None else ws.grids
    k, m = ws.k, ws.m
    pw = 2 * k + 2
    phi = _adjoint_field(ws, phiT, grids, scheme).values[1:grids.time.nt]
    gphi = _space_gradient(phi, grids.space)
    nt = grids.time.nt
    eta = ws.eta[1:nt]
    se = (ws.s * eta)[:, None]
    kernel = np.exp(-(k + 1) * ws.s * np.outer(eta, ws.rho))
    lhs = _interior_quad(
        ws,
        kernel * (se ** (-(k + 1) * m) * np.abs(phi) ** pw
                  + se ** (-(k + 1) * (m + 2)) * np.abs(gphi) ** pw),
    )
    mask = _omega1_mask(ws)
    rhs = _interior_quad(ws, kernel * se ** (3 * (k + 1)) * np.abs(phi) ** pw * mask[None, :])
    return _ratio(lhs, rhs)


def observability_ratio(ws: WeightSystem, phiT, grids=None, scheme="implicit-euler") -> float:
    """||phi(0)||_{2k+2}^{2k+2} over the chi-localized weighted observation term."""
    if ws.chi is None:
        raise ConfigurationError("observability ratio requires a cutoff in the weight system")
    grids = grids if grids is not None else ws.grids
    k = ws.k
    pw = 2 * k + 2
    field = _adjoint_field(ws, phiT, grids, scheme)
    lhs = space_lp_norm(field.values[0], grids.space, pw) ** pw
    phi = field.values[1:grids.time.nt]
    nt = grids.time.nt
    eta = ws.eta[1:nt]
    se = (ws.s * eta)[:, None]
    kernel = np.exp(-(k + 1) * ws.s * np.outer(eta, ws.rho))
    rhs = _interior_quad(
        ws, (ws.chi.chi**pw)[None, :] * kernel * se ** (3 * (k + 1)) * np.abs(phi) ** pw
    )
    return _ratio(lhs, rhs)


def choose_s(grids: Grids, omega1, k: int, lam: float, chi, s_candidates,
             n_draws: int = 20, seed: int = 0, scheme="implicit-euler") -> float:
    """Pre-sweep: the candidate s minimizing the worst observability ratio.

    Used to pick the package default; also callable per configuration.
    """
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n_draws, grids.space.nx))
    best_s, best_val = None, math.inf
    for s in s_candidates:
        ws = build_weights(grids, omega1, s, lam, k, chi=chi)
        worst = max(observability_ratio(ws, d, grids, scheme) for d in draws)
        if worst < best_val:
            best_s, best_val = float(s), worst
    return best_s
