"""Forward and adjoint solvers for 1D scalar parabolic operators.

The operator is  d/dt - d*u_xx + b*u_x + a*u  with homogeneous Dirichlet
conditions, discretized by second-order central differences in space.

Scheme conventions (uniform step dt, tridiagonal spatial matrix A):

* implicit-euler:    (I + dt*A) y^{j+1} = y^j + dt * g^j
* crank-nicolson:    (I + dt/2*A) y^{j+1} = (I - dt/2*A) y^j
                                           + dt/2 * (g^j + g^{j+1})

The implicit Euler source is sampled at the left time level, so the
discrete duality identity pairs source row j with adjoint row j:

    <y(T), phi_T> = <y0, phi(0)> + dt * sum_{j=0}^{nt-1} <g^j, phi^j>

with phi^j = (M^{-T})^{nt-j} phi_T.  `adjoint_solve` computes exactly this
algebraic transpose of the forward one-step map (for Crank-Nicolson the
returned rows are the transposed intermediates w^j; see `duality_terms`),
so the identity holds to round-off on every operator/scheme pair.

The last source row (row nt) is never used by the implicit Euler stepping;
`apply_heat_operator` sets it to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigurationError, SolverError
from .grid import Grids, SpaceTimeField

SCHEMES = ("implicit-euler", "crank-nicolson")


@dataclass(frozen=True)
class ParabolicOperator:
    """Coefficients of  d/dt - diffusion*u_xx + drift*u_x + reaction*u."""

    diffusion: float = 1.0
    drift: float | np.ndarray = 0.0
    reaction: float | np.ndarray = 0.0
    kind: str = "real"

    def __post_init__(self):
        if self.diffusion <= 0:
            raise ConfigurationError(f"diffusion must be > 0, got {self.diffusion}")
        for name in ("drift", "reaction"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ConfigurationError(f"{name} must be finite everywhere")

    def coefficient_arrays(self, nx: int):
        b = np.broadcast_to(np.asarray(self.drift, dtype=float), (nx,))
        a = np.broadcast_to(np.asarray(self.reaction, dtype=float), (nx,))
        return b, a

    def tridiagonal(self, grid):
        """Bands (sub, diag, sup) of the spatial operator on interior nodes."""
        dx = grid.dx
        b, a = self.coefficient_arrays(grid.nx)
        d = self.diffusion
        diag = 2.0 * d / dx**2 + a
        sub = -d / dx**2 - b[1:] / (2.0 * dx)   # coupling to the left neighbor
        sup = -d / dx**2 + b[:-1] / (2.0 * dx)  # coupling to the right neighbor
        return sub, diag, sup


def _tridiag_matvec(sub, diag, sup, y):
    out = diag * y
    out[..., :-1] = out[..., :-1] + sup * y[..., 1:]
    out[..., 1:] = out[..., 1:] + sub * y[..., :-1]
    return out


class TimeStepper:
    """Factorized one-step solver for a fixed operator, grids and scheme.

    The step matrix is factorized once (LAPACK gttrf); forward steps and
    exact-transpose adjoint steps reuse the factorization. Complex fields
    are solved component-wise against the real matrix.
    """

    def __init__(self, op: ParabolicOperator, grids: Grids, scheme: str = "implicit-euler"):
        if scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {scheme!r}; use one of {SCHEMES}")
        self.op = op
        self.grids = grids
        self.scheme = scheme
        self.dt = grids.time.dt
        sub, diag, sup = op.tridiagonal(grids.space)
        w = self.dt if scheme == "implicit-euler" else 0.5 * self.dt
        self._m_sub = w * sub
        self._m_diag = 1.0 + w * diag
        self._m_sup = w * sup
        if scheme == "crank-nicolson":
            self._e_sub = -w * sub
            self._e_diag = 1.0 - w * diag
            self._e_sup = -w * sup
        dl, d, du, du2, ipiv, info = lapack.dgttrf(self._m_sub, self._m_diag, self._m_sup)
        if info != 0:
            raise SolverError(
                f"singular step matrix (gttrf info={info}); the reaction term is"
                " too negative for this time step"
            )
        self._lu = (dl, d, du, du2, ipiv)

    def _solve(self, rhs, trans):
        dl, d, du, du2, ipiv = self._lu
        if np.iscomplexobj(rhs):
            stacked = np.column_stack([rhs.real, rhs.imag])
            x, info = lapack.dgttrs(dl, d, du, du2, ipiv, stacked, trans=trans)
            if info != 0:
                raise SolverError(f"gttrs failed with info={info}")
            return x[:, 0] + 1j * x[:, 1]
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, rhs, trans=trans)
        if info != 0:
            raise SolverError(f"gttrs failed with info={info}")
        return x[:, 0] if x.ndim > 1 else x

    def step(self, y, g_left, g_right=None):
        """Advance one step; g_left/g_right are the source rows at t_j, t_{j+1}."""
        if self.scheme == "implicit-euler":
            rhs = y if g_left is None else y + self.dt * g_left
        else:
            rhs = _tridiag_matvec(self._e_sub, self._e_diag, self._e_sup, y)
            if g_left is not None:
                rhs = rhs + 0.5 * self.dt * (g_left + g_right)
        return self._solve(rhs, trans="N")

    def step_adjoint(self, p):
        """One backward step of the exact transpose of the forward map."""
        if self.scheme == "implicit-euler":
            return self._solve(p, trans="T")
        w = self._solve(p, trans="T")
        return _tridiag_matvec(self._e_sup, self._e_diag, self._e_sub, w), w

    def apply_step_matrix(self, y):
        return _tridiag_matvec(self._m_sub, self._m_diag, self._m_sup, y)

    def apply_explicit_matrix(self, y):
        if self.scheme != "crank-nicolson":
            raise SolverError("explicit matrix only exists for crank-nicolson")
        return _tridiag_matvec(self._e_sub, self._e_diag, self._e_sup, y)


def _source_rows(g, grids):
    if g is None:
        return None
    if isinstance(g, SpaceTimeField):
        return g.values
    g = np.asarray(g)
    if g.shape != grids.shape:
        raise ConfigurationError(f"source shape {g.shape} does not match {grids.shape}")
    return g


def forward_solve(op, y0, g, grids, scheme="implicit-euler", stepper=None) -> SpaceTimeField:
    """Solve the forward problem from y0 with distributed source g.

    Returns the full trajectory, y(t_0) = y0.
    """
    st = stepper if stepper is not None else TimeStepper(op, grids, scheme)
    nt, nx = grids.time.nt, grids.space.nx
    rows = _source_rows(g, grids)
    y0 = np.asarray(y0)
    dtype = complex if (np.iscomplexobj(y0) or (rows is not None and np.iscomplexobj(rows))) else float
    y = np.zeros((nt + 1, nx), dtype=dtype)
    y[0] = y0
    for j in range(nt):
        gl = rows[j] if rows is not None else None
        gr = rows[j + 1] if rows is not None else None
        y[j + 1] = st.step(y[j], gl, gr)
    return SpaceTimeField(y, grids)


def adjoint_solve(op, phiT, grids, scheme="implicit-euler", stepper=None) -> SpaceTimeField:
    """Backward solve with the exact algebraic transpose of the forward map.

    For implicit Euler the returned row j is phi^j = (M^{-T})^{nt-j} phi_T,
    the multiplier of source row j in the duality identity. For
    Crank-Nicolson the returned rows j < nt are the transposed
    intermediates w^j that multiply (g^j + g^{j+1})/2.
    """
    st = stepper if stepper is not None else TimeStepper(op, grids, scheme)
    nt, nx = grids.time.nt, grids.space.nx
    phiT = np.asarray(phiT)
    dtype = complex if np.iscomplexobj(phiT) else float
    phi = np.zeros((nt + 1, nx), dtype=dtype)
    phi[nt] = phiT
    if st.scheme == "implicit-euler":
        for j in range(nt, 0, -1):
            phi[j - 1] = st.step_adjoint(phi[j])
        return SpaceTimeField(phi, grids)
    p = phi[nt]
    for j in range(nt - 1, -1, -1):
        p, w = st.step_adjoint(p)
        phi[j] = w
    return SpaceTimeField(phi, grids)


def adjoint_initial_state(op, phi: SpaceTimeField, scheme="implicit-euler", stepper=None):
    """The vector paired with y0 in the duality identity ("phi(0)")."""
    if scheme == "implicit-euler":
        return phi.values[0]
    st = stepper if stepper is not None else TimeStepper(op, phi.grids, scheme)
    return st.apply_explicit_matrix(phi.values[0])


def source_pairing(g: SpaceTimeField, phi: SpaceTimeField, scheme="implicit-euler") -> float:
    """Scheme-consistent quadrature of <g, phi> over (0, T) x Omega (plain l2 in space)."""
    dt = g.grids.time.dt
    gv, pv = g.values, phi.values
    if scheme == "implicit-euler":
        return dt * float(np.sum(gv[:-1] * pv[:-1]))
    return 0.5 * dt * float(np.sum((gv[:-1] + gv[1:]) * pv[:-1]))


def duality_terms(op, y0, g, phiT, grids, scheme="implicit-euler"):
    """Both sides of the discrete duality identity; equal to round-off."""
    st = TimeStepper(op, grids, scheme)
    y = forward_solve(op, y0, g, grids, scheme, stepper=st)
    phi = adjoint_solve(op, phiT, grids, scheme, stepper=st)
    lhs = float(np.dot(y.values[-1], np.asarray(phiT)))
    phi0 = adjoint_initial_state(op, phi, scheme, stepper=st)
    rhs = float(np.dot(np.asarray(y0), phi0)) + source_pairing(g, phi, scheme)
    return lhs, rhs


def apply_heat_operator(op, u: SpaceTimeField, grids=None, scheme="implicit-euler",
                        stepper=None) -> SpaceTimeField:
    """Invert the stepping relation: the source g reproducing the trajectory u.

    forward_solve(op, u(t_0), g) == u at every node, exactly (per-step
    algebra, not stencil differentiation). The row not constrained by the
    stepping relation (row nt for implicit Euler, row 0 for Crank-Nicolson)
    is set to zero.
    """
    grids = grids if grids is not None else u.grids
    st = stepper if stepper is not None else TimeStepper(op, grids, scheme)
    nt = grids.time.nt
    uv = u.values
    g = np.zeros_like(np.asarray(uv))
    if st.scheme == "implicit-euler":
        for j in range(nt):
            g[j] = (st.apply_step_matrix(uv[j + 1]) - uv[j]) / st.dt
    else:
        for j in range(nt):
            r = (2.0 / st.dt) * (st.apply_step_matrix(uv[j + 1])
                                 - st.apply_explicit_matrix(uv[j]))
            g[j + 1] = r - g[j]
    return SpaceTimeField(g, grids)
