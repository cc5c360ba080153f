"""Discretization primitives.

1D spatial grids with homogeneous Dirichlet boundaries, uniform time grids,
space-time fields stored on interior spatial nodes only (the boundary values
are identically zero and never stored), smooth cutoff profiles whose odd root
is exact by construction, and L^p / weighted L^q quadrature norms.

Quadrature convention: time uses the composite trapezoid rule on the closed
grid [0, T]; space uses the composite trapezoid rule on the interior nodes
with constant extension across the two boundary half-cells, so the weights
sum exactly to L and fields constant in space and time are integrated
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# exp() underflows to an exact 0 contribution below this exponent
LOG_UNDERFLOW = -700.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform interior-node grid on (0, L) with Dirichlet boundaries.

    Interior nodes are x_i = i*dx, i = 1..nx, with dx = L/(nx+1).
    """

    length: float
    nx: int

    def __post_init__(self):
        if self.length <= 0:
            raise ConfigurationError(f"length must be > 0, got {self.length}")
        if self.nx < 3:
            raise ConfigurationError(f"nx must be >= 3, got {self.nx}")

    @property
    def dx(self) -> float:
        return self.length / (self.nx + 1)

    @property
    def x(self) -> np.ndarray:
        return _frozen(self.dx * np.arange(1, self.nx + 1))

    @property
    def quad_weights(self) -> np.ndarray:
        # trapezoid on interior nodes + constant extension into the
        # boundary half-cells; weights sum to L so constants are exact
        w = np.full(self.nx, self.dx)
        w[0] *= 1.5
        w[-1] *= 1.5
        return _frozen(w)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid 0 = t_0 < ... < t_nt = T with dt = T/nt.

    nt must be even so that T/2 is a node (the two-phase pipelines split
    the horizon there).
    """

    horizon: float
    nt: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigurationError(f"horizon must be > 0, got {self.horizon}")
        if self.nt < 4 or self.nt % 2 != 0:
            raise ConfigurationError(f"nt must be even and >= 4, got {self.nt}")

    @property
    def dt(self) -> float:
        return self.horizon / self.nt

    @property
    def t(self) -> np.ndarray:
        return _frozen(self.dt * np.arange(self.nt + 1))

    @property
    def quad_weights(self) -> np.ndarray:
        w = np.full(self.nt + 1, self.dt)
        w[0] *= 0.5
        w[-1] *= 0.5
        return _frozen(w)


@dataclass(frozen=True)
class Grids:
    """A spatial grid paired with a time grid."""

    space: SpatialGrid
    time: TimeGrid

    @property
    def shape(self) -> tuple:
        return (self.time.nt + 1, self.space.nx)

    def quad_weights_2d(self) -> np.ndarray:
        return np.outer(self.time.quad_weights, self.space.quad_weights)


@dataclass(frozen=True)
class SpaceTimeField:
    """Grid function on time nodes x interior space nodes.

    values[j, i] is the sample at (t_j, x_i); Dirichlet boundary values are
    implicitly zero and never stored. Real or complex valued.
    """

    values: np.ndarray
    grids: Grids

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grids.shape:
            raise ConfigurationError(
                f"field shape {v.shape} does not match grids {self.grids.shape}"
            )
        object.__setattr__(self, "values", _frozen(v))

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    @classmethod
    def zeros(cls, grids: Grids, kind: str = "real") -> "SpaceTimeField":
        dtype = complex if kind == "complex" else float
        return cls(np.zeros(grids.shape, dtype=dtype), grids)

    @classmethod
    def from_values(cls, values, grids: Grids) -> "SpaceTimeField":
        return cls(np.array(values), grids)

    def at_time(self, j: int) -> np.ndarray:
        return self.values[j]


@dataclass(frozen=True)
class Cutoff:
    """Spatial cutoff chi = sigma**r with exact odd root sigma.

    sigma is a C^inf plateau profile sampled on the grid nodes, 1 on omega1,
    0 outside omega with at least a 2-cell margin inside each end of omega.
    Since chi is defined as sigma**r, chi**(1/r) is available exactly as
    sigma (no numerical rooting).
    """

    sigma: np.ndarray
    r: int
    omega: tuple
    omega1: tuple
    chi: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.r < 1 or self.r % 2 != 1:
            raise ConfigurationError(f"cutoff exponent r must be odd >= 1, got {self.r}")
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        object.__setattr__(self, "chi", _frozen(self.sigma**self.r))

    def root(self, n: int) -> np.ndarray:
        """chi**(1/n) for n dividing r; exact when n == r."""
        if n == self.r:
            return self.sigma
        return self.sigma ** (self.r / n)


def smoothstep(t):
    """Quintic polynomial step: 0 for t<=0, 1 for t>=1, C^2 transitions."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 + t * (-15.0 + 6.0 * t))


def make_cutoff(grid: SpatialGrid, omega, omega1, r: int) -> Cutoff:
    """Build the cutoff chi = sigma**r on the nodes of `grid`.

    omega1 must sit strictly inside omega with at least two grid cells of
    margin on each side (the transition bands live between omega's ends,
    shifted in by the margin, and omega1's ends); omega must sit strictly
    inside (0, L).
    """
    a, b = float(omega[0]), float(omega[1])
    c, d = float(omega1[0]), float(omega1[1])
    if not (a < b and c < d):
        raise ConfigurationError(f"degenerate intervals omega={omega}, omega1={omega1}")
    if not (0.0 < a and b < grid.length):
        raise ConfigurationError(
            f"omega={omega} must be strictly inside (0, {grid.length})"
        )
    margin = 2.0 * grid.dx
    lo0, lo1 = a + margin, c
    hi0, hi1 = d, b - margin
    if not lo0 < lo1:
        raise ConfigurationError(
            f"left margin violated: omega1 left end {c} must exceed omega left end"
            f" {a} by more than 2 cells ({margin})"
        )
    if not hi0 < hi1:
        raise ConfigurationError(
            f"right margin violated: omega1 right end {d} must fall short of omega"
            f" right end {b} by more than 2 cells ({margin})"
        )
    x = grid.x
    rising = smoothstep((x - lo0) / (lo1 - lo0))
    falling = smoothstep((hi1 - x) / (hi1 - hi0))
    sigma = np.minimum(rising, falling)
    return Cutoff(sigma=sigma, r=int(r), omega=(a, b), omega1=(c, d))


def _abs_pow_sum(values, p, weights):
    av = np.abs(values)
    return float(np.sum(weights * av**p))


def lp_norm(fld: SpaceTimeField, p) -> float:
    """Space-time L^p norm by the package quadrature; p = inf gives sup|f|."""
    if p != math.inf and p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    v = fld.values
    if p == math.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    w = fld.grids.quad_weights_2d()
    return _abs_pow_sum(v, p, w) ** (1.0 / p)


def space_lp_norm(values, grid: SpatialGrid, p) -> float:
    """L^p(Omega) norm of a single space field."""
    if p != math.inf and p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    values = np.asarray(values)
    if p == math.inf:
        return float(np.max(np.abs(values))) if values.size else 0.0
    return _abs_pow_sum(values, p, grid.quad_weights) ** (1.0 / p)


def weighted_power_integral(values, weight_log, q, weights) -> float:
    """Quadrature of exp(q*weight_log) * |values|**q.

    Evaluated in log space: nodes where the field vanishes contribute 0
    regardless of the weight (this absorbs +/-inf log-weights at the time
    endpoints), and exponents below LOG_UNDERFLOW contribute exactly 0.
    """
    av = np.abs(np.asarray(values))
    wl = np.asarray(weight_log, dtype=float)
    out = np.zeros(av.shape, dtype=float)
    nz = av > 0.0
    if np.any(nz):
        expo = q * wl[nz] + q * np.log(av[nz])
        keep = expo >= LOG_UNDERFLOW
        vals = np.zeros(expo.shape)
        vals[keep] = np.exp(expo[keep])
        out[nz] = vals
    return float(np.sum(weights * out))


def weighted_lq_norm(fld: SpaceTimeField, weight_log: SpaceTimeField, q) -> float:
    """Weighted L^q norm: (integral of exp(q*weight_log)|f|^q)^(1/q)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    w = fld.grids.quad_weights_2d()
    return weighted_power_integral(fld.values, weight_log.values, q, w) ** (1.0 / q)
