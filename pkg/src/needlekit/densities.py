"""One-dimensional curvature-dimension density calculus.

The central object is `Density1D`, a probability density on a segment
[0, D].  Three forms exist:

* ``model``      -- the normalized sine power sin^(N-1)(t)/omega_N on [0, pi];
* ``sine-power`` -- a piecewise minimum of shifted sine powers, the closed
                    form produced by the random generator (every piece solves
                    the curvature ODE with equality, so membership is exact);
* ``grid``       -- tabulated values, either linearly interpolated or
                    piecewise constant (the shape produced by needle fits).

Closed forms carry exact cumulative masses and quantiles through the
incomplete beta function; grid forms integrate their own interpolant
exactly.  The synthetic curvature inequality, the distortion-coefficient
functions, and the comparison estimates against the model density all
live here.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import sinepower as sp
from .errors import (
    DegenerateDomainError,
    InvalidParameterError,
    OutOfDomainError,
)

PI = math.pi

# Explicit sentinel returned by the distortion coefficients outside their
# trigonometric window.  It is produced by construction, never by overflow,
# and float comparisons against it are total.
INFINITE_COEFF = float("inf")


@dataclass(frozen=True)
class CurvatureParams:
    """Curvature bound K and generalized dimension N for a CD(K, N) check."""

    K: float
    N: float

    def __post_init__(self):
        if not (self.K > 0.0):
            raise InvalidParameterError(f"curvature bound must be positive, got {self.K}")
        if not (self.N > 1.0):
            raise InvalidParameterError(f"dimension must exceed 1, got {self.N}")


# the trigonometric window closes at arg = pi; snap the sentinel a hair
# early so a few ulps of rounding in theta*sqrt(kappa) cannot turn the
# infinite branch into a ~1e15 float
_WINDOW_EDGE = PI * (1.0 - 1e-14)


def _sigma_raw(t: float, theta: float, kappa: float) -> float:
    # sin(t * theta * sqrt(kappa)) / sin(theta * sqrt(kappa)), with the
    # boundary conventions sigma(0) = t and sigma = +inf once the argument
    # reaches the end of the trigonometric window.
    if theta == 0.0:
        return float(t)
    arg = theta * math.sqrt(kappa)
    if arg >= _WINDOW_EDGE:
        return INFINITE_COEFF
    return math.sin(t * arg) / math.sin(arg)


def _sigma_raw_vec(t: float, theta: np.ndarray, kappa: float) -> np.ndarray:
    arg = theta * math.sqrt(kappa)
    out = np.full(arg.shape, INFINITE_COEFF)
    inside = arg < _WINDOW_EDGE
    zero = arg == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        body = np.sin(t * arg) / np.sin(arg)
    out[inside] = body[inside]
    out[zero] = t
    return out


def sigma_coeff(t: float, theta: float, params: CurvatureParams) -> float:
    """Distortion coefficient sin(t theta sqrt(K/N)) / sin(theta sqrt(K/N)).

    Returns t at theta = 0 and the INFINITE_COEFF sentinel for
    theta >= pi * sqrt(N/K).
    """
    if not (0.0 <= t <= 1.0):
        raise InvalidParameterError(f"interpolation parameter must lie in [0, 1], got {t}")
    if theta < 0.0:
        raise InvalidParameterError(f"separation must be nonnegative, got {theta}")
    return _sigma_raw(t, theta, params.K / params.N)


def tau_coeff(t: float, theta: float, params: CurvatureParams) -> float:
    """Full distortion coefficient t^(1/N) * sigma_(K,N-1)^(t)(theta)^(1-1/N)."""
    if not (0.0 <= t <= 1.0):
        raise InvalidParameterError(f"interpolation parameter must lie in [0, 1], got {t}")
    if theta < 0.0:
        raise InvalidParameterError(f"separation must be nonnegative, got {theta}")
    s = _sigma_raw(t, theta, params.K / (params.N - 1.0))
    if s == INFINITE_COEFF:
        return INFINITE_COEFF
    return t ** (1.0 / params.N) * s ** (1.0 - 1.0 / params.N)


# ---------------------------------------------------------------------------
# Density1D


@dataclass(frozen=True)
class Density1D:
    """Probability density on [0, D].  See the module docstring for forms."""

    D: float
    form: str                    # 'model' | 'sine-power' | 'grid'
    grid: np.ndarray             # sample abscissae
    values: np.ndarray           # density values at the samples
    exponent: float              # dimension parameter N the density belongs to
    total_mass: float = 1.0      # integral as constructed (after normalization)
    # closed-form payload: shifted sine pieces (amplitude, phase) between breaks
    pieces: Optional[tuple] = None
    breaks: Optional[np.ndarray] = None
    piece_cum: Optional[np.ndarray] = field(default=None, repr=False)
    interp: str = "linear"       # grid form only: 'linear' | 'pconst'

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        if self.pieces is not None:
            out = self._closed_eval(t)
        elif self.interp == "pconst":
            edges = self._cell_edges()
            idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(self.values) - 1)
            out = self.values[idx]
        else:
            out = np.interp(t, self.grid, self.values)
        return float(out) if out.ndim == 0 else out

    __call__ = evaluate

    def _closed_eval(self, t):
        Nm1 = self.exponent - 1.0
        j = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, len(self.pieces) - 1)
        amps = np.asarray([p[0] for p in self.pieces])
        phis = np.asarray([p[1] for p in self.pieces])
        return (amps[j] * np.sin(t + phis[j])) ** Nm1

    def _cell_edges(self):
        mids = 0.5 * (self.grid[1:] + self.grid[:-1])
        return np.concatenate([[0.0], mids, [self.D]])

    # -- exact cumulative mass of the represented density --------------------

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        t = np.clip(t, 0.0, self.D)
        if self.pieces is not None:
            out = self._closed_cdf(t)
        elif self.interp == "pconst":
            out = self._pconst_cdf(t)
        else:
            out = self._linear_cdf(t)
        return float(out) if out.ndim == 0 else out

    def _closed_cdf(self, t):
        N = self.exponent
        j = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, len(self.pieces) - 1)
        amps = np.asarray([p[0] for p in self.pieces])
        phis = np.asarray([p[1] for p in self.pieces])
        lo = self.breaks[j]
        part = amps[j] ** (N - 1.0) * (
            sp.sin_power_integral(t + phis[j], N) - sp.sin_power_integral(lo + phis[j], N)
        )
        return self.piece_cum[j] + part

    def _node_cdf(self):
        x, h = self.grid, self.values
        if self.interp == "pconst":
            edges = self._cell_edges()
            cell = h * np.diff(edges)
            return np.concatenate([[0.0], np.cumsum(cell)]), edges
        seg = 0.5 * (h[1:] + h[:-1]) * np.diff(x)
        return np.concatenate([[0.0], np.cumsum(seg)]), x

    def _linear_cdf(self, t):
        F, x = self._node_cdf()
        h = self.values
        t = np.clip(t, x[0], x[-1])
        k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
        dx = x[k + 1] - x[k]
        dt = t - x[k]
        slope = (h[k + 1] - h[k]) / np.where(dx > 0, dx, 1.0)
        return F[k] + h[k] * dt + 0.5 * slope * dt * dt

    def _pconst_cdf(self, t):
        F, edges = self._node_cdf()
        k = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(self.values) - 1)
        return F[k] + self.values[k] * (t - edges[k])

    def quantile(self, v):
        """Inverse cumulative mass, accurate to ~1e-14 in mass."""
        v = np.asarray(v, dtype=float)
        if np.any((v < 0) | (v > self.total_mass + 1e-12)):
            raise InvalidParameterError("quantile argument outside [0, total mass]")
        if self.pieces is not None:
            out = self._closed_quantile(v)
        elif self.interp == "pconst":
            out = self._pconst_quantile(v)
        else:
            out = self._linear_quantile(v)
        out = np.clip(out, 0.0, self.D)
        return float(out) if out.ndim == 0 else out

    def _closed_quantile(self, v):
        N = self.exponent
        j = np.clip(np.searchsorted(self.piece_cum, v, side="right") - 1, 0, len(self.pieces) - 1)
        amps = np.asarray([p[0] for p in self.pieces])
        phis = np.asarray([p[1] for p in self.pieces])
        lo = self.breaks[j]
        m = sp.sin_power_integral(lo + phis[j], N) + (v - self.piece_cum[j]) / amps[j] ** (N - 1.0)
        return sp.sin_power_quantile(m, N) - phis[j]

    def _linear_quantile(self, v):
        F, x = self._node_cdf()
        h = self.values
        k = np.clip(np.searchsorted(F, v, side="right") - 1, 0, len(x) - 2)
        dx = x[k + 1] - x[k]
        m = v - F[k]
        slope = (h[k + 1] - h[k]) / np.where(dx > 0, dx, 1.0)
        disc = np.sqrt(np.maximum(h[k] ** 2 + 2.0 * slope * m, 0.0))
        # stable root of 0.5*slope*dt^2 + h_k*dt = m
        denom = h[k] + disc
        dt = np.where(denom > 0, 2.0 * m / np.where(denom > 0, denom, 1.0), 0.0)
        return x[k] + dt

    def _pconst_quantile(self, v):
        F, edges = self._node_cdf()
        k = np.clip(np.searchsorted(F, v, side="right") - 1, 0, len(self.values) - 1)
        hk = self.values[k]
        dt = np.where(hk > 0, (v - F[k]) / np.where(hk > 0, hk, 1.0), 0.0)
        return edges[k] + dt

    def mass(self, a, b):
        """Mass of [a, b] under the density."""
        return self.cdf(b) - self.cdf(a)


# ---------------------------------------------------------------------------
# constructors


@dataclass(frozen=True)
class ModelDensity(Density1D):
    """The model density sin^(N-1)(t)/omega_N on [0, pi]."""

    omega_N: float = 0.0

    @property
    def N(self) -> float:
        return self.exponent


def model_density(N: float) -> ModelDensity:
    """The model density sin^(N-1)(t)/omega_N on [0, pi]."""
    om = sp.omega_n(N)
    amp = om ** (-1.0 / (N - 1.0))
    grid = np.linspace(0.0, PI, 2049)
    vals = sp.model_value(grid, N)
    return ModelDensity(
        D=PI,
        form="model",
        grid=grid,
        values=vals,
        exponent=N,
        total_mass=1.0,
        pieces=((amp, 0.0),),
        breaks=np.array([0.0, PI]),
        piece_cum=np.array([0.0, 1.0]),
        omega_N=om,
    )


def sine_power_density(N: float, D: float, pieces, n_samples: int = 2049) -> Density1D:
    """Normalized density (min_i A_i sin(t + phi_i))^(N-1) on [0, D].

    Each piece solves the curvature ODE with equality, so the assembled
    minimum is a CD(N-1, N) density by construction.  Pieces must keep
    t + phi_i inside (0, pi) over the domain.
    """
    if D <= 0:
        raise DegenerateDomainError(f"domain length must be positive, got {D}")
    if D > PI + 1e-12:
        raise OutOfDomainError(f"domain length {D} exceeds pi")
    for A, phi in pieces:
        if A <= 0:
            raise InvalidParameterError("amplitudes must be positive")
        if phi < -1e-12 or D + phi > PI + 1e-12:
            raise OutOfDomainError(f"phase {phi} pushes the window outside (0, pi)")

    breaks, order = _piece_structure(D, pieces)
    # normalize so the total mass is exactly 1
    Nm1 = N - 1.0
    raw = 0.0
    for j, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        A, phi = pieces[order[j]]
        raw += A ** Nm1 * (sp.sin_power_integral(b + phi, N) - sp.sin_power_integral(a + phi, N))
    scale = raw ** (-1.0 / Nm1)
    norm_pieces = tuple((pieces[order[j]][0] * scale, pieces[order[j]][1]) for j in range(len(order)))
    cum = [0.0]
    for j, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        A, phi = norm_pieces[j]
        cum.append(cum[-1] + A ** Nm1 * (sp.sin_power_integral(b + phi, N) - sp.sin_power_integral(a + phi, N)))
    cum = np.asarray(cum)
    cum[-1] = 1.0

    grid = np.linspace(0.0, D, n_samples)
    density = Density1D(
        D=float(D),
        form="sine-power",
        grid=grid,
        values=np.empty(0),
        exponent=N,
        total_mass=1.0,
        pieces=norm_pieces,
        breaks=np.asarray(breaks),
        piece_cum=cum,
    )
    object.__setattr__(density, "values", density.evaluate(grid))
    return density


def _piece_structure(D: float, pieces):
    """Breakpoints of argmin_i A_i sin(t + phi_i) on [0, D]."""
    from scipy.optimize import brentq

    ts = np.linspace(0.0, D, 4097)
    stack = np.stack([A * np.sin(ts + phi) for A, phi in pieces])
    act = np.argmin(stack, axis=0)
    breaks = [0.0]
    order = [int(act[0])]
    for k in range(1, len(ts)):
        if act[k] != act[k - 1]:
            i, j = int(act[k - 1]), int(act[k])
            f = lambda t: pieces[i][0] * math.sin(t + pieces[i][1]) - pieces[j][0] * math.sin(t + pieces[j][1])
            try:
                t_cross = brentq(f, ts[k - 1], ts[k], xtol=1e-15)
            except ValueError:
                t_cross = 0.5 * (ts[k - 1] + ts[k])
            breaks.append(float(t_cross))
            order.append(j)
    breaks.append(float(D))
    return np.asarray(breaks), order


def grid_density(positions, masses, D: float, exponent: float, interp: str = "pconst") -> Density1D:
    """Piecewise-constant density from point masses along [0, D].

    Cells are the mid-point partition induced by the positions; each cell
    carries mass/width.  Used by needle fits.
    """
    positions = np.asarray(positions, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if len(positions) < 2:
        raise DegenerateDomainError("need at least two positions")
    total = masses.sum()
    mids = 0.5 * (positions[1:] + positions[:-1])
    edges = np.concatenate([[0.0], mids, [D]])
    widths = np.diff(edges)
    vals = (masses / total) / widths
    return Density1D(
        D=float(D),
        form="grid",
        grid=positions,
        values=vals,
        exponent=exponent,
        total_mass=1.0,
        interp="pconst",
    )


def density_from_samples(grid, values, D: float, exponent: float, normalize: bool = True) -> Density1D:
    """Linearly interpolated density through (grid, values) samples."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    probe = Density1D(D=float(D), form="grid", grid=grid, values=values, exponent=exponent)
    raw = float(probe.cdf(D))
    if normalize:
        if raw <= 0:
            raise InvalidParameterError("density has nonpositive mass")
        values = values / raw
        raw = 1.0
    return Density1D(
        D=float(D), form="grid", grid=grid, values=values, exponent=exponent, total_mass=raw,
    )


# ---------------------------------------------------------------------------
# curvature membership


@dataclass(frozen=True)
class CDCheckResult:
    ok: bool
    worst_violation: float
    location: Optional[tuple]
    checks: int
    mode: str


def _sentinel_product(coeff: np.ndarray, g: np.ndarray, zero_tol: float) -> np.ndarray:
    infinite = coeff == INFINITE_COEFF
    out = np.where(infinite, 0.0, coeff) * g
    out[infinite & (g > zero_tol)] = INFINITE_COEFF
    return out


def is_cd_density(h: Density1D, params: CurvatureParams, tol: float = None,
                  max_nodes: int = 513) -> CDCheckResult:
    """Check the synthetic curvature inequality for h on its domain.

    The inequality is tested, in the g = h^(1/(N-1)) scale, at all sampled
    pairs (x0, x1) and interpolation weights {1/4, 1/2, 3/4}:

        g((1-s) x0 + s x1)  >=  sigma^(s)(|x1-x0|) g(x1)
                                + sigma^(1-s)(|x1-x0|) g(x0)

    with coefficients taken at reduced dimension N-1.  For closed forms a
    differential check of g'' + (K/(N-1)) g <= 0 on a fine grid is run as
    well.  Default tolerance: 1e-8 for closed forms, 1e-6 for grids.
    """
    if h.D <= 0:
        raise DegenerateDomainError(f"domain length must be positive, got {h.D}")
    N, K = params.N, params.K
    kappa = K / (N - 1.0)
    closed = h.pieces is not None
    if tol is None:
        tol = 1e-8 if closed else 1e-6

    nodes = h.grid
    if len(nodes) > max_nodes:
        idx = np.unique(np.linspace(0, len(nodes) - 1, max_nodes).astype(int))
        nodes = nodes[idx]
    g = np.maximum(h.evaluate(nodes), 0.0) ** (1.0 / (N - 1.0))

    worst = -np.inf
    where = None
    n_checks = 0
    i0, i1 = np.triu_indices(len(nodes), k=1)
    x0, x1 = nodes[i0], nodes[i1]
    g0, g1 = g[i0], g[i1]
    theta = x1 - x0
    zero_tol = 1e-12 * float(np.max(g))
    for s in (0.25, 0.5, 0.75):
        mid = (1.0 - s) * x0 + s * x1
        gm = np.maximum(h.evaluate(mid), 0.0) ** (1.0 / (N - 1.0))
        c1 = _sigma_raw_vec(s, theta, kappa)
        c0 = _sigma_raw_vec(1.0 - s, theta, kappa)
        # sentinel convention: an infinite coefficient multiplying a zero
        # endpoint value contributes nothing; against a positive value the
        # inequality is unsatisfiable
        t1 = _sentinel_product(c1, g1, zero_tol)
        t0 = _sentinel_product(c0, g0, zero_tol)
        viol = (t1 + t0) - gm
        n_checks += len(viol)
        k_bad = int(np.argmax(viol))
        if viol[k_bad] > worst:
            worst = float(viol[k_bad])
            where = (float(x0[k_bad]), float(x1[k_bad]), s)

    mode = "synthetic"
    if closed:
        fine = np.linspace(0.0, h.D, 2049)
        gf = np.maximum(h.evaluate(fine), 0.0) ** (1.0 / (N - 1.0))
        dx = fine[1] - fine[0]
        second = (gf[2:] - 2.0 * gf[1:-1] + gf[:-2]) / dx ** 2
        resid = second + kappa * gf[1:-1]
        # discretizing a smooth equality piece leaves an O(dx^2) residue; a
        # kink of the minimum spikes negative, which the one-sided test accepts
        diff_tol = max(tol, 0.5 * dx ** 2 * kappa * float(np.max(gf)))
        n_checks += len(resid)
        k_bad = int(np.argmax(resid))
        if resid[k_bad] > diff_tol and resid[k_bad] > worst:
            worst = float(resid[k_bad])
            where = (float(fine[1 + k_bad]), float(fine[1 + k_bad]), -1.0)
        mode = "synthetic+differential"

    return CDCheckResult(ok=bool(worst <= tol), worst_violation=worst,
                         location=where, checks=n_checks, mode=mode)


# ---------------------------------------------------------------------------
# comparison estimates against the model density


@dataclass(frozen=True)
class BracketResult:
    lower: float
    upper: float
    value: float
    ok: bool


def density_ratio_bounds(h: Density1D, t: float, s: float, N: float = None,
                         tol: float = 1e-9) -> BracketResult:
    """Two-sided model bounds for the ratio h(t+s)/h(t) on a deficit domain.

    With eps = pi - D the ratio is squeezed between
    h_N(t+s+eps)/h_N(t+eps) and h_N(t+s)/h_N(t).
    """
    if N is None:
        N = h.exponent
    D = h.D
    if not (0.0 < t and s >= 0.0 and t + s <= D + 1e-12):
        raise OutOfDomainError(f"need 0 < t <= t+s <= D, got t={t}, s={s}, D={D}")
    eps = PI - D
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = _safe_ratio(sp.model_value(t + s + eps, N), sp.model_value(t + eps, N))
        upper = _safe_ratio(sp.model_value(t + s, N), sp.model_value(t, N))
        value = _safe_ratio(float(h.evaluate(t + s)), float(h.evaluate(t)))
    ok = (value >= lower - tol) and (value <= upper + tol)
    return BracketResult(lower=lower, upper=upper, value=value, ok=ok)


def _safe_ratio(num: float, den: float) -> float:
    if den == 0.0:
        return INFINITE_COEFF if num > 0.0 else (1.0 if num == 0.0 else -INFINITE_COEFF)
    return num / den


def density_sandwich(h: Density1D, t: float, N: float = None, lam_D: float = None,
                     tol: float = 1e-9) -> BracketResult:
    """Pointwise model sandwich for a CD density on a deficit domain.

    lower = omega_N/(omega_N lam_D + eps) * min{h_N(t), h_N(t+eps)}
    upper = omega_N/(omega_N - eps)       * max{h_N(t), h_N(t+eps)}
    where eps = pi - D and lam_D is the window mass int_0^D h_N.
    """
    if N is None:
        N = h.exponent
    D = h.D
    if not (0.0 < t < D):
        raise OutOfDomainError(f"need t in (0, D), got t={t}, D={D}")
    eps = PI - D
    if lam_D is None:
        lam_D = float(sp.model_cdf(D, N))
    om = sp.omega_n(N)
    a, b = float(sp.model_value(t, N)), float(sp.model_value(t + eps, N))
    lower = om / (om * lam_D + eps) * min(a, b)
    upper = om / (om - eps) * max(a, b)
    value = float(h.evaluate(t))
    ok = (value >= lower - tol) and (value <= upper + tol)
    return BracketResult(lower=lower, upper=upper, value=value, ok=ok)


@dataclass(frozen=True)
class LogDerivResult:
    lower: float
    upper: float
    value: float
    lipschitz_estimate: float
    ok: bool


def log_derivative_bounds(h: Density1D, t: float, N: float = None, step: float = 1e-5,
                          tol: float = 1e-6) -> LogDerivResult:
    """Bracket for the logarithmic derivative h'/h at t.

    (N-1) cot(t + eps) <= h'(t)/h(t) <= (N-1) cot(t), eps = pi - D.
    The measured value uses central differences of the represented density.
    The exposed Lipschitz estimate is max(|lower|, |upper|) times the upper
    sandwich value at t.
    """
    if N is None:
        N = h.exponent
    D = h.D
    if not (0.0 < t < D):
        raise OutOfDomainError(f"need t strictly inside (0, D), got t={t}")
    eps = PI - D
    lower = (N - 1.0) / math.tan(t + eps) if t + eps < PI else -INFINITE_COEFF
    upper = (N - 1.0) / math.tan(t) if t > 0 else INFINITE_COEFF
    d = min(step, t / 2, (D - t) / 2)
    ht = float(h.evaluate(t))
    value = (float(h.evaluate(t + d)) - float(h.evaluate(t - d))) / (2.0 * d * ht)
    sandwich_up = density_sandwich(h, t, N).upper
    lip = max(abs(lower), abs(upper)) * sandwich_up
    ok = (value >= lower - tol) and (value <= upper + tol)
    return LogDerivResult(lower=lower, upper=upper, value=value,
                          lipschitz_estimate=lip, ok=ok)


@dataclass(frozen=True)
class UniqueMaxResult:
    t_max: float
    h_max: float
    monotone_ok: bool
    flat: bool


def unique_max(h: Density1D, tol: float = None) -> UniqueMaxResult:
    """Locate the maximum of h and verify single-peak monotone structure.

    Flags a flat density when the maximum is attained on more than two
    adjacent cells within tolerance.
    """
    if h.pieces is not None:
        ts = np.linspace(0.0, h.D, 4097)
        vals = h.evaluate(ts)
    else:
        ts, vals = h.grid, h.values
    if tol is None:
        tol = 1e-9 * float(np.max(vals))
    i = int(np.argmax(vals))
    diffs = np.diff(vals)
    mono = bool(np.all(diffs[:i] >= -tol) and np.all(diffs[i:] <= tol))
    near = np.flatnonzero(vals >= vals[i] - tol)
    runs = np.split(near, np.where(np.diff(near) > 1)[0] + 1)
    plateau = max(len(r) for r in runs)
    return UniqueMaxResult(t_max=float(ts[i]), h_max=float(vals[i]),
                           monotone_ok=mono, flat=bool(plateau > 2))


# ---------------------------------------------------------------------------
# random CD generator


def random_cd_density(rng: np.random.Generator, N: float, D: float,
                      max_pieces: int = 3) -> Density1D:
    """Random CD(N-1, N) density on [0, D] from the equality-case family."""
    amps, fracs = _draw_latents(rng, max_pieces)
    return cd_density_from_latents(N, D, amps, fracs)


def _draw_latents(rng: np.random.Generator, max_pieces: int):
    k = int(rng.integers(1, max_pieces + 1))
    amps = rng.uniform(0.6, 1.8, size=k)
    fracs = np.sort(rng.uniform(0.05, 0.95, size=k))
    return amps, fracs


def cd_density_from_latents(N: float, D: float, amps, fracs) -> Density1D:
    """Deterministic generator body: phases are fractions of the slack pi - D.

    Keeping the latents fixed while shrinking the deficit pi - D produces a
    family converging uniformly to the model density.
    """
    slack = PI - D
    pieces = [(float(A), float(f * slack)) for A, f in zip(np.atleast_1d(amps), np.atleast_1d(fracs))]
    if not pieces:
        pieces = [(1.0, 0.5 * slack)]
    return sine_power_density(N, D, pieces)


# ---------------------------------------------------------------------------
# serialization: header "D N form", then one "t h" pair per line


def density_to_text(h: Density1D) -> str:
    buf = io.StringIO()
    form = "grid-pconst" if (h.form == "grid" and h.interp == "pconst") else h.form
    buf.write(f"{h.D!r} {h.exponent!r} {form}\n")
    for t, v in zip(h.grid, h.values):
        buf.write(f"{float(t)!r} {float(v)!r}\n")
    return buf.getvalue()


def density_from_text(text: str) -> Density1D:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 3:
        raise InvalidParameterError("density header must be 'D N form'")
    D, N, form = float(head[0]), float(head[1]), head[2]
    rows = np.asarray([[float(x) for x in ln.split()] for ln in lines[1:]])
    if rows.shape[0] < 2 or rows.shape[1] != 2:
        raise InvalidParameterError("density body must be 't h' pairs")
    interp = "pconst" if form == "grid-pconst" else "linear"
    loaded = Density1D(
        D=D, form="grid", grid=rows[:, 0], values=rows[:, 1], exponent=N,
        total_mass=1.0, interp=interp,
    )
    # keep the written values verbatim; record the interpolant's actual mass
    # (tabulating a closed form is lossy at the quadrature level)
    return Density1D(
        D=D, form="grid", grid=rows[:, 0], values=rows[:, 1], exponent=N,
        total_mass=float(loaded.cdf(D)), interp=interp,
    )
