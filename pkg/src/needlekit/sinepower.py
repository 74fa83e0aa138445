"""Exact integrals, masses and quantiles of the sine-power family sin^(N-1).

Everything here reduces to the regularized incomplete beta function through
the substitution u = sin^2(t), which turns int_0^x sin^(N-1) into
(omega_N / 2) * I(sin^2 x; N/2, 1/2) for x <= pi/2, extended by symmetry.
All routines accept scalars or numpy arrays and are accurate to double
precision, which the downstream quantile and profile tolerances rely on.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import InvalidParameterError

PI = np.pi


def omega_n(N: float) -> float:
    """Total mass int_0^pi sin^(N-1) t dt = B(N/2, 1/2)."""
    if N <= 1.0:
        raise InvalidParameterError(f"dimension parameter must exceed 1, got {N}")
    return float(special.beta(N / 2.0, 0.5))


def sin_power_integral(x, N: float):
    """int_0^x sin^(N-1) t dt for x in [0, pi]."""
    x = np.asarray(x, dtype=float)
    om = omega_n(N)
    # reflect onto [0, pi/2]; betainc needs sin^2 of the reflected coordinate
    xr = np.where(x <= PI / 2.0, x, PI - x)
    s2 = np.clip(np.sin(xr), 0.0, 1.0) ** 2
    core = 0.5 * om * special.betainc(N / 2.0, 0.5, s2)
    out = np.where(x <= PI / 2.0, core, om - core)
    return float(out) if out.ndim == 0 else out


def sin_power_mass(a, b, N: float):
    """int_a^b sin^(N-1), for 0 <= a <= b <= pi."""
    return sin_power_integral(b, N) - sin_power_integral(a, N)


def sin_power_quantile(m, N: float):
    """Inverse of sin_power_integral: the x in [0, pi] with int_0^x sin^(N-1) = m."""
    om = omega_n(N)
    m = np.asarray(m, dtype=float)
    mr = np.where(m <= om / 2.0, m, om - m)
    u = special.betaincinv(N / 2.0, 0.5, np.clip(2.0 * mr / om, 0.0, 1.0))
    x = np.arcsin(np.sqrt(np.clip(u, 0.0, 1.0)))
    out = np.where(m <= om / 2.0, x, PI - x)
    return float(out) if out.ndim == 0 else out


def model_cdf(t, N: float):
    """Cumulative mass of the normalized model density sin^(N-1)/omega_N."""
    val = sin_power_integral(t, N) / omega_n(N)
    return val


def model_quantile(v, N: float):
    """Radius r with int_0^r sin^(N-1)/omega_N = v."""
    return sin_power_quantile(np.asarray(v, dtype=float) * omega_n(N), N)


def model_value(t, N: float):
    """Normalized model density sin^(N-1)(t)/omega_N."""
    t = np.asarray(t, dtype=float)
    out = np.sin(np.clip(t, 0.0, PI)) ** (N - 1.0) / omega_n(N)
    return float(out) if out.ndim == 0 else out


def isoperimetric_value(v, N: float):
    """Model profile at full diameter: density value at the volume-v quantile."""
    v = np.asarray(v, dtype=float)
    r = model_quantile(v, N)
    out = model_value(r, N)
    return float(out) if np.ndim(out) == 0 else out


def small_volume_profile_limit(N: float) -> float:
    """lim_{t -> 0} isoperimetric_value(t) / t^((N-1)/N), in closed form."""
    return float(N ** ((N - 1.0) / N) * omega_n(N) ** (-1.0 / N))
