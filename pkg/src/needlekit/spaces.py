"""Synthetic test spaces with known ground truth: Fibonacci sphere meshes,
one-dimensional model segments, spherical suspensions over tiny finite
bases, and cap-shaped subsets of prescribed volume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, OutOfDomainError, OverlapError
from .mmspace import DiscreteSpace
from .sinepower import sin_power_mass

PI = math.pi


@dataclass(frozen=True)
class SpaceSpec:
    """Declarative recipe for a generated space."""

    kind: str
    resolution: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def build(self) -> DiscreteSpace:
        if self.kind == "sphere2":
            return make_sphere2(self.resolution)
        if self.kind == "segment1d":
            p = self.params
            return make_segment(p["N"], p["D"], p.get("xi", 0.0), self.resolution)
        if self.kind == "suspension":
            p = self.params
            return make_suspension(np.asarray(p["base_dist"], dtype=float),
                                   np.asarray(p["base_weight"], dtype=float),
                                   self.resolution, p.get("N", 2.0))
        raise InvalidParameterError(f"unknown space kind {self.kind!r}")


def make_sphere2(n: int) -> DiscreteSpace:
    """Fibonacci lattice on the unit sphere: deterministic, near-uniform,
    uniform weights 1/n, arc-cosine geodesic distances."""
    if n < 50:
        raise InvalidParameterError(f"sphere mesh needs at least 50 points, got {n}")
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    golden = PI * (3.0 - math.sqrt(5.0))
    phi = golden * i
    coords = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    dist = np.arccos(np.clip(coords @ coords.T, -1.0, 1.0))
    np.fill_diagonal(dist, 0.0)
    weight = np.full(n, 1.0 / n)
    return DiscreteSpace(dist=dist, weight=weight, coords=coords, kind="sphere2")


def make_segment(N: float, D: float, xi: float, n: int) -> DiscreteSpace:
    """Uniform grid on [xi, xi + D] carrying cell-integrated sine-power
    weights; diameter is exactly D."""
    if N <= 1.0:
        raise InvalidParameterError(f"dimension parameter must exceed 1, got {N}")
    if D <= 0:
        raise InvalidParameterError(f"segment length must be positive, got {D}")
    if xi < 0 or xi + D > PI + 1e-12:
        raise OutOfDomainError(f"window [{xi}, {xi + D}] leaves [0, pi]")
    if n < 4:
        raise InvalidParameterError("segment needs at least 4 points")
    t = xi + np.linspace(0.0, D, n)
    edges = np.concatenate([[t[0]], (t[:-1] + t[1:]) / 2, [t[-1]]])
    edges = np.clip(edges, 0.0, PI)
    weight = np.array([sin_power_mass(a, b, N) for a, b in zip(edges[:-1], edges[1:])])
    weight /= weight.sum()
    coords = np.column_stack([t, np.zeros(n), np.zeros(n)])
    dist = np.abs(t[:, None] - t[None, :])
    space = DiscreteSpace(dist=dist, weight=weight, coords=coords, kind="segment1d")
    space.meta.update({"N": N, "D": D, "xi": xi})
    return space


def make_suspension(base_dist: np.ndarray, base_weight: np.ndarray,
                    n_arc: int, N: float = 2.0) -> DiscreteSpace:
    """Spherical suspension over a tiny finite base: points (t, y) with the
    cosine rule cos d = cos t cos s + sin t sin s cos(d_base), plus the two
    poles.  Qualitative test generator only."""
    m = len(base_weight)
    if m > 20:
        raise InvalidParameterError("suspension base capped at 20 points")
    if np.max(base_dist) > PI + 1e-12:
        raise OutOfDomainError("base distances must not exceed pi")
    if abs(float(np.sum(base_weight)) - 1.0) > 1e-9:
        raise InvalidParameterError("base weights must sum to 1")
    if n_arc < 3:
        raise InvalidParameterError("suspension needs at least 3 arc points")

    t = np.linspace(0.0, PI, n_arc + 2)[1:-1]
    edges = np.concatenate([[0.0], (t[:-1] + t[1:]) / 2, [PI]])
    # pole cells are split off the first and last arc cells
    pole_cut_s = (0.0 + t[0]) / 2
    pole_cut_n = (t[-1] + PI) / 2
    arc_mass = np.array([sin_power_mass(a, b, N) for a, b in
                         zip(np.concatenate([[pole_cut_s], edges[1:-1]]),
                             np.concatenate([edges[1:-1], [pole_cut_n]]))])
    south_mass = sin_power_mass(0.0, pole_cut_s, N)
    north_mass = sin_power_mass(pole_cut_n, PI, N)

    ts, ys = np.meshgrid(t, np.arange(m), indexing="ij")
    ts, ys = ts.ravel(), ys.ravel().astype(int)
    weight = (arc_mass[:, None] * base_weight[None, :]).ravel()
    ts = np.concatenate([[0.0], ts, [PI]])
    ys = np.concatenate([[0], ys, [0]])
    weight = np.concatenate([[south_mass], weight, [north_mass]])
    weight /= weight.sum()

    base_cos = np.cos(np.minimum(base_dist, PI))
    cos_d = (np.cos(ts)[:, None] * np.cos(ts)[None, :]
             + np.sin(ts)[:, None] * np.sin(ts)[None, :] * base_cos[ys][:, ys])
    dist = np.arccos(np.clip(cos_d, -1.0, 1.0))
    np.fill_diagonal(dist, 0.0)
    coords = np.column_stack([ts, ys.astype(float), np.zeros(len(ts))])
    space = DiscreteSpace(dist=dist, weight=weight, coords=coords, kind="suspension")
    space.meta.update({"N": N, "base_size": m})
    return space


@dataclass(frozen=True)
class CapSet:
    """Greedy geodesic cap: membership mask, achieved mass, boundary radius."""

    mask: np.ndarray
    mass: float
    radius: float


def make_cap_set(space: DiscreteSpace, center: int, v: float) -> CapSet:
    """Points included by increasing distance from center until the mass
    reaches v; ties broken by point id via stable sort."""
    if not (0.0 < v < 1.0):
        raise InvalidParameterError(f"volume fraction must lie in (0, 1), got {v}")
    order = np.argsort(space.dist[center], kind="stable")
    cum = np.cumsum(space.weight[order])
    k = int(np.searchsorted(cum, v)) + 1
    k = min(k, space.n)
    mask = np.zeros(space.n, dtype=bool)
    mask[order[:k]] = True
    return CapSet(mask=mask, mass=float(cum[k - 1]),
                  radius=float(space.dist[center, order[k - 1]]))


def make_perturbed_cap(space: DiscreteSpace, center: int, v: float,
                       blob_volume: float, blob_center: int) -> CapSet:
    """Cap of volume v - blob_volume at center plus a far blob cap of volume
    blob_volume; total volume stays at v.  Rejects overlapping pieces."""
    if blob_volume < 0 or blob_volume >= v:
        raise InvalidParameterError(
            f"blob volume must lie in [0, v), got {blob_volume}")
    if blob_volume == 0.0:
        return make_cap_set(space, center, v)
    blob = make_cap_set(space, blob_center, blob_volume)
    main_target = v - blob.mass
    if main_target <= 0:
        raise InvalidParameterError("blob exhausts the whole volume budget")
    main = make_cap_set(space, center, main_target)
    if np.any(main.mask & blob.mask):
        raise OverlapError("blob cap intersects the shrunken main cap")
    mask = main.mask | blob.mask
    return CapSet(mask=mask, mass=float(np.sum(space.weight[mask])),
                  radius=main.radius)
