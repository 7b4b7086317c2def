"""Two-inclusion gap configurations.

Coordinates follow the usual normalisation: the closest points are
``P1 = (0, eps/2)`` on the upper inclusion ``D1`` and ``P2 = (0, -eps/2)`` on
the lower inclusion ``D2``; near the gap the boundaries are the graphs
``x2 = eps/2 + h1(x1)`` and ``x2 = -eps/2 + h2(x1)``.

Each inclusion is described by a *canonical* shape whose lowest point sits at
the origin and whose body lies above it.  The upper inclusion is the canonical
shape shifted up by ``eps/2``; the lower one is the canonical shape mirrored
through the x1-axis and shifted down by ``eps/2``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "ShapeKind",
    "GeometryDomainError",
    "InclusionShape",
    "GapGeometry",
    "gap_height",
    "delta",
    "dist_to_segment",
    "smoothstep5",
]

KAPPA1_MIN = 0.1
# outer disk radius; far enough that the bulk part of a11 does not mask its gap singularity
DEFAULT_OUTER_RADIUS = 8.0


class ShapeKind(str, enum.Enum):
    DISK = "disk"
    M_FLAT = "mflat"


class GeometryDomainError(ValueError):
    """A coordinate lies outside the region where a formula is defined."""


def smoothstep5(t):
    """Quintic C2 step on [0, 1] with its first two derivatives."""
    t = np.clip(t, 0.0, 1.0)
    s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    ds = 30.0 * t * t * (1.0 - t) ** 2
    dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, dds


@dataclass(frozen=True)
class InclusionShape:
    """Canonical inclusion: lowest point at the origin, body above.

    DISK: circle of ``radius`` centred at ``(0, radius)``.

    M_FLAT: the graph ``y = (lambda_flat/2)|x|^m`` for ``|x| <= exact_half_width``,
    blended (quintic, C2) into the lower arc of a circle of ``radius`` centred at
    ``(0, cap_center)`` on ``exact_half_width <= |x| <= blend_end``; the circle
    closes the curve everywhere else.
    """

    kind: ShapeKind
    radius: float
    m: float = 2.0
    lambda_flat: float = 0.0
    exact_half_width: float = 0.0
    blend_end: float = 0.0
    cap_center: float = 0.0

    @classmethod
    def disk(cls, radius):
        if radius <= 0:
            raise ValueError("disk radius must be positive")
        return cls(ShapeKind.DISK, float(radius), cap_center=float(radius))

    @classmethod
    def mflat(cls, m, lambda_flat, exact_half_width, radius=1.0):
        if m < 2:
            raise ValueError("flatness order m must be >= 2")
        if lambda_flat <= 0:
            raise ValueError("lambda_flat must be positive")
        if not 0 < exact_half_width < radius:
            raise ValueError("the exact-graph window must fit inside the cap circle")
        xb = float(exact_half_width)
        xc = xb + 0.6 * (radius - xb)
        xm = 0.5 * (xb + xc)
        # cap circle placed so that the polynomial and the arc cross mid-blend
        c = 0.5 * lambda_flat * xm**m + math.sqrt(radius**2 - xm**2)
        return cls(ShapeKind.M_FLAT, float(radius), float(m), float(lambda_flat), xb, xc, c)

    # -- graph of the gap-facing boundary -------------------------------------------

    @property
    def half_width(self):
        """Graph representation of the lower boundary is valid for |x| < half_width."""
        return self.radius

    def _poly(self, x):
        a = 0.5 * self.lambda_flat
        m = self.m
        ax = np.abs(x)
        p = a * ax**m
        dp = a * m * ax ** (m - 1) * np.sign(x)
        ddp = a * m * (m - 1) * ax ** (m - 2)
        return p, dp, ddp

    def _cap(self, x):
        r = self.radius
        root = np.sqrt(np.maximum(r * r - x * x, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = self.cap_center - root
            dq = x / root
            ddq = r * r / root**3
        return q, dq, ddq

    def _blend(self, x):
        width = self.blend_end - self.exact_half_width
        s, ds, dds = smoothstep5((np.abs(x) - self.exact_half_width) / width)
        return s, ds * np.sign(x) / width, dds / width**2

    def graph(self, x):
        """Height of the lower boundary above its lowest point, with derivatives."""
        x = np.asarray(x, dtype=float)
        if self.kind is ShapeKind.DISK:
            r = self.radius
            root = np.sqrt(np.maximum(r * r - x * x, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                return r - root, x / root, r * r / root**3
        p, dp, ddp = self._poly(x)
        q, dq, ddq = self._cap(x)
        b, db, ddb = self._blend(x)
        with np.errstate(invalid="ignore"):
            g, dg, ddg = self._combine(p, dp, ddp, q, dq, ddq, b, db, ddb)
        inner = np.abs(x) <= self.exact_half_width
        g = np.where(inner, p, g)
        dg = np.where(inner, dp, dg)
        ddg = np.where(inner, ddp, ddg)
        return g, dg, ddg

    @staticmethod
    def _combine(p, dp, ddp, q, dq, ddq, b, db, ddb):
        g = p + b * (q - p)
        dg = dp + db * (q - p) + b * (dq - dp)
        ddg = ddp + ddb * (q - p) + 2.0 * db * (dq - dp) + b * (ddq - ddp)
        return g, dg, ddg

    # -- closed boundary curve --------------------------------------------------------

    @property
    def centre(self):
        return np.array([0.0, self.cap_center])

    def curve(self, theta):
        """Counter-clockwise boundary parametrised by the angle about the cap centre.

        Returns ``(P, dP, ddP)`` each of shape ``(n, 2)``.
        """
        th = np.asarray(theta, dtype=float)
        r = self.radius
        c, s = np.cos(th), np.sin(th)
        P = np.stack([r * c, self.cap_center + r * s], axis=-1)
        dP = np.stack([-r * s, r * c], axis=-1)
        ddP = np.stack([-r * c, -r * s], axis=-1)
        if self.kind is ShapeKind.M_FLAT:
            x = r * c
            active = (s < 0) & (np.abs(x) < self.blend_end)
            if np.any(active):
                xa = x[active]
                p, dp, ddp = self._poly(xa)
                q, dq, ddq = self._cap(xa)
                b, db, ddb = self._blend(xa)
                D = (1 - b) * (p - q)
                dD = -db * (p - q) + (1 - b) * (dp - dq)
                ddD = -ddb * (p - q) - 2 * db * (dp - dq) + (1 - b) * (ddp - ddq)
                xp = -r * s[active]
                xpp = -r * c[active]
                P[active, 1] += D
                dP[active, 1] += dD * xp
                ddP[active, 1] += ddD * xp * xp + dD * xpp
        return P, dP, ddP

    @cached_property
    def _samples(self):
        th = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        return th, self.curve(th)[0]

    def closest_point(self, pts, iters=12):
        """Closest boundary point for each query point (canonical frame).

        Returns ``(theta, foot, dist_signed, normal, curvature)``; ``dist_signed``
        is negative inside the inclusion, ``normal`` is the outward unit normal at
        the foot and ``curvature`` is positive for a convex boundary.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind is ShapeKind.DISK:
            d = pts - self.centre
            rho = np.hypot(d[:, 0], d[:, 1])
            th = np.arctan2(d[:, 1], d[:, 0])
            n = np.stack([np.cos(th), np.sin(th)], axis=-1)
            foot = self.centre + self.radius * n
            return th, foot, rho - self.radius, n, np.full(len(pts), 1.0 / self.radius)
        th_s, P_s = self._samples
        nearest = np.empty(len(pts), dtype=int)
        for lo in range(0, len(pts), 512):
            chunk = pts[lo:lo + 512]
            d2 = ((chunk[:, None, :] - P_s[None, :, :]) ** 2).sum(-1)
            nearest[lo:lo + 512] = d2.argmin(axis=1)
        th = th_s[nearest].copy()
        step = th_s[1] - th_s[0]
        for _ in range(iters):
            P, dP, ddP = self.curve(th)
            r = P - pts
            f = (r * dP).sum(-1)
            fp = (dP * dP).sum(-1) + (r * ddP).sum(-1)
            fp = np.where(fp > 1e-14, fp, 1e-14)
            th = th - np.clip(f / fp, -step, step)
        P, dP, ddP = self.curve(th)
        speed = np.hypot(dP[:, 0], dP[:, 1])
        n = np.stack([dP[:, 1], -dP[:, 0]], axis=-1) / speed[:, None]
        r = pts - P
        dist = np.hypot(r[:, 0], r[:, 1])
        sign = np.where((r * n).sum(-1) < 0, -1.0, 1.0)
        kappa = (dP[:, 0] * ddP[:, 1] - dP[:, 1] * ddP[:, 0]) / speed**3
        return th, P, sign * dist, n, kappa

    def min_curvature_radius(self):
        th = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
        _, dP, ddP = self.curve(th)
        speed = np.hypot(dP[:, 0], dP[:, 1])
        kappa = np.abs(dP[:, 0] * ddP[:, 1] - dP[:, 1] * ddP[:, 0]) / speed**3
        return 1.0 / max(kappa.max(), 1e-12)


@dataclass(frozen=True)
class GapGeometry:
    """Two inclusions inside the disk ``|x| < outer_radius``.

    ``upper`` and ``lower`` are canonical shapes of ``D1`` and ``D2``.
    """

    shape_kind: ShapeKind
    epsilon: float
    outer_radius: float
    R_local: float
    upper: InclusionShape
    lower: InclusionShape
    kappa0: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"gap epsilon must be positive, got {self.epsilon}")
        if not self.R_local > 0:
            raise ValueError("R_local must be positive")
        if 2 * self.R_local > min(self.upper.half_width, self.lower.half_width) + 1e-12:
            raise ValueError("gap window 2*R_local exceeds the graph range of an inclusion")
        clearance = self.outer_radius - self.max_inclusion_extent()
        if clearance < KAPPA1_MIN:
            raise ValueError(
                f"inclusions too close to the outer boundary (clearance {clearance:.3g} "
                f"< {KAPPA1_MIN})"
            )

    # -- constructors -----------------------------------------------------------------

    @classmethod
    def disk(cls, epsilon, radius=1.0, radius2=None, outer_radius=DEFAULT_OUTER_RADIUS, R_local=None):
        r2 = radius if radius2 is None else radius2
        rmin = min(radius, r2)
        if R_local is None:
            R_local = min(rmin / 2, 0.5)
        return cls(
            ShapeKind.DISK, float(epsilon), float(outer_radius), float(R_local),
            InclusionShape.disk(radius), InclusionShape.disk(r2),
            kappa0=1.0 / max(radius, r2),
        )

    @classmethod
    def mflat(cls, epsilon, m=4.0, lambda_flat=1.0, m2=None, lambda2=None,
              radius=1.0, outer_radius=DEFAULT_OUTER_RADIUS, R_local=0.25):
        up = InclusionShape.mflat(m, lambda_flat, 2 * R_local, radius)
        lo = InclusionShape.mflat(m if m2 is None else m2,
                                  lambda_flat if lambda2 is None else lambda2,
                                  2 * R_local, radius)
        return cls(ShapeKind.M_FLAT, float(epsilon), float(outer_radius), float(R_local), up, lo)

    def with_epsilon(self, epsilon):
        return GapGeometry(self.shape_kind, float(epsilon), self.outer_radius, self.R_local,
                           self.upper, self.lower, self.kappa0, self.name)

    # -- basic quantities -----------------------------------------------------------

    @property
    def P1(self):
        return np.array([0.0, 0.5 * self.epsilon])

    @property
    def P2(self):
        return np.array([0.0, -0.5 * self.epsilon])

    @property
    def m(self):
        """Flatness order governing the gap (2 for disks)."""
        if self.shape_kind is ShapeKind.DISK:
            return 2.0
        return min(self.upper.m, self.lower.m)

    @property
    def graph_half_width(self):
        return min(self.upper.half_width, self.lower.half_width)

    def heights(self, x1):
        """``(h1, h2)`` and their first/second derivatives, no window check."""
        g1, dg1, ddg1 = self.upper.graph(x1)
        g2, dg2, ddg2 = self.lower.graph(x1)
        return (g1, dg1, ddg1), (-g2, -dg2, -ddg2)

    def local_half_gap(self, x1):
        """Half the vertical gap ``(eps + h1 - h2)/2`` wherever both graphs exist."""
        (h1, _, _), (h2, _, _) = self.heights(x1)
        return 0.5 * (self.epsilon + h1 - h2)

    def strip_bounds(self, x1):
        """Lower and upper x2 limits of the gap strip above ``x1``."""
        (h1, _, _), (h2, _, _) = self.heights(x1)
        return -0.5 * self.epsilon + h2, 0.5 * self.epsilon + h1

    def in_strip(self, pts, half_width, tol=0.0):
        pts = np.atleast_2d(pts)
        x1 = pts[:, 0]
        ok = np.abs(x1) < half_width
        xs = np.clip(x1, -self.graph_half_width * 0.999999, self.graph_half_width * 0.999999)
        lo, hi = self.strip_bounds(xs)
        return ok & (pts[:, 1] >= lo - tol) & (pts[:, 1] <= hi + tol)

    # -- inclusion frames -------------------------------------------------------------

    def shape(self, i):
        return self.upper if i == 1 else self.lower

    def to_canonical(self, i, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if i == 1:
            return np.stack([pts[:, 0], pts[:, 1] - 0.5 * self.epsilon], axis=-1)
        return np.stack([pts[:, 0], -(pts[:, 1] + 0.5 * self.epsilon)], axis=-1)

    def from_canonical(self, i, pts):
        pts = np.atleast_2d(pts)
        sgn = 1.0 if i == 1 else -1.0
        return np.stack([pts[:, 0], sgn * (pts[:, 1] + 0.5 * self.epsilon)], axis=-1)

    def boundary_points(self, i, theta):
        P, _, _ = self.shape(i).curve(theta)
        return self.from_canonical(i, P)

    def inclusion_centre(self, i):
        return self.from_canonical(i, self.shape(i).centre[None, :])[0]

    def signed_distance(self, i, pts):
        """Signed distance to boundary of D_i (negative inside) with outward normal
        and boundary curvature at the foot point."""
        _, _, d, n, kappa = self.shape(i).closest_point(self.to_canonical(i, pts))
        if i == 2:
            n = n * np.array([1.0, -1.0])
        return d, n, kappa

    def max_inclusion_extent(self):
        th = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
        ext = 0.0
        for i in (1, 2):
            P = self.boundary_points(i, th)
            ext = max(ext, float(np.hypot(P[:, 0], P[:, 1]).max()))
        return ext

    def describe(self):
        if self.shape_kind is ShapeKind.DISK:
            return (f"disk r=({self.upper.radius:g},{self.lower.radius:g}) eps={self.epsilon:g} "
                    f"outer={self.outer_radius:g}")
        return (f"mflat m=({self.upper.m:g},{self.lower.m:g}) "
                f"lambda=({self.upper.lambda_flat:g},{self.lower.lambda_flat:g}) "
                f"eps={self.epsilon:g} outer={self.outer_radius:g}")


def gap_height(geom, x1):
    """Graph values ``(h1, h2)`` of the inclusion boundaries at ``x1``.

    Only defined on the gap window ``|x1| < 2 R_local``.
    """
    x1a = np.asarray(x1, dtype=float)
    if np.any(np.abs(x1a) >= 2 * geom.R_local):
        raise GeometryDomainError(
            f"x1 outside the gap window |x1| < {2 * geom.R_local:g}")
    (h1, _, _), (h2, _, _) = geom.heights(x1a)
    if np.ndim(x1) == 0:
        return float(h1), float(h2)
    return h1, h2


def delta(geom, z1):
    """Local half gap ``(eps + h1(z1) - h2(z1))/2`` for ``|z1| <= R_local``."""
    z = np.asarray(z1, dtype=float)
    if np.any(np.abs(z) > geom.R_local):
        raise GeometryDomainError(f"z1 outside |z1| <= R_local = {geom.R_local:g}")
    h1, h2 = gap_height(geom, z)
    out = 0.5 * (geom.epsilon + np.asarray(h1) - np.asarray(h2))
    return float(out) if np.ndim(z1) == 0 else out


def dist_to_segment(x, geom):
    """Euclidean distance from point(s) ``x`` to the closed segment P1P2."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    half = 0.5 * geom.epsilon
    dy = np.maximum(np.abs(pts[:, 1]) - half, 0.0)
    d = np.hypot(pts[:, 0], dy)
    return float(d[0]) if x.ndim == 1 else d
