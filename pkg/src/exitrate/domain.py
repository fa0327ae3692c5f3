"""Bounded open domains: intervals, axis-aligned boxes and balls.

All three shapes have closed-form signed distance and projection, which the
constrained action minimizer relies on.  Box corners are not C^2; they are
accepted as a test-geometry idealization.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


def _vec(v, name):
    v = np.array(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be finite")
    v.setflags(write=False)
    return v


class Domain:
    """Common interface; see Box and Ball."""

    kind: str

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ShapeError(f"point has dimension {x.shape[-1]}, domain has {self.d}")
        return x

    def contains(self, x):
        """Strict interior membership; vectorized over leading axes."""
        return self.boundary_distance(x) > 0

    def describe(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Box(Domain):
    """Open box prod_j (lower_j, upper_j).  ``kind`` is "interval" when d == 1."""

    lower: np.ndarray
    upper: np.ndarray
    kind: str = field(default="box")

    def __post_init__(self):
        lo, hi = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != hi.shape or lo.size == 0:
            raise ShapeError("lower and upper must be nonempty and of equal length")
        if np.any(hi <= lo):
            raise DomainError(f"empty box: lower={lo.tolist()} upper={hi.tolist()}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, a, b):
        return cls([a], [b], kind="interval")

    @property
    def d(self):
        return self.lower.size

    @property
    def inradius(self):
        return float(np.min(self.upper - self.lower) / 2)

    @property
    def center(self):
        return (self.lower + self.upper) / 2

    def bounds(self):
        return self.lower, self.upper

    def boundary_distance(self, x):
        x = self._check(x)
        below = self.lower - x
        above = x - self.upper
        inside = np.min(np.minimum(-below, -above), axis=-1)
        excess = np.maximum(np.maximum(below, above), 0.0)
        outside = np.sqrt(np.sum(excess**2, axis=-1))
        return np.where(inside > 0, inside, np.where(outside > 0, -outside, inside))

    def inflate(self, delta):
        lo, hi = self.lower - delta, self.upper + delta
        if np.any(hi <= lo):
            raise DomainError(
                f"shrinking by {-delta} empties the domain (inradius {self.inradius})"
            )
        return Box(lo, hi, kind=self.kind)

    def project(self, x, margin=0.0):
        """Nearest point of the closed set {distance >= margin}."""
        x = self._check(x)
        return np.clip(x, self.lower + margin, self.upper - margin)

    def describe(self):
        if self.kind == "interval":
            return {"kind": "interval", "a": float(self.lower[0]), "b": float(self.upper[0])}
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class Ball(Domain):
    center: np.ndarray
    radius: float
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self):
        return self.center.size

    @property
    def inradius(self):
        return self.radius

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def boundary_distance(self, x):
        x = self._check(x)
        return self.radius - np.sqrt(np.sum((x - self.center) ** 2, axis=-1))

    def inflate(self, delta):
        if self.radius + delta <= 0:
            raise DomainError(
                f"shrinking by {-delta} empties the domain (radius {self.radius})"
            )
        return Ball(self.center, self.radius + delta)

    def project(self, x, margin=0.0):
        x = self._check(x)
        r = self.radius - margin
        off = x - self.center
        norm = np.sqrt(np.sum(off**2, axis=-1, keepdims=True))
        scale = np.where(norm > r, r / np.where(norm > 0, norm, 1.0), 1.0)
        return self.center + off * scale

    def describe(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


def interval(a, b):
    return Box.interval(a, b)


def box(lower, upper):
    return Box(lower, upper)


def ball(center, radius):
    return Ball(center, radius)


@dataclass(frozen=True)
class GridSpec:
    points_per_axis: int

    def __post_init__(self):
        n = self.points_per_axis
        if isinstance(n, (int, np.integer)):
            n = (int(n),)
        n = tuple(int(v) for v in n)
        if any(v < 3 for v in n):
            raise DomainError(f"grid too coarse: need >= 3 points per axis, got {n}")
        object.__setattr__(self, "points_per_axis", n)

    def per_axis(self, d):
        n = self.points_per_axis
        if len(n) == 1:
            return n * d
        if len(n) != d:
            raise ShapeError(f"grid spec has {len(n)} axes, domain has {d}")
        return n


@dataclass(frozen=True)
class Grid:
    """Interior nodes of a tensor grid, in lexicographic (C) order.

    ``index`` maps each tensor-grid multi-index to its interior node number,
    or -1 for masked-out nodes.
    """

    points: np.ndarray
    h: np.ndarray
    axes: tuple
    index: np.ndarray

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def shape(self):
        return self.index.shape


def interior_grid(dom, spec):
    """Tensor grid of the bounding box with spacing (b - a)/(n + 1) per axis,
    keeping the nodes strictly inside ``dom``."""
    if not isinstance(spec, GridSpec):
        spec = GridSpec(spec)
    ns = spec.per_axis(dom.d)
    lo, hi = dom.bounds()
    h = (hi - lo) / (np.array(ns) + 1)
    axes = tuple(lo[j] + h[j] * np.arange(1, ns[j] + 1) for j in range(dom.d))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, dom.d)
    keep = dom.contains(flat)
    index = np.full(flat.shape[0], -1, dtype=np.int64)
    index[keep] = np.arange(int(keep.sum()))
    points = flat[keep]
    if points.shape[0] == 0:
        raise DomainError("grid has no interior points")
    points.setflags(write=False)
    return Grid(points=points, h=h, axes=axes, index=index.reshape(tuple(ns)))
