"""Procedural shape families with uniform surface sampling.

Every family is a union of primitive surfaces (boxes, cylinders, spheres,
cones); samples are drawn proportionally to surface area and the final
cloud is centered and scaled into the unit ball. Identical spec -> bit
identical cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("box", "cylinder", "sphere_union", "chair", "lamp")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: tuple[float, ...]
    seed: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ShapeError(f"unknown shape family {self.family!r}; valid: {FAMILIES}")


# primitive surface samplers -------------------------------------------------
# each returns (points, area) so composites can weight by surface area


def _box_surface(rng, n, half, center):
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    pts = np.empty((n, 3))
    signs = np.where(face % 2 == 0, 1.0, -1.0)
    axis = face // 2
    for ax in range(3):
        m = axis == ax
        o1, o2 = [a for a in range(3) if a != ax]
        pts[m, ax] = signs[m] * half[ax]
        pts[m, o1] = u[m] * half[o1]
        pts[m, o2] = v[m] * half[o2]
    return pts + center, float(areas.sum())


def _cylinder_surface(rng, n, radius, height, center):
    lateral = 2 * np.pi * radius * height
    caps = 2 * np.pi * radius * radius
    total = lateral + caps
    on_side = rng.uniform(size=n) < lateral / total
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    side = on_side
    pts[side, 0] = radius * np.cos(theta[side])
    pts[side, 2] = radius * np.sin(theta[side])
    pts[side, 1] = rng.uniform(-height / 2, height / 2, size=side.sum())
    cap = ~on_side
    r = radius * np.sqrt(rng.uniform(size=cap.sum()))
    pts[cap, 0] = r * np.cos(theta[cap])
    pts[cap, 2] = r * np.sin(theta[cap])
    pts[cap, 1] = np.where(rng.uniform(size=cap.sum()) < 0.5, height / 2, -height / 2)
    return pts + center, float(total)


def _sphere_surface(rng, n, radius, center):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + center, float(4 * np.pi * radius * radius)


def _frustum_surface(rng, n, r0, r1, height, center):
    """Lateral surface of a truncated cone, r0 at the bottom, r1 at the top."""
    # area element along the axis is proportional to the local radius
    t = rng.uniform(size=n)
    if abs(r1 - r0) < 1e-12:
        z = t
    else:
        # inverse CDF of density ~ r0 + (r1-r0)z on [0,1]
        a, b = r0, r1 - r0
        z = (np.sqrt(a * a + t * (2 * a * b + b * b)) - a) / b
    rho = r0 + (r1 - r0) * z
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.stack([rho * np.cos(theta), z * height - height / 2, rho * np.sin(theta)], axis=1)
    slant = np.hypot(height, r1 - r0)
    return pts + center, float(np.pi * (r0 + r1) * slant)


# family assemblies -----------------------------------------------------------

def _parts_for(spec: ShapeSpec):
    p = spec.params
    if spec.family == "box":
        a, b, c = p
        return [("box", dict(half=np.array([a, b, c]), center=np.zeros(3)))]
    if spec.family == "cylinder":
        r, h = p
        return [("cyl", dict(radius=r, height=h, center=np.zeros(3)))]
    if spec.family == "sphere_union":
        r1, r2, dx, dz = p
        return [
            ("sph", dict(radius=r1, center=np.zeros(3))),
            ("sph", dict(radius=r2, center=np.array([dx, 0.0, dz]))),
        ]
    if spec.family == "chair":
        seat_w, seat_d, seat_t, leg_h, leg_t, back_h, back_t = p
        parts = [
            ("box", dict(half=np.array([seat_w, seat_t, seat_d]),
                         center=np.array([0.0, leg_h + seat_t, 0.0]))),
            ("box", dict(half=np.array([seat_w, back_h, back_t]),
                         center=np.array([0.0, leg_h + 2 * seat_t + back_h, -seat_d + back_t]))),
        ]
        for sx in (-1, 1):
            for sz in (-1, 1):
                parts.append(("box", dict(
                    half=np.array([leg_t, leg_h / 2, leg_t]),
                    center=np.array([sx * (seat_w - leg_t), leg_h / 2, sz * (seat_d - leg_t)]))))
        return parts
    if spec.family == "lamp":
        base_r, base_t, pole_r, pole_h, shade_r0, shade_r1, shade_h = p
        return [
            ("cyl", dict(radius=base_r, height=base_t, center=np.array([0.0, base_t / 2, 0.0]))),
            ("cyl", dict(radius=pole_r, height=pole_h,
                         center=np.array([0.0, base_t + pole_h / 2, 0.0]))),
            ("cone", dict(r0=shade_r0, r1=shade_r1, height=shade_h,
                          center=np.array([0.0, base_t + pole_h + shade_h / 2, 0.0]))),
        ]
    raise ShapeError(f"unknown shape family {spec.family!r}")


_SAMPLERS = {
    "box": lambda rng, n, kw: _box_surface(rng, n, **kw),
    "cyl": lambda rng, n, kw: _cylinder_surface(rng, n, **kw),
    "sph": lambda rng, n, kw: _sphere_surface(rng, n, **kw),
    "cone": lambda rng, n, kw: _frustum_surface(rng, n, **kw),
}

_AREAS = {
    "box": lambda kw: 8 * (kw["half"][0] * kw["half"][1] + kw["half"][1] * kw["half"][2]
                           + kw["half"][0] * kw["half"][2]),
    "cyl": lambda kw: 2 * np.pi * kw["radius"] * (kw["height"] + kw["radius"]),
    "sph": lambda kw: 4 * np.pi * kw["radius"] ** 2,
    "cone": lambda kw: np.pi * (kw["r0"] + kw["r1"]) * np.hypot(kw["height"], kw["r1"] - kw["r0"]),
}


def normalize_unit_ball(points: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale the farthest point onto the unit sphere."""
    centered = points - points.mean(axis=0)
    scale = np.linalg.norm(centered, axis=1).max()
    if scale == 0:
        return centered
    return centered / scale


def sample_shape(spec: ShapeSpec, n: int) -> np.ndarray:
    """Sample `n` surface points, unit-ball normalized, bit-deterministic."""
    if n < 1:
        raise ShapeError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(spec.seed)
    parts = _parts_for(spec)
    areas = np.array([_AREAS[kind](kw) for kind, kw in parts], dtype=float)
    weights = areas / areas.sum()
    counts = np.floor(weights * n).astype(int)
    # distribute the remainder to the largest parts, deterministically
    for i in np.argsort(-weights)[: n - counts.sum()]:
        counts[i] += 1
    chunks = []
    for (kind, kw), cnt in zip(parts, counts):
        if cnt > 0:
            chunks.append(_SAMPLERS[kind](rng, cnt, kw)[0])
    return normalize_unit_ball(np.vstack(chunks))


# randomized family parameters for corpus generation --------------------------

_PARAM_RANGES = {
    "box": [(0.3, 1.0), (0.3, 1.0), (0.3, 1.0)],
    "cylinder": [(0.2, 0.8), (0.6, 2.0)],
    "sphere_union": [(0.4, 0.8), (0.25, 0.6), (0.5, 1.1), (-0.3, 0.3)],
    "chair": [(0.35, 0.55), (0.35, 0.55), (0.04, 0.08), (0.4, 0.7),
              (0.04, 0.08), (0.3, 0.55), (0.04, 0.08)],
    "lamp": [(0.25, 0.45), (0.05, 0.12), (0.03, 0.07), (0.7, 1.2),
             (0.28, 0.5), (0.12, 0.3), (0.25, 0.45)],
}


def random_spec(family: str, seed: int) -> ShapeSpec:
    """Draw family parameters from the documented ranges, seeded."""
    if family not in _PARAM_RANGES:
        raise ShapeError(f"unknown shape family {family!r}")
    rng = np.random.default_rng(seed)
    params = tuple(float(rng.uniform(lo, hi)) for lo, hi in _PARAM_RANGES[family])
    return ShapeSpec(family=family, params=params, seed=seed)
