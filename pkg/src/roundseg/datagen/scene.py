"""Procedural synthetic scenes: shape entities, derived relations, rendering.

A scene holds 2-4 large non-overlapping container entities ("organs"), small
entities strictly inside them ("lesions"), optional mid-size sub-regions, and
free-floating thin strands. Relations are recomputed exhaustively from masks
and attributes, never stored incrementally, so the graph can't go stale.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage

from ..errors import PlacementFailure
from ..core.types import BinaryMask, EntitySpec, ImageGrid, RelationEdge, SceneGraph
from ..core.geometry import mask_centroid
from ..core.serial import quantize_intensities
from .config import GenConfig

INTENSITY_VALUES = {"bright": 0.92, "mid": 0.58, "dark": 0.28}
BACKGROUND_MEAN = 0.08
BACKGROUND_SIGMA = 0.05
SPATIAL_MARGIN_PX = 8.0
MAX_ATTEMPTS = 100

_INTENSITIES = ("bright", "mid", "dark")
_ORGAN_SHAPES = ("ellipse", "rounded-rect", "triangle", "blob")
_CHILD_SHAPES = ("ellipse", "blob", "triangle")


@lru_cache(maxsize=4)
def _grids(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size]
    return ys.astype(np.float64), xs.astype(np.float64)


def _window(size, cy, cx, reach):
    r0 = max(int(cy - reach), 0)
    r1 = min(int(cy + reach) + 2, size)
    c0 = max(int(cx - reach), 0)
    c1 = min(int(cx + reach) + 2, size)
    ys, xs = _grids(size)
    return r0, c0, ys[r0:r1, c0:c1], xs[r0:r1, c0:c1]


def _paste(size, win, r0, c0):
    out = np.zeros((size, size), dtype=bool)
    out[r0 : r0 + win.shape[0], c0 : c0 + win.shape[1]] = win
    return out


def _ellipse(size, cy, cx, ry, rx, theta):
    r0, c0, ys, xs = _window(size, cy, cx, max(ry, rx) + 1)
    dy, dx = ys - cy, xs - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return _paste(size, (u / rx) ** 2 + (v / ry) ** 2 <= 1.0, r0, c0)


def _rounded_rect(size, cy, cx, hy, hx, rho):
    r0, c0, ys, xs = _window(size, cy, cx, max(hy, hx) + 1)
    dy, dx = np.abs(ys - cy) - (hy - rho), np.abs(xs - cx) - (hx - rho)
    win = np.hypot(np.maximum(dx, 0), np.maximum(dy, 0)) <= rho
    return _paste(size, win, r0, c0)


def _triangle(size, cy, cx, radius, theta):
    angles = theta + np.array([0.0, 2.0943951023931953, 4.1887902047863905])
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)
    r0, c0, ys, xs = _window(size, cy, cx, radius + 1)
    inside = np.ones(ys.shape, dtype=bool)
    for i in range(3):
        j = (i + 1) % 3
        ey, ex = vy[j] - vy[i], vx[j] - vx[i]
        cross = ex * (ys - vy[i]) - ey * (xs - vx[i])
        inside &= cross >= 0 if (ex * (cy - vy[i]) - ey * (cx - vx[i])) >= 0 else cross <= 0
    return _paste(size, inside, r0, c0)


def _blob(size, cy, cx, radius, rng):
    amps = rng.uniform(0.05, 0.16, 3) * radius
    phases = rng.uniform(0, 2 * np.pi, 3)
    reach = radius + amps.sum() + 1
    r0, c0, ys, xs = _window(size, cy, cx, reach)
    dy, dx = ys - cy, xs - cx
    phi = np.arctan2(dy, dx)
    bound = np.full_like(phi, radius)
    for k, (amp, ph) in enumerate(zip(amps, phases), start=2):
        bound += amp * np.sin(k * phi + ph)
    return _paste(size, np.hypot(dy, dx) <= bound, r0, c0)


def _blob_reach(radius: float) -> float:
    # upper bound of the radial perturbation used by _blob
    return radius * (1 + 3 * 0.16) + 1


def _strand(size, rng):
    # Thick quadratic curve sampled densely, drawn as a union of disks.
    length = rng.uniform(0.20, 0.35) * size
    thick = max(2.0, rng.uniform(0.015, 0.03) * size)
    margin = int(length / 2 + thick + 2)
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    theta = rng.uniform(0, np.pi)
    bend = rng.uniform(-0.3, 0.3) * length
    t = np.linspace(-0.5, 0.5, 48)
    py = cy + length * t * np.sin(theta) + bend * (t**2 - 0.25) * np.cos(theta)
    px = cx + length * t * np.cos(theta) - bend * (t**2 - 0.25) * np.sin(theta)
    reach = max(cy - py.min(), py.max() - cy, cx - px.min(), px.max() - cx) + thick + 1
    r0, c0, ys, xs = _window(size, cy, cx, reach)
    win = np.zeros(ys.shape, dtype=bool)
    for y, x in zip(py, px):
        win |= (ys - y) ** 2 + (xs - x) ** 2 <= thick**2
    return _paste(size, win, r0, c0)


def _dilate(mask: np.ndarray, it: int = 2) -> np.ndarray:
    out = mask.copy()
    for _ in range(it):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _sample_organ(size, rng):
    shape = _ORGAN_SHAPES[rng.integers(len(_ORGAN_SHAPES))]
    radius = rng.uniform(0.13, 0.21) * size
    margin = radius + 3
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    if shape == "ellipse":
        ry = radius * rng.uniform(0.75, 1.0)
        rx = radius * rng.uniform(0.75, 1.0)
        bits = _ellipse(size, cy, cx, ry, rx, rng.uniform(0, np.pi))
    elif shape == "rounded-rect":
        hy = radius * rng.uniform(0.7, 1.0)
        hx = radius * rng.uniform(0.7, 1.0)
        bits = _rounded_rect(size, cy, cx, hy, hx, rho=0.3 * min(hy, hx))
    elif shape == "triangle":
        bits = _triangle(size, cy, cx, radius * 1.15, rng.uniform(0, 2 * np.pi))
    else:
        bits = _blob(size, cy, cx, radius * 0.9, rng)
    return shape, bits


def _sample_child(size, rng, interior_dist, radius):
    """Place a small shape whose every pixel stays inside the parent.

    `interior_dist` is the parent's distance-to-border transform; candidate
    centers are pixels with clearance for the shape's maximum reach.
    """
    shape = _CHILD_SHAPES[rng.integers(len(_CHILD_SHAPES))]
    reach = {"ellipse": radius + 1, "blob": _blob_reach(radius * 0.9), "triangle": radius * 1.1 + 1}[shape]
    rows, cols = np.nonzero(interior_dist >= reach + 1)
    if len(rows) == 0:
        return shape, None
    k = rng.integers(len(rows))
    cy, cx = float(rows[k]), float(cols[k])
    if shape == "ellipse":
        bits = _ellipse(size, cy, cx, radius * rng.uniform(0.8, 1.0), radius * rng.uniform(0.8, 1.0), rng.uniform(0, np.pi))
    elif shape == "blob":
        bits = _blob(size, cy, cx, radius * 0.9, rng)
    else:
        bits = _triangle(size, cy, cx, radius * 1.1, rng.uniform(0, 2 * np.pi))
    return shape, bits


def derive_relations(entities: list[EntitySpec]) -> list[RelationEdge]:
    """Recompute the full relation set from masks and attributes."""
    edges: list[RelationEdge] = []
    for e in entities:
        if e.parent_id is not None:
            edges.append(RelationEdge("contains", e.parent_id, e.entity_id))
    centroids = {e.entity_id: mask_centroid(e.mask) for e in entities}
    for a in entities:
        for b in entities:
            if a.entity_id == b.entity_id:
                continue
            ra, ca = centroids[a.entity_id]
            rb, cb = centroids[b.entity_id]
            if ca <= cb - SPATIAL_MARGIN_PX:
                edges.append(RelationEdge("left_of", a.entity_id, b.entity_id))
            if ca >= cb + SPATIAL_MARGIN_PX:
                edges.append(RelationEdge("right_of", a.entity_id, b.entity_id))
            if ra <= rb - SPATIAL_MARGIN_PX:
                edges.append(RelationEdge("above", a.entity_id, b.entity_id))
            if ra >= rb + SPATIAL_MARGIN_PX:
                edges.append(RelationEdge("below", a.entity_id, b.entity_id))
            if a.intensity_class == b.intensity_class:
                edges.append(RelationEdge("same_intensity", a.entity_id, b.entity_id))
            if a.size_class == b.size_class:
                edges.append(RelationEdge("same_size", a.entity_id, b.entity_id))
    by_parent: dict[int, list[EntitySpec]] = {}
    for e in entities:
        if e.parent_id is not None:
            by_parent.setdefault(e.parent_id, []).append(e)
    for parent_id, kids in by_parent.items():
        areas = sorted((k.mask.area(), k.entity_id) for k in kids)
        if len(areas) >= 2 and areas[-1][0] == areas[-2][0]:
            continue  # exact tie: no defined largest
        edges.append(RelationEdge("largest_within", areas[-1][1], parent_id))
    return edges


def generate_scene(seed: int, config: GenConfig) -> SceneGraph:
    """Deterministically build one scene for `seed` under `config`.

    Raises PlacementFailure when rejection sampling cannot place a required
    entity within 100 attempts; callers retry with a derived next seed.
    """
    size = config.image_size
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE4E]))

    entities: list[dict] = []
    occupied = np.zeros((size, size), dtype=bool)

    n_organs = int(rng.integers(2, 5))
    organ_letters = "abcd"
    for i in range(n_organs):
        for attempt in range(MAX_ATTEMPTS + 1):
            if attempt == MAX_ATTEMPTS:
                raise PlacementFailure(f"could not place organ {i} in {MAX_ATTEMPTS} attempts")
            shape, bits = _sample_organ(size, rng)
            if not (_dilate(bits) & occupied).any():
                break
        occupied |= bits
        entities.append(
            dict(
                category=f"organ-{organ_letters[i]}",
                shape_class=shape,
                intensity_class=_INTENSITIES[rng.integers(3)],
                size_class="large",
                bits=bits,
                parent=None,
            )
        )

    organ_idx = list(range(n_organs))
    children_of: dict[int, list[int]] = {i: [] for i in organ_idx}
    interior: dict[int, np.ndarray] = {}

    def _place_child(parent_i: int, category: str, radius_lo: float, radius_hi: float) -> bool:
        parent = entities[parent_i]
        if parent_i not in interior:
            interior[parent_i] = ndimage.distance_transform_edt(parent["bits"])
        sibling_bits = [entities[c]["bits"] for c in children_of[parent_i]]
        sibling_areas = [int(b.sum()) for b in sibling_bits]
        for _ in range(MAX_ATTEMPTS):
            radius = rng.uniform(radius_lo, radius_hi) * size
            shape, bits = _sample_child(size, rng, interior[parent_i], radius)
            if bits is None or not bits.any() or (bits & ~parent["bits"]).any():
                continue
            if any((bits & sb).any() for sb in sibling_bits):
                continue
            area = int(bits.sum())
            # keep sibling areas separated so "largest inside" stays well defined
            if any(abs(area - sa) < 0.2 * max(area, sa) for sa in sibling_areas):
                continue
            choices = [c for c in _INTENSITIES if c != parent["intensity_class"]]
            entities.append(
                dict(
                    category=category,
                    shape_class=shape,
                    intensity_class=choices[rng.integers(len(choices))],
                    size_class="small",
                    bits=bits,
                    parent=parent_i,
                )
            )
            children_of[parent_i].append(len(entities) - 1)
            return True
        return False

    n_lesions = int(rng.integers(0, 4))
    for _ in range(n_lesions):
        host = int(rng.integers(n_organs))
        _place_child(host, "lesion", 0.035, 0.06)

    for i in organ_idx:
        if rng.random() < 0.45:
            _place_child(i, "subregion", 0.07, 0.10)

    n_strands = int(rng.integers(0, 3))
    for _ in range(n_strands):
        for _ in range(MAX_ATTEMPTS):
            bits = _strand(size, rng)
            if bits.any() and not (_dilate(bits) & occupied).any():
                occupied |= bits
                entities.append(
                    dict(
                        category="tissue-strand",
                        shape_class="strand",
                        intensity_class=_INTENSITIES[rng.integers(3)],
                        size_class="small",
                        bits=bits,
                        parent=None,
                    )
                )
                break

    # Render: noisy background, parents first, then children on top.
    img = rng.normal(BACKGROUND_MEAN, BACKGROUND_SIGMA, (size, size))
    order = sorted(range(len(entities)), key=lambda k: 0 if entities[k]["parent"] is None else 1)
    for k in order:
        img[entities[k]["bits"]] = INTENSITY_VALUES[entities[k]["intensity_class"]]
    image = ImageGrid(quantize_intensities(img))

    specs = [
        EntitySpec(
            entity_id=k,
            category=e["category"],
            shape_class=e["shape_class"],
            intensity_class=e["intensity_class"],
            size_class=e["size_class"],
            mask=BinaryMask(e["bits"]),
            parent_id=e["parent"],
        )
        for k, e in enumerate(entities)
    ]
    return SceneGraph(entities=tuple(specs), relations=tuple(derive_relations(specs)), image=image)
