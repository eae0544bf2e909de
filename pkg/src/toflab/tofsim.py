"""Desk-scale synthetic data generation for a continuous-wave depth sensor.

A scene is an axis-aligned box room (five walls; the face behind the camera
is open) with Lambertian albedos and floating sphere/box objects.  The light
source sits on the camera.  Rendering produces per-pixel transient responses
as exact impulse lists (delay in seconds, unitless energy): the direct return
plus, optionally, Monte-Carlo one-bounce paths camera -> surfel -> surface ->
camera with visibility tests.  Correlating the impulses against sine/cosine
references at the modulation frequency and taking the phasor argument turns
them back into distance; the one-bounce paths are what drags the recovered
distance beyond the true one.

Everything is deterministic under the scene seed.  All random draws happen
in a fixed order over fixed-size pixel chunks, so results do not depend on
how the work is scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError
from .geometry import DataSample, WeakCalibParams, plane_correct

SPEED_OF_LIGHT = 299_792_458.0

#: Default modulation frequency; unambiguous range c / (2 f) is about 7.49 m.
DEFAULT_FREQUENCY_HZ = 20e6

_CHUNK = 8192  # fixed pixel chunk so RNG draw order never depends on scheduling
_SEG_EPS = 1e-6


def unambiguous_range(frequency_hz):
    """Largest distance measurable without phase wrapping."""
    return SPEED_OF_LIGHT / (2.0 * frequency_hz)


def principal_point(size):
    """Image center of a (width, height) raster, in pixel coordinates."""
    w, h = size
    return ((w - 1) / 2.0, (h - 1) / 2.0)


# ---------------------------------------------------------------------------
# scene description
# ---------------------------------------------------------------------------


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: float
    albedo_rgb: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.albedo_rgb = np.asarray(self.albedo_rgb, dtype=np.float64)


@dataclass
class Box:
    center: np.ndarray
    half_size: np.ndarray
    albedo: float
    albedo_rgb: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.half_size = np.asarray(self.half_size, dtype=np.float64)
        self.albedo_rgb = np.asarray(self.albedo_rgb, dtype=np.float64)


#: Wall order used throughout: x_min, x_max, y_min, y_max, z_max.
WALL_NAMES = ("x_min", "x_max", "y_min", "y_max", "z_max")


@dataclass
class Scene:
    """Axis-aligned room (open face at z_min, behind the camera) plus objects.

    The camera sits at ``camera`` looking along +z with x right and y down.
    Albedos are Lambertian reflectances in (0, 1].
    """

    room_min: np.ndarray
    room_max: np.ndarray
    wall_albedo: np.ndarray  # (5,) in WALL_NAMES order
    wall_albedo_rgb: np.ndarray  # (5, 3)
    objects: list = field(default_factory=list)
    camera: np.ndarray = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        self.room_min = np.asarray(self.room_min, dtype=np.float64)
        self.room_max = np.asarray(self.room_max, dtype=np.float64)
        self.wall_albedo = np.asarray(self.wall_albedo, dtype=np.float64)
        self.wall_albedo_rgb = np.asarray(self.wall_albedo_rgb, dtype=np.float64)
        self.camera = np.asarray(self.camera, dtype=np.float64)
        if np.any(self.room_min >= self.room_max):
            raise ContractError("room_min must be strictly below room_max")
        if np.any(self.camera <= self.room_min) or np.any(self.camera >= self.room_max):
            raise ContractError("camera must sit inside the room")
        albs = [self.wall_albedo] + [np.atleast_1d(o.albedo) for o in self.objects]
        for a in albs:
            if np.any(a <= 0.0) or np.any(a > 1.0):
                raise ContractError("albedos must lie in (0, 1]")


def scene_to_dict(scene: Scene) -> dict:
    objs = []
    for obj in scene.objects:
        if isinstance(obj, Sphere):
            objs.append({
                "type": "sphere",
                "center": list(map(float, obj.center)),
                "radius": float(obj.radius),
                "albedo": float(obj.albedo),
                "albedo_rgb": list(map(float, obj.albedo_rgb)),
            })
        elif isinstance(obj, Box):
            objs.append({
                "type": "box",
                "center": list(map(float, obj.center)),
                "half_size": list(map(float, obj.half_size)),
                "albedo": float(obj.albedo),
                "albedo_rgb": list(map(float, obj.albedo_rgb)),
            })
        else:
            raise ContractError(f"unknown object type {type(obj)!r}")
    return {
        "format": 1,
        "room_min": list(map(float, scene.room_min)),
        "room_max": list(map(float, scene.room_max)),
        "wall_albedo": list(map(float, scene.wall_albedo)),
        "wall_albedo_rgb": [list(map(float, row)) for row in scene.wall_albedo_rgb],
        "camera": list(map(float, scene.camera)),
        "seed": int(scene.seed),
        "objects": objs,
    }


def scene_from_dict(data: dict) -> Scene:
    objects = []
    for obj in data.get("objects", []):
        kind = obj.get("type")
        if kind == "sphere":
            objects.append(Sphere(obj["center"], float(obj["radius"]),
                                  float(obj["albedo"]), obj["albedo_rgb"]))
        elif kind == "box":
            objects.append(Box(obj["center"], obj["half_size"],
                               float(obj["albedo"]), obj["albedo_rgb"]))
        else:
            raise ContractError(f"unknown object type {kind!r}")
    return Scene(
        room_min=data["room_min"],
        room_max=data["room_max"],
        wall_albedo=data["wall_albedo"],
        wall_albedo_rgb=data["wall_albedo_rgb"],
        objects=objects,
        camera=data.get("camera", (0.0, 0.0, 0.0)),
        seed=int(data.get("seed", 0)),
    )


def save_scene(path, scene: Scene):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def random_scene(seed, n_objects=None, room_depth=None) -> Scene:
    """Procedural desk-scale scene with floating spheres and boxes."""
    rng = np.random.default_rng(seed)
    depth = float(rng.uniform(2.5, 4.5)) if room_depth is None else float(room_depth)
    half_w = float(rng.uniform(1.3, 2.2))
    half_h = float(rng.uniform(1.1, 1.8))
    room_min = np.array([-half_w, -half_h, -0.3])
    room_max = np.array([half_w, half_h, depth])
    wall_albedo = rng.uniform(0.3, 0.95, size=5)
    wall_albedo_rgb = rng.uniform(0.15, 0.95, size=(5, 3))
    count = int(rng.integers(2, 7)) if n_objects is None else int(n_objects)
    objects = []
    for _ in range(count):
        z = float(rng.uniform(1.0, max(1.2, depth - 0.6)))
        lateral = 0.55 * z
        cx = float(rng.uniform(-1, 1)) * min(lateral, half_w - 0.55)
        cy = float(rng.uniform(-1, 1)) * min(lateral, half_h - 0.55)
        albedo = float(rng.uniform(0.25, 0.95))
        albedo_rgb = rng.uniform(0.15, 0.95, size=3)
        if rng.random() < 0.5:
            radius = float(rng.uniform(0.12, 0.4))
            objects.append(Sphere((cx, cy, z), radius, albedo, albedo_rgb))
        else:
            half = rng.uniform(0.1, 0.35, size=3)
            objects.append(Box((cx, cy, z), half, albedo, albedo_rgb))
    return Scene(room_min, room_max, wall_albedo, wall_albedo_rgb, objects,
                 camera=(0.0, 0.0, 0.0), seed=int(seed))


def wall_scene(distance, extent=3.0, albedo=0.7, seed=0) -> Scene:
    """Empty room whose far wall sits ``distance`` ahead of the camera."""
    room_min = np.array([-extent, -extent, -0.2])
    room_max = np.array([extent, extent, float(distance)])
    alb = np.full(5, float(albedo))
    alb_rgb = np.full((5, 3), float(albedo))
    return Scene(room_min, room_max, alb, alb_rgb, [], camera=(0.0, 0.0, 0.0), seed=seed)


# ---------------------------------------------------------------------------
# intersection kernels (vectorized over rays; directions are unit length)
# ---------------------------------------------------------------------------


def _safe_inv(d):
    return 1.0 / np.where(np.abs(d) < 1e-300, np.copysign(1e-300, d + 1e-320), d)


def _intersect_sphere(o, d, sphere: Sphere):
    oc = o - sphere.center
    b = np.einsum("nd,nd->n", oc, d)
    c = np.einsum("nd,nd->n", oc, oc) - sphere.radius**2
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t1 = -b - sq
    t2 = -b + sq
    t = np.where(t1 > _SEG_EPS, t1, np.where(t2 > _SEG_EPS, t2, np.inf))
    return np.where(disc >= 0.0, t, np.inf)


def _intersect_box(o, d, box: Box):
    inv = _safe_inv(d)
    lo = (box.center - box.half_size - o) * inv
    hi = (box.center + box.half_size - o) * inv
    t_near = np.max(np.minimum(lo, hi), axis=1)
    t_far = np.min(np.maximum(lo, hi), axis=1)
    hit = (t_far >= np.maximum(t_near, _SEG_EPS)) & (t_far > _SEG_EPS)
    t = np.where(t_near > _SEG_EPS, t_near, t_far)
    return np.where(hit, t, np.inf)


def _room_exit(scene: Scene, o, d):
    """Exit distance and wall index of interior rays; the z_min face is open."""
    inv = _safe_inv(d)
    lo = (scene.room_min - o) * inv
    hi = (scene.room_max - o) * inv
    t_axis = np.maximum(lo, hi)  # per-axis exit parameter
    axis = np.argmin(t_axis, axis=1)
    t = t_axis[np.arange(len(o)), axis]
    positive_dir = np.take_along_axis(d, axis[:, None], axis=1)[:, 0] > 0.0
    # wall index in WALL_NAMES order; z_min (axis 2, negative direction) is open
    wall = np.where(axis == 0, np.where(positive_dir, 1, 0),
                    np.where(axis == 1, np.where(positive_dir, 3, 2), 4))
    open_face = (axis == 2) & ~positive_dir
    t = np.where(open_face | (t <= _SEG_EPS), np.inf, t)
    return t, wall


def _wall_normal(wall_idx):
    normals = np.array([
        [1.0, 0.0, 0.0],   # x_min, inward
        [-1.0, 0.0, 0.0],  # x_max
        [0.0, 1.0, 0.0],   # y_min
        [0.0, -1.0, 0.0],  # y_max
        [0.0, 0.0, -1.0],  # z_max
    ])
    return normals[wall_idx]


def _box_normal(p, box: Box):
    rel = (p - box.center) / box.half_size
    axis = np.argmax(np.abs(rel), axis=1)
    n = np.zeros_like(p)
    n[np.arange(len(p)), axis] = np.sign(rel[np.arange(len(p)), axis])
    return n


def _scene_hit(scene: Scene, o, d):
    """Nearest surface along each ray: (t, point, normal, albedo, albedo_rgb)."""
    n_rays = len(o)
    t, wall = _room_exit(scene, o, d)
    normal = _wall_normal(wall)
    albedo = scene.wall_albedo[wall]
    albedo_rgb = scene.wall_albedo_rgb[wall]
    for obj in scene.objects:
        if isinstance(obj, Sphere):
            t_obj = _intersect_sphere(o, d, obj)
        else:
            t_obj = _intersect_box(o, d, obj)
        closer = t_obj < t
        if np.any(closer):
            p_obj = o[closer] + t_obj[closer, None] * d[closer]
            if isinstance(obj, Sphere):
                n_obj = (p_obj - obj.center) / obj.radius
            else:
                n_obj = _box_normal(p_obj, obj)
            t = np.where(closer, t_obj, t)
            normal = np.where(closer[:, None], 0.0, normal)
            normal[closer] = n_obj
            albedo = np.where(closer, obj.albedo, albedo)
            albedo_rgb = np.where(closer[:, None], obj.albedo_rgb, albedo_rgb)
    hit = np.isfinite(t)
    point = o + np.where(hit, t, 0.0)[:, None] * d
    return t, point, normal, albedo, albedo_rgb, hit


def _segment_occluded(scene: Scene, a, b):
    """True where the open segment a -> b is blocked by an object.

    The room interior is convex, so walls never occlude interior segments and
    only the objects are tested.
    """
    d = b - a
    dist = np.linalg.norm(d, axis=1)
    dist = np.maximum(dist, 1e-300)
    dirs = d / dist[:, None]
    occluded = np.zeros(len(a), dtype=bool)
    for obj in scene.objects:
        if isinstance(obj, Sphere):
            t = _intersect_sphere(a, dirs, obj)
        else:
            t = _intersect_box(a, dirs, obj)
        occluded |= (t > _SEG_EPS) & (t < dist - _SEG_EPS)
    return occluded


# ---------------------------------------------------------------------------
# surfel sampling for one-bounce paths
# ---------------------------------------------------------------------------


def _area_items(scene: Scene):
    x0, y0, z0 = scene.room_min
    x1, y1, z1 = scene.room_max
    items = []

    def rect(corner, e1, e2, normal, albedo):
        area = np.linalg.norm(np.cross(e1, e2))
        items.append({"kind": "rect", "corner": np.asarray(corner, float),
                      "e1": np.asarray(e1, float), "e2": np.asarray(e2, float),
                      "normal": np.asarray(normal, float), "albedo": float(albedo),
                      "area": float(area)})

    dy = (0.0, y1 - y0, 0.0)
    dz = (0.0, 0.0, z1 - z0)
    dx = (x1 - x0, 0.0, 0.0)
    rect((x0, y0, z0), dy, dz, (1, 0, 0), scene.wall_albedo[0])
    rect((x1, y0, z0), dy, dz, (-1, 0, 0), scene.wall_albedo[1])
    rect((x0, y0, z0), dx, dz, (0, 1, 0), scene.wall_albedo[2])
    rect((x0, y1, z0), dx, dz, (0, -1, 0), scene.wall_albedo[3])
    rect((x0, y0, z1), dx, dy, (0, 0, -1), scene.wall_albedo[4])

    for obj in scene.objects:
        if isinstance(obj, Sphere):
            items.append({"kind": "sphere", "center": obj.center, "radius": obj.radius,
                          "albedo": float(obj.albedo),
                          "area": float(4.0 * np.pi * obj.radius**2)})
        else:
            for axis, sign in ((0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)):
                normal = np.zeros(3)
                normal[axis] = sign
                corner = obj.center - obj.half_size
                es = []
                for other in range(3):
                    if other == axis:
                        continue
                    e = np.zeros(3)
                    e[other] = 2.0 * obj.half_size[other]
                    es.append(e)
                face_corner = corner.copy()
                if sign > 0:
                    face_corner[axis] += 2.0 * obj.half_size[axis]
                rect(face_corner, es[0], es[1], normal, obj.albedo)
    return items


def _sample_surfels(items, cum_area, count, rng):
    total = cum_area[-1]
    pick = np.searchsorted(cum_area, rng.uniform(0.0, total, size=count), side="right")
    pick = np.minimum(pick, len(items) - 1)
    a = rng.uniform(size=count)
    b = rng.uniform(size=count)
    gauss = rng.normal(size=(count, 3))
    pos = np.empty((count, 3))
    normal = np.empty((count, 3))
    albedo = np.empty(count)
    for idx, item in enumerate(items):
        sel = pick == idx
        if not np.any(sel):
            continue
        if item["kind"] == "rect":
            pos[sel] = (item["corner"][None, :]
                        + a[sel, None] * item["e1"][None, :]
                        + b[sel, None] * item["e2"][None, :])
            normal[sel] = item["normal"]
        else:
            g = gauss[sel]
            g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
            pos[sel] = item["center"][None, :] + item["radius"] * g
            normal[sel] = g
        albedo[sel] = item["albedo"]
    return pos, normal, albedo


# ---------------------------------------------------------------------------
# transient responses and correlation
# ---------------------------------------------------------------------------


@dataclass
class TransientResponse:
    """Per-pixel impulse lists, padded to a fixed slot count.

    ``delays`` and ``energies`` are (h, w, m); slot 0 is the direct return.
    ``counts`` gives the number of meaningful slots per pixel (0 where the
    primary ray missed); padded slots carry zero energy.
    """

    delays: np.ndarray
    energies: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=np.float64)
        self.energies = np.asarray(self.energies, dtype=np.float64)
        self.counts = np.asarray(self.counts)
        if self.delays.shape != self.energies.shape:
            raise ContractError("delays and energies must have the same shape")
        if np.any(self.energies < 0.0):
            raise ContractError("impulse energies must be >= 0")
        if np.any(self.delays <= 0.0):
            raise ContractError("impulse delays must be positive")


@dataclass
class CorrelationPair:
    """Sine/cosine correlation rasters at modulation frequency ``omega`` (rad/s)."""

    c_sin: np.ndarray
    c_cos: np.ndarray
    omega: float

    def amplitude(self):
        return np.sqrt(self.c_sin**2 + self.c_cos**2)


@dataclass
class RenderResult:
    transients: TransientResponse
    radial_gt: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    rgb: np.ndarray
    hit: np.ndarray


def render_transients(scene: Scene, params: WeakCalibParams, size,
                      mpi=True, bounce_samples=16, ambient=0.3,
                      min_bounce_dist=0.02) -> RenderResult:
    """Trace primary rays and (optionally) one-bounce paths.

    Direct impulse: delay 2 r / c, energy albedo * cos(theta) / r^2 for the
    headlight at the camera.  Each one-bounce impulse covers the path
    camera -> surfel -> surface point -> camera with energy
    albedo_s * albedo_x * G(light, s) * G(s, x) / pi scaled by the uniform
    area measure, where G carries the cosine and inverse-square factors, and
    both legs are visibility-tested.  Surfels closer than ``min_bounce_dist``
    to either endpoint are skipped to keep the inverse-square factors bounded.
    """
    w, h = size
    if w < 1 or h < 1:
        raise ContractError("raster size must be positive")
    p_x, p_y = principal_point(size)
    xs = (np.arange(w) - p_x) / params.f_x
    ys = (np.arange(h) - p_y) / params.f_y
    dirs = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None], np.ones((h, w))), axis=-1)
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n_pix = h * w
    origin = np.broadcast_to(scene.camera, (n_pix, 3))

    t, point, normal, albedo, albedo_rgb, hit = _scene_hit(scene, origin, dirs)
    r = np.where(hit, t, 0.0)
    cos_x = np.clip(np.einsum("nd,nd->n", normal, -dirs), 0.0, 1.0)
    direct_energy = np.where(hit, albedo * cos_x / np.maximum(r, 1e-12) ** 2, 0.0)
    shade = ambient + (1.0 - ambient) * cos_x
    rgb = np.where(hit[:, None], albedo_rgb * shade[:, None], 0.0)

    n_slots = 1 + (bounce_samples if mpi else 0)
    delays = np.ones((n_pix, n_slots))
    energies = np.zeros((n_pix, n_slots))
    delays[:, 0] = np.where(hit, 2.0 * r / SPEED_OF_LIGHT, 1.0)
    energies[:, 0] = direct_energy

    if mpi and bounce_samples > 0:
        items = _area_items(scene)
        cum_area = np.cumsum([it["area"] for it in items])
        total_area = float(cum_area[-1])
        measure = total_area / bounce_samples
        rng = np.random.default_rng((int(scene.seed), 7))
        cam = scene.camera[None, :]
        for start in range(0, n_pix, _CHUNK):
            stop = min(start + _CHUNK, n_pix)
            count = stop - start
            idx = np.arange(start, stop)
            live = hit[idx]
            s_pos, s_normal, s_albedo = _sample_surfels(
                items, cum_area, count * bounce_samples, rng)
            x_pos = np.repeat(point[idx], bounce_samples, axis=0)
            x_norm = np.repeat(normal[idx], bounce_samples, axis=0)
            x_alb = np.repeat(albedo[idx], bounce_samples)
            live_rep = np.repeat(live, bounce_samples)

            d1 = s_pos - cam
            r1 = np.linalg.norm(d1, axis=1)
            w1 = d1 / np.maximum(r1, 1e-300)[:, None]
            cos_s_in = np.clip(-np.einsum("nd,nd->n", s_normal, w1), 0.0, None)
            d2 = x_pos - s_pos
            r2 = np.linalg.norm(d2, axis=1)
            w2 = d2 / np.maximum(r2, 1e-300)[:, None]
            cos_s_out = np.clip(np.einsum("nd,nd->n", s_normal, w2), 0.0, None)
            cos_x_in = np.clip(-np.einsum("nd,nd->n", x_norm, w2), 0.0, None)

            usable = (live_rep & (r1 > min_bounce_dist) & (r2 > min_bounce_dist)
                      & (cos_s_in > 0.0) & (cos_s_out > 0.0) & (cos_x_in > 0.0))
            if np.any(usable):
                blocked1 = np.zeros(len(usable), dtype=bool)
                blocked2 = np.zeros(len(usable), dtype=bool)
                cam_rep = np.broadcast_to(scene.camera, (int(np.count_nonzero(usable)), 3))
                blocked1[usable] = _segment_occluded(scene, cam_rep, s_pos[usable])
                blocked2[usable] = _segment_occluded(scene, s_pos[usable], x_pos[usable])
                usable &= ~(blocked1 | blocked2)

            energy = np.zeros(len(r1))
            g1 = cos_s_in / np.maximum(r1, 1e-300) ** 2
            g2 = cos_s_out * cos_x_in / np.maximum(r2, 1e-300) ** 2
            energy[usable] = (s_albedo * x_alb * g1 * g2 / np.pi * measure)[usable]
            r_rep = np.repeat(r[idx], bounce_samples)
            path = r1 + r2 + r_rep
            delay = np.where(live_rep, path / SPEED_OF_LIGHT, 1.0)
            delays[idx, 1:] = delay.reshape(count, bounce_samples)
            energies[idx, 1:] = energy.reshape(count, bounce_samples)

    counts = np.where(hit, n_slots, 0)
    transients = TransientResponse(
        delays=delays.reshape(h, w, n_slots),
        energies=energies.reshape(h, w, n_slots),
        counts=counts.reshape(h, w),
    )
    return RenderResult(
        transients=transients,
        radial_gt=r.reshape(h, w),
        normals=normal.reshape(h, w, 3),
        albedo=albedo.reshape(h, w),
        rgb=rgb.reshape(h, w, 3),
        hit=hit.reshape(h, w),
    )


def correlate(transients: TransientResponse, omega) -> CorrelationPair:
    """Inner products of each impulse list with sine/cosine references.

    C_sin = sum_i e_i sin(omega tau_i), C_cos = sum_i e_i cos(omega tau_i);
    the continuous counterpart of correlating a time-binned response.
    """
    if omega <= 0.0:
        raise DomainError("omega must be positive")
    phase = omega * transients.delays
    c_sin = np.sum(transients.energies * np.sin(phase), axis=-1)
    c_cos = np.sum(transients.energies * np.cos(phase), axis=-1)
    return CorrelationPair(c_sin=c_sin, c_cos=c_cos, omega=float(omega))


def add_noise(pair: CorrelationPair, sigma, rng) -> CorrelationPair:
    """Additive i.i.d. Gaussian perturbation of both correlation rasters.

    ``sigma`` is in absolute correlation units; 0 returns an identical copy.
    ``rng`` may be a Generator or a seed.
    """
    if sigma < 0.0:
        raise DomainError("sigma must be >= 0")
    if sigma == 0.0:
        return CorrelationPair(pair.c_sin.copy(), pair.c_cos.copy(), pair.omega)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return CorrelationPair(
        c_sin=pair.c_sin + rng.normal(0.0, sigma, size=pair.c_sin.shape),
        c_cos=pair.c_cos + rng.normal(0.0, sigma, size=pair.c_cos.shape),
        omega=pair.omega,
    )


def phase_to_depth(pair: CorrelationPair, amp_threshold_rel=1e-9):
    """Invert a correlation pair into radial distance.

    phi = atan2(C_sin, C_cos) wrapped to [0, 2 pi); distance = c phi / (2 omega).
    Returns ``(radial, amplitude, valid)``; pixels whose amplitude falls below
    ``amp_threshold_rel`` times the frame maximum are masked invalid and get
    distance 0.
    """
    amplitude = pair.amplitude()
    peak = float(np.max(amplitude)) if amplitude.size else 0.0
    valid = amplitude > amp_threshold_rel * peak if peak > 0.0 else np.zeros_like(amplitude, dtype=bool)
    phi = np.mod(np.arctan2(pair.c_sin, pair.c_cos), 2.0 * np.pi)
    radial = SPEED_OF_LIGHT * phi / (2.0 * pair.omega)
    radial = np.where(valid, radial, 0.0)
    return radial, amplitude, valid


def normalize_amplitude(raw_amp, depth):
    """Undo the inverse-square falloff, then rescale to [0, 1].

    Multiplies the raw amplitude by the squared depth (Hadamard) and divides
    by the frame maximum; an all-zero frame stays all-zero.
    """
    raw_amp = np.asarray(raw_amp, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if raw_amp.shape != depth.shape:
        raise ContractError("amplitude and depth sizes must agree")
    if np.any(depth < 0.0):
        raise DomainError("depth must be >= 0")
    flat = raw_amp * depth**2
    peak = float(np.max(flat)) if flat.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(flat)
    return flat / peak


def bin_transients(transients: TransientResponse, bin_width, n_bins=None):
    """Quantize impulse lists onto a regular time grid (energy per bin).

    Every impulse lands in the bin containing its delay; correlating the
    binned response at bin centers reproduces the exact correlation up to a
    delay quantization of at most ``bin_width`` / 2, i.e. a distance error of
    at most c * ``bin_width`` / 2.
    """
    if bin_width <= 0.0:
        raise DomainError("bin_width must be positive")
    h, w, m = transients.delays.shape
    idx = np.floor(transients.delays / bin_width).astype(np.intp)
    if n_bins is None:
        n_bins = int(idx.max()) + 1 if idx.size else 1
    idx = np.clip(idx, 0, n_bins - 1)
    hist = np.zeros((h, w, n_bins))
    pix = np.broadcast_to(np.arange(h * w)[:, None], (h * w, m))
    np.add.at(hist.reshape(h * w, n_bins), (pix.ravel(), idx.reshape(h * w, m).ravel()),
              transients.energies.reshape(h * w, m).ravel())
    return hist, float(bin_width)


def correlate_binned(hist, bin_width, omega) -> CorrelationPair:
    """Correlate a binned transient raster at bin-center times."""
    if omega <= 0.0:
        raise DomainError("omega must be positive")
    n_bins = hist.shape[-1]
    centers = (np.arange(n_bins) + 0.5) * bin_width
    phases = omega * centers
    c_sin = np.einsum("hwt,t->hw", hist, np.sin(phases))
    c_cos = np.einsum("hwt,t->hw", hist, np.cos(phases))
    return CorrelationPair(c_sin=c_sin, c_cos=c_cos, omega=float(omega))


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of :func:`synthesize_sample`.

    ``noise_sigma`` is relative to the frame's peak correlation amplitude so
    its effect does not depend on scene brightness; 0 disables noise.
    """

    size: tuple = (640, 480)
    frequency_hz: float = DEFAULT_FREQUENCY_HZ
    mpi: bool = True
    bounce_samples: int = 16
    noise_sigma: float = 0.0
    amp_threshold_rel: float = 1e-9
    ambient: float = 0.3
    focal_px: float | None = None

    def focal(self):
        return self.focal_px if self.focal_px is not None else 525.0 * self.size[0] / 640.0

    def camera_params(self) -> WeakCalibParams:
        f = self.focal()
        return WeakCalibParams(f_x=f, f_y=f)


def synthesize_sample(scene: Scene, params: WeakCalibParams | None = None,
                      config: SynthConfig | None = None) -> DataSample:
    """Render one aligned {amplitude, rgb, tof depth, gt depth, mask} sample.

    Composes rendering, correlation, optional noise, phasor inversion,
    plane correction and amplitude flattening.  Depths stay in scene units;
    amplitude and color are rescaled to [0, 1].  Pixels are masked invalid
    when the primary ray misses, the amplitude falls below threshold, or the
    true distance exceeds the unambiguous range (wrapped phase).
    """
    config = config or SynthConfig()
    params = params or config.camera_params()
    w, h = config.size
    omega = 2.0 * np.pi * config.frequency_hz
    render = render_transients(
        scene, params, config.size,
        mpi=config.mpi, bounce_samples=config.bounce_samples, ambient=config.ambient,
    )
    pair = correlate(render.transients, omega)
    if config.noise_sigma > 0.0:
        peak = float(np.max(pair.amplitude()))
        pair = add_noise(pair, config.noise_sigma * peak,
                         np.random.default_rng((int(scene.seed), 13)))
    radial, raw_amp, amp_valid = phase_to_depth(pair, config.amp_threshold_rel)
    principal = principal_point(config.size)
    tof_depth = plane_correct(np.where(amp_valid, radial, 1.0), params, principal)
    tof_depth = np.where(amp_valid, tof_depth, 0.0)
    gt_depth = plane_correct(np.where(render.hit, render.radial_gt, 1.0), params, principal)
    gt_depth = np.where(render.hit, gt_depth, 0.0)
    amplitude = normalize_amplitude(raw_amp, tof_depth)
    rgb_peak = float(np.max(render.rgb))
    rgb = render.rgb / rgb_peak if rgb_peak > 0.0 else render.rgb.copy()
    in_range = render.radial_gt < unambiguous_range(config.frequency_hz)
    mask = render.hit & amp_valid & in_range & (tof_depth > 0.0)
    return DataSample(
        rgb=rgb,
        amplitude=amplitude,
        tof_depth=tof_depth,
        gt_depth=gt_depth,
        mask=mask,
        calib=params,
        aligned=True,
        seed=int(scene.seed),
    ).validate()
