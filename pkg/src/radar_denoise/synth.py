"""Paired radar / LiDAR scene generator with per-point validity labels.

Scenes are box-shaped vehicles on a ground plane, seen from a sensor at the
origin.  LiDAR densely samples every visible surface.  Radar returns a sparse
subset of those surfaces (label 1) plus two noise sources (label 0):

* sidelobes: copies of strong object returns displaced by an anisotropic
  Gaussian whose vertical spread is ``sidelobe_aspect`` times the horizontal
  one, with intensity attenuated and the parent's Doppler;
* clutter: uniform points over the scene volume.

Noise candidates closer than ``noise_clearance`` to a real surface are
redrawn, so a noise point never coincides with geometry LiDAR can see.
Every scene is a pure function of ``(seed, index)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .cloud import GtBox, PointCloud, SceneSample, round_sig9, save_scene


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 42
    extent: tuple = (-20.0, 20.0, -20.0, 20.0, -2.0, 4.0)
    num_objects: tuple = (6, 10)
    size_w: tuple = (1.6, 2.2)
    size_l: tuple = (3.6, 5.0)
    size_h: tuple = (1.3, 2.0)
    sensor_height: float = 1.5
    max_speed: float = 12.0
    lidar_density: float = 20.0         # points / m^2 on object surfaces
    lidar_ground_density: float = 8.0   # points / m^2 on the ground
    radar_hit_rate: float = 0.2         # fraction of object surface samples returned
    ground_hit_rate: float = 0.025
    surface_jitter: float = 0.05
    noise_fraction: Optional[float] = 0.4
    clutter_share: float = 0.25
    sidelobes_per_strong: tuple = (0, 3)  # used when noise_fraction is None
    clutter_count: tuple = (20, 60)        # used when noise_fraction is None
    strong_quantile: float = 0.5
    sidelobe_spread: float = 1.5
    sidelobe_aspect: float = 4.0
    noise_clearance: float = 0.6

    def __post_init__(self):
        for name in ("extent", "num_objects", "size_w", "size_l", "size_h",
                     "sidelobes_per_strong", "clutter_count"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        ranges = [self.num_objects, self.size_w, self.size_l, self.size_h,
                  self.sidelobes_per_strong, self.clutter_count]
        if any(lo > hi for lo, hi in ranges) or min(self.num_objects) < 0:
            raise ValueError("ranges must be well ordered")
        e = self.extent
        if not (e[0] < e[1] and e[2] < e[3] and e[4] < 0 < e[5]):
            raise ValueError("extent must be well ordered and contain the ground plane")
        if min(self.lidar_density, self.lidar_ground_density) <= 0:
            raise ValueError("densities must be positive")
        if self.noise_fraction is not None and not 0 <= self.noise_fraction < 1:
            raise ValueError("noise_fraction must be in [0, 1)")
        if self.sidelobe_spread <= 0 or self.sidelobe_aspect <= 0:
            raise ValueError("sidelobe spread and aspect must be positive")


# -- box geometry -------------------------------------------------------------

def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _to_local(pts: np.ndarray, box: GtBox) -> np.ndarray:
    return (pts - np.array([box.cx, box.cy, box.cz])) @ _rot(box.yaw)


def box_surface_distance(pts: np.ndarray, box: GtBox) -> np.ndarray:
    """Unsigned distance from each point to the surface of ``box``."""
    local = np.abs(_to_local(pts, box))
    half = np.array([box.l, box.w, box.h]) / 2
    q = local - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return np.abs(outside + inside)


def surface_clearance(pts: np.ndarray, boxes) -> np.ndarray:
    """Distance to the nearest real surface (ground plane z=0 or any box)."""
    d = np.abs(pts[:, 2])
    for b in boxes:
        d = np.minimum(d, box_surface_distance(pts, b))
    return d


def sample_box_surface(rng: np.random.Generator, box: GtBox, density: float):
    """Uniform samples on the four sides and the roof; returns ``(points, normals)``."""
    hl, hw, hh = box.l / 2, box.w / 2, box.h / 2
    # (normal, area, sampler of local points)
    faces = [
        ((1, 0, 0), box.w * box.h, lambda n: np.c_[np.full(n, hl), rng.uniform(-hw, hw, n), rng.uniform(-hh, hh, n)]),
        ((-1, 0, 0), box.w * box.h, lambda n: np.c_[np.full(n, -hl), rng.uniform(-hw, hw, n), rng.uniform(-hh, hh, n)]),
        ((0, 1, 0), box.l * box.h, lambda n: np.c_[rng.uniform(-hl, hl, n), np.full(n, hw), rng.uniform(-hh, hh, n)]),
        ((0, -1, 0), box.l * box.h, lambda n: np.c_[rng.uniform(-hl, hl, n), np.full(n, -hw), rng.uniform(-hh, hh, n)]),
        ((0, 0, 1), box.l * box.w, lambda n: np.c_[rng.uniform(-hl, hl, n), rng.uniform(-hw, hw, n), np.full(n, hh)]),
    ]
    rot = _rot(box.yaw)
    centre = np.array([box.cx, box.cy, box.cz])
    pts, normals = [], []
    for normal, area, sampler in faces:
        n = int(rng.poisson(density * area))
        local = sampler(n).reshape(n, 3)
        pts.append(local @ rot.T + centre)
        normals.append(np.tile(np.array(normal, dtype=float) @ rot.T, (n, 1)))
    return np.concatenate(pts), np.concatenate(normals)


def _place_boxes(rng: np.random.Generator, cfg: SceneConfig) -> list:
    x0, x1, y0, y1 = cfg.extent[:4]
    target = int(rng.integers(cfg.num_objects[0], cfg.num_objects[1] + 1))
    boxes, discs = [], []
    for _ in range(200 * max(target, 1)):
        if len(boxes) >= target:
            break
        w = rng.uniform(*cfg.size_w)
        l = rng.uniform(*cfg.size_l)
        h = rng.uniform(*cfg.size_h)
        r = math.hypot(w, l) / 2
        cx = rng.uniform(x0 + r + 0.5, x1 - r - 0.5)
        cy = rng.uniform(y0 + r + 0.5, y1 - r - 0.5)
        yaw = rng.uniform(-math.pi, math.pi)
        if math.hypot(cx, cy) < r + 3.0:
            continue
        if any(math.hypot(cx - ox, cy - oy) < r + orr + 0.5 for ox, oy, orr in discs):
            continue
        discs.append((cx, cy, r))
        boxes.append(GtBox(cx, cy, h / 2, w, l, h, yaw, 0))
    return boxes


def _inside_footprint(pts: np.ndarray, box: GtBox) -> np.ndarray:
    local = np.abs(_to_local(pts, box))
    return (local[:, 0] <= box.l / 2) & (local[:, 1] <= box.w / 2)


def sidelobe_offsets(rng: np.random.Generator, n: int, cfg: SceneConfig) -> np.ndarray:
    sz = cfg.sidelobe_spread
    sxy = sz / cfg.sidelobe_aspect
    return rng.normal(0.0, 1.0, size=(n, 3)) * np.array([sxy, sxy, sz])


def _in_extent(pts: np.ndarray, cfg: SceneConfig, margin: float = 1e-3) -> np.ndarray:
    e = np.array(cfg.extent)
    return np.all((pts >= e[0::2] + margin) & (pts < e[1::2] - margin), axis=1)


def _draw_noise(rng, count: int, proposal, boxes, cfg: SceneConfig, tries: int = 60):
    """Rejection-sample ``count`` noise candidates from ``proposal(rng, k)``."""
    kept, extras = [], []
    need = count
    for _ in range(tries):
        if need <= 0:
            break
        pts, extra = proposal(rng, max(2 * need, 16))
        ok = _in_extent(pts, cfg)
        if cfg.noise_clearance > 0:
            ok &= surface_clearance(pts, boxes) >= cfg.noise_clearance
        sel = np.flatnonzero(ok)[:need]
        kept.append(pts[sel])
        extras.append(extra[sel])
        need -= sel.size
    if not kept:
        return np.zeros((0, 3)), np.zeros((0, extras[0].shape[1] if extras else 3))
    return np.concatenate(kept), np.concatenate(extras)


def _generate(cfg: SceneConfig, index: int):
    rng = np.random.default_rng([cfg.seed, index])
    sensor = np.array([0.0, 0.0, cfg.sensor_height])
    x0, x1, y0, y1 = cfg.extent[:4]
    boxes = _place_boxes(rng, cfg)

    # LiDAR: object surfaces plus the ground outside the footprints
    lidar_parts = []
    for b in boxes:
        p, _ = sample_box_surface(rng, b, cfg.lidar_density)
        lidar_parts.append(p + rng.normal(0.0, 0.01, p.shape))
    area = (x1 - x0) * (y1 - y0)
    ng = int(rng.poisson(cfg.lidar_ground_density * area))
    ground = np.c_[rng.uniform(x0, x1, ng), rng.uniform(y0, y1, ng), rng.normal(0.0, 0.02, ng)]
    under = np.zeros(ng, dtype=bool)
    for b in boxes:
        under |= _inside_footprint(ground, b)
    lidar_parts.append(ground[~under])
    lidar = np.concatenate(lidar_parts) if lidar_parts else np.zeros((0, 3))

    # valid radar returns
    def jitter(n):
        j = rng.normal(0.0, cfg.surface_jitter, (n, 3))
        norm = np.linalg.norm(j, axis=1, keepdims=True)
        return j * np.minimum(1.0, 0.12 / np.maximum(norm, 1e-12))

    valid_parts = []
    for b in boxes:
        p, normals = sample_box_surface(rng, b, cfg.lidar_density * cfg.radar_hit_rate)
        p = p + jitter(p.shape[0])
        ray = p - sensor
        rng_ = np.linalg.norm(ray, axis=1)
        cos = np.abs((ray * normals).sum(axis=1)) / np.maximum(rng_, 1e-9)
        intensity = 10.0 * np.maximum(cos, 0.1) * rng.uniform(0.8, 1.2, p.shape[0])
        speed = 0.0 if rng.random() < 0.3 else rng.uniform(0.0, cfg.max_speed)
        vel = speed * np.array([math.cos(b.yaw), math.sin(b.yaw), 0.0])
        doppler = (ray @ vel) / np.maximum(rng_, 1e-9)
        valid_parts.append(np.c_[p, intensity, doppler])
    ngr = int(rng.poisson(cfg.lidar_ground_density * cfg.ground_hit_rate * area))
    gp = np.c_[rng.uniform(x0, x1, ngr), rng.uniform(y0, y1, ngr), np.zeros(ngr)]
    gunder = np.zeros(ngr, dtype=bool)
    for b in boxes:
        gunder |= _inside_footprint(gp, b)
    gp = gp[~gunder] + jitter(int((~gunder).sum()))
    gray = gp - sensor
    gcos = np.abs(gray[:, 2]) / np.maximum(np.linalg.norm(gray, axis=1), 1e-9)
    g_int = 2.0 * np.maximum(gcos, 0.1) * rng.uniform(0.8, 1.2, gp.shape[0])
    n_obj = sum(v.shape[0] for v in valid_parts)
    valid_parts.append(np.c_[gp, g_int, np.zeros(gp.shape[0])])
    valid = np.concatenate(valid_parts)

    # noise budget
    obj_valid = valid[:n_obj]
    if obj_valid.shape[0]:
        strong = obj_valid[obj_valid[:, 3] >= np.quantile(obj_valid[:, 3], cfg.strong_quantile)]
    else:
        strong = np.zeros((0, 5))
    if cfg.noise_fraction is not None:
        f = cfg.noise_fraction
        n_noise = int(round(valid.shape[0] * f / (1.0 - f)))
        n_clutter = int(round(n_noise * cfg.clutter_share)) if strong.shape[0] else n_noise
        n_side = n_noise - n_clutter
    else:
        lo, hi = cfg.sidelobes_per_strong
        n_side = int(rng.integers(lo, hi + 1, size=strong.shape[0]).sum()) if strong.shape[0] else 0
        n_clutter = int(rng.integers(cfg.clutter_count[0], cfg.clutter_count[1] + 1))

    def side_proposal(r, k):
        parents = strong[r.integers(0, strong.shape[0], k)]
        off = sidelobe_offsets(r, k, cfg)
        return parents[:, :3] + off, np.c_[off, parents[:, 3:]]

    side_pts, side_extra = _draw_noise(rng, n_side, side_proposal, boxes, cfg) if n_side else (
        np.zeros((0, 3)), np.zeros((0, 5)))
    side_int = side_extra[:, 3] * rng.uniform(0.1, 0.3, side_pts.shape[0])
    side_dop = side_extra[:, 4] + rng.normal(0.0, 0.1, side_pts.shape[0])
    sidelobes = np.c_[side_pts, side_int, side_dop]

    e = np.array(cfg.extent)

    def clutter_proposal(r, k):
        pts = r.uniform(e[0::2], e[1::2], size=(k, 3))
        return pts, np.zeros((k, 1))

    clut_pts, _ = _draw_noise(rng, n_clutter, clutter_proposal, boxes, cfg) if n_clutter else (
        np.zeros((0, 3)), None)
    clutter = np.c_[clut_pts, rng.uniform(0.1, 1.5, clut_pts.shape[0]), rng.normal(0.0, 1.0, clut_pts.shape[0])]

    radar = np.concatenate([valid, sidelobes, clutter])
    labels = np.r_[np.ones(valid.shape[0]), np.zeros(sidelobes.shape[0] + clutter.shape[0])].astype(np.int8)
    perm = rng.permutation(radar.shape[0])
    radar, labels = radar[perm], labels[perm]
    radar[:, 3] = np.maximum(radar[:, 3], 0.0)

    scene = SceneSample(
        radar=PointCloud.radar(round_sig9(radar)),
        lidar=PointCloud.lidar(round_sig9(lidar)),
        boxes=boxes,
        point_labels=labels,
        name=f"scene_{index:05d}",
    )
    info = {"sidelobe_offsets": side_extra[:, :3], "num_sidelobes": sidelobes.shape[0],
            "num_clutter": clutter.shape[0], "num_valid": valid.shape[0]}
    return scene, info


def generate_scene(cfg: SceneConfig, index: int) -> SceneSample:
    return _generate(cfg, index)[0]


SPLITS = ("train", "val", "test")


def generate_dataset(cfg: SceneConfig, counts, out_dir) -> dict:
    """Write scenes, one manifest list per split and a ``stats.json`` summary.

    Scene indices run consecutively across splits so every scene is distinct.
    Returns the summary dict.
    """
    if isinstance(counts, dict):
        counts = [counts.get(s, 0) for s in SPLITS]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    index = 0
    for split, n in zip(SPLITS, counts):
        names, n_radar, n_lidar, n_noise = [], 0, 0, 0
        for _ in range(int(n)):
            scene = generate_scene(cfg, index)
            name = f"{split}_{index:05d}"
            save_scene(scene, out, name)
            names.append(f"{name}.json")
            n_radar += len(scene.radar)
            n_lidar += len(scene.lidar)
            n_noise += int((scene.point_labels == 0).sum())
            index += 1
        (out / f"{split}.txt").write_text("".join(f"{s}\n" for s in names))
        stats[split] = {
            "scenes": len(names),
            "radar_points": n_radar,
            "lidar_points": n_lidar,
            "noise_points": n_noise,
            "noise_fraction": n_noise / n_radar if n_radar else 0.0,
        }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    return stats


def load_split(data_dir, split: str) -> list:
    """Manifest paths listed for ``split``."""
    data_dir = Path(data_dir)
    lst = data_dir / f"{split}.txt"
    if not lst.exists():
        raise FileNotFoundError(f"{lst} not found")
    return [data_dir / line.strip() for line in lst.read_text().splitlines() if line.strip()]
