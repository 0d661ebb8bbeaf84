"""Point-cloud containers, scene samples and their CSV/JSON file formats."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

RADAR_COLUMNS = ("x", "y", "z", "intensity", "doppler")
LIDAR_COLUMNS = ("x", "y", "z")
COLUMNS = {"radar": RADAR_COLUMNS, "lidar": LIDAR_COLUMNS}


class CloudFormatError(ValueError):
    """A cloud or manifest file does not follow the expected format."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path} line {line}: {message}")
        self.path = path
        self.line = line


class RadarPoint(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float
    doppler: float


class LidarPoint(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class PointCloud:
    """Ordered point set. Row ``i`` of ``data`` is point ``i``; masks index into it.

    Radar clouds carry 5 columns (x, y, z, intensity, doppler), LiDAR clouds 3.
    """

    data: np.ndarray
    kind: str = "radar"
    frame_id: str = "sensor"

    def __post_init__(self):
        if self.kind not in COLUMNS:
            raise ValueError(f"unknown cloud kind {self.kind!r}")
        width = len(COLUMNS[self.kind])
        data = np.asarray(self.data, dtype=np.float64).reshape(-1, width)
        if not np.all(np.isfinite(data)):
            raise ValueError("point coordinates and attributes must be finite")
        if self.kind == "radar" and np.any(data[:, 3] < 0):
            raise ValueError("radar intensity must be non-negative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def radar(cls, points, frame_id: str = "sensor") -> "PointCloud":
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, 5), "radar", frame_id)

    @classmethod
    def lidar(cls, points, frame_id: str = "sensor") -> "PointCloud":
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, 3), "lidar", frame_id)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int):
        row = tuple(float(v) for v in self.data[i])
        return RadarPoint(*row) if self.kind == "radar" else LidarPoint(*row)

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    def select(self, keep) -> "PointCloud":
        """Sub-cloud of the rows where ``keep`` is truthy, order preserved."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (len(self),):
            raise ValueError(f"mask length {keep.shape} does not match cloud size {len(self)}")
        return PointCloud(self.data[keep], self.kind, self.frame_id)


@dataclass(frozen=True)
class GtBox:
    cx: float
    cy: float
    cz: float
    w: float
    l: float
    h: float
    yaw: float
    class_id: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError("box sizes must be positive")
        if not (-math.pi <= self.yaw < math.pi):
            object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_list(self) -> list:
        return [self.cx, self.cy, self.cz, self.w, self.l, self.h, self.yaw, self.class_id]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "GtBox":
        if len(values) != 8:
            raise ValueError(f"box needs 8 values [cx,cy,cz,w,l,h,yaw,class_id], got {len(values)}")
        *geom, class_id = values
        return cls(*(float(v) for v in geom), class_id=int(class_id))


def wrap_angle(a: float) -> float:
    """Map an angle into [-pi, pi)."""
    a = (a + math.pi) % (2 * math.pi) - math.pi
    return -math.pi if a >= math.pi else a


@dataclass
class SceneSample:
    radar: PointCloud
    lidar: PointCloud
    boxes: list = field(default_factory=list)
    point_labels: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if self.point_labels is not None:
            labels = np.asarray(self.point_labels, dtype=np.int8)
            if labels.shape != (len(self.radar),):
                raise ValueError(
                    f"point_labels has {labels.size} entries for {len(self.radar)} radar points"
                )
            self.point_labels = labels


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def round_sig9(a: np.ndarray) -> np.ndarray:
    """Round values to what a save/load cycle through the CSV format yields."""
    flat = np.asarray(a, dtype=np.float64).ravel()
    return np.array([float(_fmt(v)) for v in flat], dtype=np.float64).reshape(np.shape(a))


def save_cloud(cloud: PointCloud, path) -> None:
    path = Path(path)
    header = COLUMNS[cloud.kind]
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in cloud.data.tolist())
    path.write_text("\n".join(lines) + "\n")


def load_cloud(path, kind: str = "radar", frame_id: str = "sensor") -> PointCloud:
    """Read a CSV cloud. Raises :class:`CloudFormatError` naming the offending line."""
    path = Path(path)
    header = COLUMNS.get(kind)
    if header is None:
        raise ValueError(f"unknown cloud kind {kind!r}")
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != header:
            raise CloudFormatError(path, 1, f"expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CloudFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise CloudFormatError(path, lineno, "non-numeric field") from None
            if not all(math.isfinite(v) for v in values):
                raise CloudFormatError(path, lineno, "non-finite value")
            if kind == "radar" and values[3] < 0:
                raise CloudFormatError(path, lineno, "negative intensity")
            rows.append(values)
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return PointCloud(data, kind, frame_id)


def save_scene(scene: SceneSample, directory, name: str) -> Path:
    """Write ``<name>_radar.csv``, ``<name>_lidar.csv`` and the ``<name>.json`` manifest."""
    directory = Path(directory)
    radar_file = f"{name}_radar.csv"
    lidar_file = f"{name}_lidar.csv"
    save_cloud(scene.radar, directory / radar_file)
    save_cloud(scene.lidar, directory / lidar_file)
    manifest = {
        "radar": radar_file,
        "lidar": lidar_file,
        "boxes": [[_num(v) for v in b.as_list()] for b in scene.boxes],
    }
    if scene.point_labels is not None:
        manifest["point_labels"] = [int(v) for v in scene.point_labels]
    out = directory / f"{name}.json"
    out.write_text(json.dumps(manifest) + "\n")
    return out


def _num(v):
    return v if isinstance(v, int) else float(_fmt(v))


def load_scene(manifest_path, require_lidar: bool = True) -> SceneSample:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CloudFormatError(manifest_path, exc.lineno, exc.msg) from None
    base = manifest_path.parent
    radar = load_cloud(base / doc["radar"], "radar")
    lidar_name = doc.get("lidar")
    if lidar_name and (base / lidar_name).exists():
        lidar = load_cloud(base / lidar_name, "lidar")
    elif require_lidar:
        raise FileNotFoundError(f"{manifest_path}: LiDAR file missing")
    else:
        lidar = PointCloud.lidar(np.zeros((0, 3)))
    boxes = [GtBox.from_list(b) for b in doc.get("boxes", [])]
    labels = doc.get("point_labels")
    return SceneSample(
        radar=radar,
        lidar=lidar,
        boxes=boxes,
        point_labels=None if labels is None else np.asarray(labels, dtype=np.int8),
        name=manifest_path.stem,
    )
