"""Training loop, evaluation, baseline search and the ablation harness."""
from __future__ import annotations

import copy
import csv
import io
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autograd import ParamStore, adam_step, backward, config_hash, no_grad, save_checkpoint
from .baselines import RorConfig, SorConfig, ror_filter, sor_filter
from .cloud import SceneSample, load_scene
from .config import RunConfig, model_section
from .head import HeadTargets, assign_targets, head_forward, head_losses
from .losses import LossWeights, mask_loss, total_loss
from .metrics import MaskMetrics, chamfer_distance, mask_metrics
from .model import ScenePlan, hmsd_forward, plan_scene, point_scores
from .supervision import point_gt_mask, voxel_gt_mask
from .voxel import SparseVoxelSet, voxelize

log = logging.getLogger(__name__)


class DataContractError(ValueError):
    """Input data violates a pipeline requirement (exit code 3)."""


class NumericError(FloatingPointError):
    """A loss went non-finite (exit code 4)."""

    def __init__(self, epoch: int, scene: str, values: dict):
        super().__init__(f"non-finite loss at epoch {epoch} scene {scene}: {values}")
        self.epoch = epoch
        self.scene = scene


@dataclass
class PreparedScene:
    scene: SceneSample
    voxels: SparseVoxelSet
    plan: ScenePlan
    gt_voxel: np.ndarray | None
    targets: HeadTargets

    @property
    def name(self) -> str:
        return self.scene.name


def load_scenes(manifests, require_lidar: bool = True) -> list:
    scenes = []
    for m in manifests:
        try:
            scenes.append(load_scene(m, require_lidar=require_lidar))
        except FileNotFoundError as exc:
            if require_lidar and "lidar" in str(exc).lower():
                raise DataContractError(
                    f"training requires a LiDAR cloud for every scene: {exc}") from None
            raise
    return scenes


def prepare_scene(scene: SceneSample, cfg: RunConfig, supervise: bool = True) -> PreparedScene:
    """Voxelize, plan and (for training) build the LiDAR-derived voxel mask."""
    voxels = voxelize(scene.radar, cfg.voxel)
    if len(voxels) == 0:
        raise DataContractError(f"scene {scene.name} has no radar points inside the grid")
    plan = plan_scene(voxels, cfg.model)
    gt = None
    if supervise:
        if scene.lidar is None or len(scene.lidar) == 0:
            raise DataContractError(f"training requires LiDAR; scene {scene.name} has none")
        pm = point_gt_mask(scene.radar, scene.lidar, cfg.supervision)
        gt = voxel_gt_mask(pm, voxels, cfg.supervision.voxel_rule).values.astype(np.float64)
    return PreparedScene(scene, voxels, plan, gt, assign_targets(scene.boxes, cfg.voxel))


def forward_losses(store: ParamStore, prep: PreparedScene, cfg: RunConfig, mode: str = "train"):
    out = hmsd_forward(store, prep.plan, cfg.model, mode)
    head = head_forward(store, out.bev, cfg.head)
    l_cls, l_reg = head_losses(head, prep.targets, cfg.loss.cls, cfg.loss.reg, cfg.loss.focal)
    l_msk = mask_loss(out.pred_mask, prep.gt_voxel)
    return total_loss(l_cls, l_reg, l_msk, LossWeights(*cfg.loss.weights)), out


def train_step(store: ParamStore, prep: PreparedScene, cfg: RunConfig) -> dict:
    store.zero_grad()
    losses, _ = forward_losses(store, prep, cfg, "train")
    values = losses.values()
    if not all(math.isfinite(v) for v in values.values()):
        return values
    backward(losses.total)
    adam_step(store, cfg.train.lr)
    return values


def predict_points(store: ParamStore, prep: PreparedScene, cfg: RunConfig) -> np.ndarray:
    with no_grad():
        out = hmsd_forward(store, prep.plan, cfg.model, mode="eval")
    return point_scores(prep.voxels, out.mask_values)


def pooled_metrics(scores: list, labels: list, threshold: float = 0.5) -> MaskMetrics:
    return mask_metrics(np.concatenate(scores), np.concatenate(labels), threshold)


def mask_f1(store, preps, cfg: RunConfig) -> float:
    scores = [predict_points(store, p, cfg) for p in preps]
    return pooled_metrics(scores, [p.scene.point_labels for p in preps], cfg.model.threshold).f1


@dataclass
class TrainResult:
    store: ParamStore
    history: list = field(default_factory=list)  # one dict per epoch
    best_epoch: int = 0
    best_val_f1: float = float("nan")
    seconds: float = 0.0

    def log_lines(self) -> list:
        return [format_record(h) for h in self.history]


def format_record(rec: dict) -> str:
    parts = []
    for k, v in rec.items():
        parts.append(f"{k}={v:.9g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def train_model(cfg: RunConfig, train_scenes: list, val_scenes: list = (), emit=None) -> TrainResult:
    """Train from scratch; keeps the parameters of the best epoch by validation mask F1.

    ``emit`` receives one ``key=value`` line per epoch.  With no validation
    scenes the last epoch is kept.
    """
    t0 = time.perf_counter()
    store = ParamStore(seed=cfg.train.seed)
    train_p = [prepare_scene(s, cfg) for s in train_scenes]
    val_p = [prepare_scene(s, cfg, supervise=False) for s in val_scenes]
    if not train_p:
        raise DataContractError("no training scenes")
    rng = np.random.default_rng(cfg.train.seed)
    result = TrainResult(store)
    best_state = None
    for epoch in range(1, cfg.train.epochs + 1):
        order = rng.permutation(len(train_p)) if cfg.train.shuffle else np.arange(len(train_p))
        sums = dict.fromkeys(("cls", "reg", "msk", "total"), 0.0)
        for i in order:
            values = train_step(store, train_p[i], cfg)
            if not all(math.isfinite(v) for v in values.values()):
                raise NumericError(epoch, train_p[i].name, values)
            for k in sums:
                sums[k] += values[k]
        rec = {"epoch": epoch}
        rec.update({k: v / len(train_p) for k, v in sums.items()})
        if val_p:
            rec["val_f1"] = mask_f1(store, val_p, cfg)
            if best_state is None or rec["val_f1"] > result.best_val_f1:
                result.best_val_f1 = rec["val_f1"]
                result.best_epoch = epoch
                best_state = _snapshot(store)
        result.history.append(rec)
        if emit is not None:
            emit(format_record(rec))
    if best_state is not None:
        _restore(store, best_state)
    else:
        result.best_epoch = cfg.train.epochs
    result.seconds = time.perf_counter() - t0
    return result


def _snapshot(store: ParamStore) -> dict:
    return {
        "params": {k: p.data.copy() for k, p in store.params.items()},
        "buffers": copy.deepcopy(store.buffers),
    }


def _restore(store: ParamStore, snap: dict) -> None:
    for k, a in snap["params"].items():
        store.params[k].data = a
    store.buffers = snap["buffers"]


def save_model(path, store: ParamStore, cfg: RunConfig, extra: dict | None = None) -> None:
    save_checkpoint(path, store, model_section(cfg), extra)


# evaluation ---------------------------------------------------------------

@dataclass
class SceneReport:
    name: str
    metrics: MaskMetrics
    chamfer_raw: float
    chamfer_denoised: float
    kept: int
    total: int


def _chamfer_or_nan(cloud, lidar) -> float:
    if lidar is None or len(cloud) == 0 or len(lidar) == 0:
        return float("nan")
    return chamfer_distance(cloud, lidar)


def evaluate_masks(scenes: list, masks: list, threshold: float = 0.5):
    """Per-scene reports plus pooled metrics for a list of soft/hard point masks."""
    reports = []
    for scene, m in zip(scenes, masks):
        keep = np.asarray(m) >= threshold
        reports.append(SceneReport(
            scene.name,
            mask_metrics(m, scene.point_labels, threshold),
            _chamfer_or_nan(scene.radar, scene.lidar),
            _chamfer_or_nan(scene.radar.select(keep), scene.lidar),
            int(keep.sum()),
            len(scene.radar),
        ))
    pooled = pooled_metrics(list(masks), [s.point_labels for s in scenes], threshold)
    return reports, pooled


def model_masks(store: ParamStore, scenes: list, cfg: RunConfig) -> list:
    return [predict_points(store, prepare_scene(s, cfg, supervise=False), cfg) for s in scenes]


def chamfer_improved_fraction(reports: list) -> float:
    ok = [r.chamfer_denoised < r.chamfer_raw for r in reports if math.isfinite(r.chamfer_raw)]
    return sum(ok) / len(ok) if ok else float("nan")


# baselines ----------------------------------------------------------------

ROR_GRID = {"radius": (0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0), "min_neighbors": (1, 2, 3, 4, 6, 8, 12)}
SOR_GRID = {"k": (2, 4, 8, 16), "std_mult": (0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0)}


def baseline_masks(method: str, scenes: list, params) -> list:
    if method == "ror":
        return [ror_filter(s.radar, params).values for s in scenes]
    if method == "sor":
        return [sor_filter(s.radar, params).values for s in scenes]
    raise ValueError(f"unknown baseline {method!r}")


def grid_search(method: str, scenes: list, grid: dict | None = None):
    """Exhaustive search for the pooled-F1-best filter settings.

    Returns ``(best params, best pooled metrics, all (params, metrics) rows)``.
    Ties keep the first setting in grid order.
    """
    grid = grid or (ROR_GRID if method == "ror" else SOR_GRID)
    cls = RorConfig if method == "ror" else SorConfig
    labels = [s.point_labels for s in scenes]
    rows = []
    best = None
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = cls(**dict(zip(keys, combo)))
        m = pooled_metrics(baseline_masks(method, scenes, params), labels)
        rows.append((params, m))
        if best is None or m.f1 > best[1].f1:
            best = (params, m)
    return best[0], best[1], rows


# ablation -----------------------------------------------------------------

ABLATION_AXES = {
    "tau": ("supervision.tau", (0.3, 0.5, 0.7)),
    "depth": ("model.predictor.mlp_depth", (1, 2, 3)),
}


@dataclass
class AblationRow:
    variant: str
    value: float
    metrics: MaskMetrics
    chamfer: float  # mean denoised-to-LiDAR chamfer over test scenes
    best_epoch: int


class AblationAborted(RuntimeError):
    def __init__(self, rows: list, cause: Exception):
        super().__init__(f"ablation aborted after {len(rows)} variant(s): {cause}")
        self.rows = rows
        self.cause = cause


def run_ablation(axis: str, cfg: RunConfig, train_scenes, val_scenes, test_scenes, emit=None) -> list:
    """Train one model per axis value with identical seed and budget; rows sorted by value."""
    if axis == "predictor_depth":
        axis = "depth"
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    key, values = ABLATION_AXES[axis]
    rows = []
    for v in values:
        vcfg = cfg.replace(**{key: v})
        try:
            res = train_model(vcfg, train_scenes, val_scenes,
                              emit=(lambda line, v=v: emit(f"{axis}={v} {line}")) if emit else None)
        except Exception as exc:
            raise AblationAborted(sorted(rows, key=lambda r: r.value), exc) from exc
        masks = model_masks(res.store, test_scenes, vcfg)
        reports, pooled = evaluate_masks(test_scenes, masks, vcfg.model.threshold)
        cham = [r.chamfer_denoised for r in reports if math.isfinite(r.chamfer_denoised)]
        rows.append(AblationRow(f"{axis}={v}", float(v), pooled,
                                float(np.mean(cham)) if cham else float("nan"), res.best_epoch))
    return sorted(rows, key=lambda r: r.value)


REPORT_FIELDS = ("variant", "precision", "recall", "f1", "accuracy", "auc", "chamfer", "best_epoch")


def ablation_records(rows: list) -> list:
    return [{"variant": r.variant, "precision": r.metrics.precision, "recall": r.metrics.recall,
             "f1": r.metrics.f1, "accuracy": r.metrics.accuracy, "auc": r.metrics.auc,
             "chamfer": r.chamfer, "best_epoch": r.best_epoch} for r in rows]


def format_table(records: list, fields=None) -> str:
    """Aligned plain-text table."""
    if not records:
        return ""
    fields = list(fields or records[0].keys())
    cells = [[_cell(rec.get(f)) for f in fields] for rec in records]
    widths = [max(len(f), *(len(row[i]) for row in cells)) for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def format_csv(records: list, fields=None) -> str:
    if not records:
        return ""
    fields = list(fields or records[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for rec in records:
        w.writerow([_cell(rec.get(f), 9) for f in fields])
    return buf.getvalue()


def _cell(v, digits: int = 4) -> str:
    if isinstance(v, float):
        return f"{v:.{digits}g}" if digits != 4 else f"{v:.4f}"
    return "" if v is None else str(v)


def run_fingerprint(cfg: RunConfig) -> str:
    return config_hash(cfg.to_dict())
