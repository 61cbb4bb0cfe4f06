"""Imbalanced-regression metrics with many/median/few shot stratification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import BinSpec, ShotPartition, bin_indices

GM_FLOOR = 1e-8
REGIONS = ("all", "many", "median", "few")

# Lower is better for mae/gm/mse; higher for pearson/r2.
METRIC_DIRECTIONS = {"mae": -1, "gm": -1, "mse": -1, "pearson": +1, "r2": +1}


@dataclass
class RegionMetrics:
    count: int
    mae: float
    gm: float
    mse: float
    pearson: float
    r2: float
    pearson_degenerate: bool = False
    r2_degenerate: bool = False


@dataclass
class MetricsReport:
    regions: dict[str, RegionMetrics | None]
    config_hash: str = ""
    seed: int | None = None

    def to_flat_dict(self) -> dict:
        """Fixed dotted keys (mae.all, gm.few, ...); absent regions are omitted."""
        out: dict = {}
        for metric in ("mae", "gm", "mse", "pearson", "r2", "count"):
            for region in REGIONS:
                rm = self.regions.get(region)
                if rm is None:
                    continue
                out[f"{metric}.{region}"] = getattr(rm, metric)
        flags = {}
        for region in REGIONS:
            rm = self.regions.get(region)
            if rm is not None and (rm.pearson_degenerate or rm.r2_degenerate):
                flags[region] = {"pearson_degenerate": rm.pearson_degenerate,
                                 "r2_degenerate": rm.r2_degenerate}
        if flags:
            out["degenerate"] = flags
        if self.config_hash:
            out["config_hash"] = self.config_hash
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_flat_dict(), sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        """Long-format flattening (metric,region,value) for spreadsheets."""
        lines = ["metric,region,value"]
        flat = self.to_flat_dict()
        for key in sorted(flat):
            if "." not in key:
                continue
            metric, region = key.split(".", 1)
            lines.append(f"{metric},{region},{flat[key]!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_flat_dict(cls, flat: dict) -> "MetricsReport":
        regions: dict[str, RegionMetrics | None] = {}
        for region in REGIONS:
            if f"mae.{region}" not in flat:
                regions[region] = None
                continue
            deg = flat.get("degenerate", {}).get(region, {})
            regions[region] = RegionMetrics(
                count=flat[f"count.{region}"],
                mae=flat[f"mae.{region}"], gm=flat[f"gm.{region}"],
                mse=flat[f"mse.{region}"], pearson=flat[f"pearson.{region}"],
                r2=flat[f"r2.{region}"],
                pearson_degenerate=deg.get("pearson_degenerate", False),
                r2_degenerate=deg.get("r2_degenerate", False))
        return cls(regions=regions, config_hash=flat.get("config_hash", ""),
                   seed=flat.get("seed"))


def _region_metrics(pred: np.ndarray, target: np.ndarray) -> RegionMetrics:
    err = pred - target
    abs_err = np.abs(err)
    mae = float(abs_err.mean())
    mse = float(np.mean(err * err))
    # Geometric mean through log space; the floor keeps exact hits from
    # collapsing the product.
    gm = float(np.exp(np.mean(np.log(np.maximum(abs_err, GM_FLOOR)))))
    pc = pred - pred.mean()
    tc = target - target.mean()
    denom = np.sqrt(np.sum(pc * pc) * np.sum(tc * tc))
    pearson_degenerate = denom == 0.0
    pearson = 0.0 if pearson_degenerate else float(np.sum(pc * tc) / denom)
    pearson = float(np.clip(pearson, -1.0, 1.0))
    ss_tot = float(np.sum(tc * tc))
    r2_degenerate = ss_tot == 0.0
    r2 = 0.0 if r2_degenerate else float(1.0 - np.sum(err * err) / ss_tot)
    return RegionMetrics(count=int(pred.size), mae=mae, gm=gm, mse=mse,
                         pearson=pearson, r2=r2,
                         pearson_degenerate=bool(pearson_degenerate),
                         r2_degenerate=bool(r2_degenerate))


def compute_metrics(predictions: np.ndarray, targets: np.ndarray,
                    partition: ShotPartition, binspec: BinSpec,
                    config_hash: str = "", seed: int | None = None) -> MetricsReport:
    """All five metrics per shot region; empty regions are absent, not zero."""
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets must have equal length")
    if predictions.size == 0:
        raise ValueError("empty input")
    if len(partition.labels) != binspec.count:
        raise ValueError("partition does not match bin spec")
    bins = bin_indices(binspec, targets)
    labels = np.array(partition.labels)[bins]
    regions: dict[str, RegionMetrics | None] = {
        "all": _region_metrics(predictions, targets)}
    for region in ("many", "median", "few"):
        mask = labels == region
        regions[region] = _region_metrics(predictions[mask], targets[mask]) if mask.any() else None
    return MetricsReport(regions=regions, config_hash=config_hash, seed=seed)


def compare_reports(baseline: MetricsReport, candidate: MetricsReport) -> dict:
    """Per-region signed deltas oriented so positive means improvement.

    For mae/gm/mse the delta is baseline - candidate; for pearson/r2 it is
    candidate - baseline. Relative values are delta / |baseline|. Regions
    missing on either side are listed with the reason instead of a number.
    """
    deltas: dict = {}
    missing: dict = {}
    for region in REGIONS:
        a = baseline.regions.get(region)
        b = candidate.regions.get(region)
        if a is None or b is None:
            side = []
            if a is None:
                side.append("baseline")
            if b is None:
                side.append("candidate")
            missing[region] = f"absent in {' and '.join(side)}"
            continue
        entry = {}
        for metric, direction in METRIC_DIRECTIONS.items():
            va = getattr(a, metric)
            vb = getattr(b, metric)
            delta = (va - vb) if direction < 0 else (vb - va)
            entry[metric] = {
                "baseline": va,
                "candidate": vb,
                "delta": delta,
                "relative": delta / abs(va) if va != 0 else None,
            }
        deltas[region] = entry
    out = {"regions": deltas}
    if missing:
        out["missing"] = missing
    return out
