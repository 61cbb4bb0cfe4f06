"""Vanilla regressor, feature extraction, augmented head training, and the
end-to-end orchestration.

The regressor decomposes into an encoder (MLP to the penultimate layer, or
identity for pre-extracted features) and an affine head. Augmentation
retrains the head on real+synthetic feature batches mixed by a constant
per-batch fraction; inference afterwards still runs encoder -> head only,
so synthetic data and the diffusion model never touch the prediction path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig, serialize_config
from .data import (
    BinSpec,
    LabeledFeatureSet,
    Standardizer,
    bin_counts,
    load_csv,
    make_imbalanced_synthetic,
    save_csv,
    shot_partition,
)
from .diffusion import (
    DiffusionTrainConfig,
    config_digest,
    load_denoiser,
    save_denoiser,
    train_diffusion,
)
from .generation import (
    allocate_budget,
    compute_priorities,
    fit_gate,
    generate_augmentation,
)
from .metrics import MetricsReport, compare_reports, compute_metrics
from .nnet import (
    EVAL,
    Affine,
    Context,
    OptimizerState,
    Sequential,
    adam_step,
    load_arrays,
    make_rng,
    mlp,
    save_arrays,
)


@dataclass
class RegressorModel:
    """prediction = head(encoder(x)); encoder may be the identity."""

    encoder: Sequential | None
    head: Affine
    input_standardizer: Standardizer
    feature_dim: int

    def encode(self, x: np.ndarray) -> np.ndarray:
        z = self.input_standardizer.transform(x)
        if self.encoder is None:
            return z
        out, _ = self.encoder.forward(z, EVAL)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.head.forward(self.encode(x), EVAL)
        return out[:, 0]

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        out, _ = self.head.forward(np.asarray(features, dtype=np.float64), EVAL)
        return out[:, 0]

    def params(self):
        enc = self.encoder.params() if self.encoder is not None else []
        return enc + self.head.params()


def _mse_batches(full: Sequential, params, x: np.ndarray, y: np.ndarray,
                 epochs: int, batch_size: int, learning_rate: float,
                 rng: np.random.Generator, what: str) -> list[float]:
    """Shared MSE training loop; returns per-epoch mean losses."""
    n = x.shape[0]
    opt = OptimizerState.for_params(params, learning_rate=learning_rate)
    ctx = Context(train=True, rng=rng)
    trace = []
    batch = min(batch_size, n)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            pred, cache = full.forward(x[idx], ctx)
            diff = pred[:, 0] - y[idx]
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite {what} loss at epoch {epoch}")
            for p in params:
                p.grad[...] = 0.0
            full.backward((2.0 * diff / idx.size)[:, None], cache)
            adam_step(opt, params)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    return trace


def train_vanilla(dataset: LabeledFeatureSet, config: PipelineConfig) -> tuple[RegressorModel, list[float]]:
    """MSE-train encoder + head on raw inputs; deterministic per seed."""
    rcfg = config.regressor
    init_rng = make_rng(config.seed, "vanilla/init")
    std = Standardizer.fit(dataset.features)
    x = std.transform(dataset.features)
    if rcfg.identity_encoder:
        encoder = None
        feature_dim = dataset.m
        head = Affine(feature_dim, 1, init_rng, name="head")
        full = Sequential([head])
    else:
        dims = [dataset.m] + list(rcfg.hidden_dims)
        encoder = mlp(dims, init_rng, activation="relu", final_activation="relu",
                      name="encoder").net
        feature_dim = dims[-1]
        head = Affine(feature_dim, 1, init_rng, name="head")
        full = Sequential([encoder, head])
    model = RegressorModel(encoder=encoder, head=head, input_standardizer=std,
                           feature_dim=feature_dim)
    trace = _mse_batches(full, model.params(), x, dataset.targets,
                         rcfg.epochs, rcfg.batch_size, rcfg.learning_rate,
                         make_rng(config.seed, "vanilla/train"), "vanilla")
    return model, trace


def extract_features(model: RegressorModel, dataset: LabeledFeatureSet) -> LabeledFeatureSet:
    """Rows (encoder(x_i), y_i), order preserved, eval-mode forward."""
    feats = model.encode(dataset.features)
    if feats.shape[1] != model.feature_dim:
        raise ValueError("encoder width mismatch")
    return LabeledFeatureSet(feats, dataset.targets.copy(), name=dataset.name)


@dataclass
class MixSchedule:
    """Synthetic fraction per batch; constant unless a per-epoch table is set."""

    fraction: float = 0.2
    per_epoch: list[float] | None = None

    def at_epoch(self, epoch: int) -> float:
        if self.per_epoch is not None and epoch < len(self.per_epoch):
            return self.per_epoch[epoch]
        return self.fraction

    def validate(self) -> None:
        values = [self.fraction] + list(self.per_epoch or [])
        for v in values:
            if not 0.0 <= v < 1.0:
                raise ValueError(f"mix fraction must be in [0, 1), got {v}")


def train_head_augmented(real: LabeledFeatureSet, synthetic: LabeledFeatureSet,
                         mix: MixSchedule, config: PipelineConfig,
                         encoder_model: RegressorModel | None = None,
                         ) -> tuple[RegressorModel, list[float], dict]:
    """Retrain the head on feature batches mixed from real and synthetic rows.

    Each epoch visits every real row exactly once. Batches carry
    round(batch * r) synthetic rows drawn without replacement from a
    reshuffled pool while it lasts; if the whole synthetic set is smaller
    than a single batch's quota, the quota is met by sampling with
    replacement (counted in the returned log). An empty synthetic set or
    r = 0 degenerates to vanilla head retraining with an identical
    trajectory under the same seed.
    """
    mix.validate()
    mcfg = config.mix
    if synthetic.n > 0 and synthetic.m != real.m:
        raise ValueError(f"feature width mismatch: real {real.m} vs synthetic {synthetic.m}")
    init_rng = make_rng(config.seed, "augment/init")
    head = Affine(real.m, 1, init_rng, name="head")
    if not mcfg.retrain_from_scratch and encoder_model is not None:
        head.w.value[...] = encoder_model.head.w.value
        head.b.value[...] = encoder_model.head.b.value
    full = Sequential([head])
    params = head.params()
    opt = OptimizerState.for_params(params, learning_rate=mcfg.learning_rate)
    rng = make_rng(config.seed, "augment/train")
    ctx = Context(train=True, rng=rng)
    n_real, n_synth = real.n, synthetic.n
    batch = min(mcfg.batch_size, n_real if n_real else 1)
    trace = []
    log = {"replacement_batches": 0, "synthetic_rows_seen": 0}
    for epoch in range(mcfg.epochs):
        r = mix.at_epoch(epoch)
        b_s = int(round(batch * r)) if n_synth > 0 else 0
        b_r = max(batch - b_s, 1)
        real_order = rng.permutation(n_real)
        small_pool = 0 < n_synth < b_s
        if b_s > 0 and not small_pool:
            synth_order = rng.permutation(n_synth)
        sp = 0
        losses = []
        for start in range(0, n_real, b_r):
            ridx = real_order[start:start + b_r]
            xb = real.features[ridx]
            yb = real.targets[ridx]
            if b_s > 0:
                if small_pool:
                    sidx = rng.integers(0, n_synth, size=b_s)
                    log["replacement_batches"] += 1
                else:
                    sidx = synth_order[sp:sp + b_s]
                    sp += len(sidx)
                if len(sidx):
                    xb = np.concatenate([xb, synthetic.features[sidx]], axis=0)
                    yb = np.concatenate([yb, synthetic.targets[sidx]])
                    log["synthetic_rows_seen"] += len(sidx)
            pred, cache = full.forward(xb, ctx)
            diff = pred[:, 0] - yb
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite augmented loss at epoch {epoch}")
            for p in params:
                p.grad[...] = 0.0
            full.backward((2.0 * diff / xb.shape[0])[:, None], cache)
            adam_step(opt, params)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    out_model = RegressorModel(
        encoder=encoder_model.encoder if encoder_model is not None else None,
        head=head,
        input_standardizer=(encoder_model.input_standardizer if encoder_model is not None
                            else Standardizer.identity(real.m)),
        feature_dim=real.m)
    return out_model, trace, log


def save_regressor(model: RegressorModel, path: str | Path) -> None:
    meta = {
        "kind": "regressor",
        "identity_encoder": model.encoder is None,
        "feature_dim": model.feature_dim,
        "n_encoder_params": len(model.encoder.params()) if model.encoder is not None else 0,
        "encoder_affines": ([ (a.in_dim, a.out_dim) for a in model.encoder.modules
                              if isinstance(a, Affine)] if model.encoder is not None else []),
    }
    arrays = {f"p{i}": p.value for i, p in enumerate(model.params())}
    arrays["std_mean"] = model.input_standardizer.mean
    arrays["std_std"] = model.input_standardizer.std
    arrays["std_const"] = model.input_standardizer.constant_dims
    save_arrays(path, meta, arrays)


def load_regressor(path: str | Path) -> RegressorModel:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "regressor":
        raise ValueError(f"{path} is not a regressor checkpoint")
    rng = make_rng(0, "regressor/load")
    std = Standardizer(mean=arrays["std_mean"], std=arrays["std_std"],
                       constant_dims=arrays["std_const"].astype(bool))
    if meta["identity_encoder"]:
        encoder = None
    else:
        dims = [meta["encoder_affines"][0][0]] + [d_out for _, d_out in meta["encoder_affines"]]
        encoder = mlp(dims, rng, activation="relu", final_activation="relu",
                      name="encoder").net
    head = Affine(meta["feature_dim"], 1, rng, name="head")
    model = RegressorModel(encoder=encoder, head=head, input_standardizer=std,
                           feature_dim=meta["feature_dim"])
    for i, p in enumerate(model.params()):
        p.value[...] = arrays[f"p{i}"]
    return model


# ---------------------------------------------------------------------------
# Stage orchestration. Every artifact lives under the run directory; stages
# fail fast with the missing prerequisite named.


class PrerequisiteError(FileNotFoundError):
    pass


ARTIFACTS = {
    "train": "train.csv",
    "test": "test.csv",
    "vanilla_model": "vanilla_model.npz",
    "vanilla_trace": "vanilla_trace.json",
    "features": "features_train.csv",
    "diffusion_model": "diffusion_model.npz",
    "diffusion_trace": "diffusion_trace.json",
    "synthetic": "synthetic.csv",
    "generation_report": "generation_report.json",
    "augmented_model": "augmented_model.npz",
    "augment_trace": "augment_trace.json",
    "metrics_vanilla": "metrics_vanilla.json",
    "metrics_augmented": "metrics_augmented.json",
    "metrics_delta": "metrics_delta.json",
}


def artifact_path(out_dir: str | Path, name: str) -> Path:
    return Path(out_dir) / ARTIFACTS[name]


def _require(out_dir: Path, name: str, produced_by: str) -> Path:
    path = artifact_path(out_dir, name)
    if not path.exists():
        raise PrerequisiteError(
            f"missing prerequisite artifact {path} (run '{produced_by}' first)")
    return path


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_train(cfg: PipelineConfig, out_dir: Path) -> LabeledFeatureSet:
    if cfg.data.train_csv is not None:
        return load_csv(cfg.data.train_csv, y_min=cfg.data.y_min, y_max=cfg.data.y_max)
    path = _require(out_dir, "train", "gen-data")
    return load_csv(path, y_min=cfg.data.y_min, y_max=cfg.data.y_max)


def _load_test(cfg: PipelineConfig, out_dir: Path) -> LabeledFeatureSet:
    if cfg.data.test_csv is not None:
        return load_csv(cfg.data.test_csv, y_min=cfg.data.y_min, y_max=cfg.data.y_max)
    path = _require(out_dir, "test", "gen-data")
    return load_csv(path, y_min=cfg.data.y_min, y_max=cfg.data.y_max)


def resolve_binspec(cfg: PipelineConfig, train: LabeledFeatureSet,
                    test: LabeledFeatureSet | None = None) -> BinSpec:
    """One consistent bin spec for every stage.

    Explicit config bounds win; otherwise the range spans train and test
    targets together so evaluation never sees an out-of-range value.
    """
    targets = [train.targets]
    if test is not None:
        targets.append(test.targets)
    allt = np.concatenate(targets)
    y_min = cfg.data.y_min if cfg.data.y_min is not None else float(allt.min())
    y_max = cfg.data.y_max if cfg.data.y_max is not None else float(allt.max())
    return BinSpec.from_range(y_min, y_max, cfg.bins.count)


def stage_gen_data(cfg: PipelineConfig, out_dir: Path) -> dict:
    if cfg.data.train_csv is not None:
        return {"status": "skipped", "reason": "external train_csv configured"}
    b = cfg.data.benchmark
    train = make_imbalanced_synthetic(b.n_train, b.feature_dim, cfg.bins.count,
                                      b.decay, b.noise, cfg.seed, stream="benchmark/train")
    # Balanced test draw: same feature map and noise, decay 1.
    test = make_imbalanced_synthetic(b.n_test, b.feature_dim, cfg.bins.count,
                                     1.0, b.noise, cfg.seed, stream="benchmark/test")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_csv(train, artifact_path(out_dir, "train"))
    save_csv(test, artifact_path(out_dir, "test"))
    return {"status": "ok", "n_train": train.n, "n_test": test.n}


def stage_train_vanilla(cfg: PipelineConfig, out_dir: Path) -> dict:
    train = _load_train(cfg, out_dir)
    model, trace = train_vanilla(train, cfg)
    save_regressor(model, artifact_path(out_dir, "vanilla_model"))
    _write_json(artifact_path(out_dir, "vanilla_trace"), {"loss": trace})
    return {"status": "ok", "final_loss": trace[-1]}


def stage_extract(cfg: PipelineConfig, out_dir: Path) -> dict:
    train = _load_train(cfg, out_dir)
    model = load_regressor(_require(out_dir, "vanilla_model", "train-vanilla"))
    feats = extract_features(model, train)
    save_csv(feats, artifact_path(out_dir, "features"))
    return {"status": "ok", "rows": feats.n, "width": feats.m}


def _diffusion_config(cfg: PipelineConfig) -> DiffusionTrainConfig:
    d = cfg.diffusion
    return DiffusionTrainConfig(
        epochs=d.epochs, batch_size=d.batch_size, learning_rate=d.learning_rate,
        parameterization=d.parameterization, schedule=d.schedule,
        timesteps=d.timesteps, offset=d.offset, ema_decay=d.ema_decay,
        ema_enabled=d.ema_enabled, dropout=d.dropout,
        hidden_width=d.hidden_width, blocks=d.blocks, seed=cfg.seed)


def stage_train_diffusion(cfg: PipelineConfig, out_dir: Path) -> dict:
    feats = load_csv(_require(out_dir, "features", "extract"))
    train = _load_train(cfg, out_dir)
    test = _load_test(cfg, out_dir)
    binspec = resolve_binspec(cfg, train, test)
    model, trace = train_diffusion(feats.features, feats.targets, binspec,
                                   _diffusion_config(cfg))
    save_denoiser(model, artifact_path(out_dir, "diffusion_model"))
    _write_json(artifact_path(out_dir, "diffusion_trace"), {"loss": trace})
    return {"status": "ok", "initial_loss": trace[0], "final_loss": trace[-1]}


def stage_generate(cfg: PipelineConfig, out_dir: Path) -> dict:
    denoiser = load_denoiser(_require(out_dir, "diffusion_model", "train-diffusion"))
    regressor = load_regressor(_require(out_dir, "vanilla_model", "train-vanilla"))
    feats = load_csv(_require(out_dir, "features", "extract"))
    train = _load_train(cfg, out_dir)
    test = _load_test(cfg, out_dir)
    binspec = resolve_binspec(cfg, train, test)

    predictions = regressor.predict(train.features)
    state = compute_priorities(predictions, train.targets, binspec,
                               cfg.priority.lam, cfg.priority.normalize_errors)
    budget = int(round(cfg.generation.ratio * train.n))
    plan = allocate_budget(state.priorities, budget, cfg.generation.mode)
    gate = None
    if cfg.gate.enabled:
        std_feats = denoiser.standardizer.transform(feats.features)
        gate = fit_gate(std_feats, feats.targets, binspec,
                        percentile=cfg.gate.percentile,
                        min_samples=cfg.gate.min_samples,
                        shrinkage=cfg.gate.shrinkage)
    synthetic, report = generate_augmentation(
        denoiser, binspec, plan, gate,
        max_attempts_factor=cfg.generation.max_attempts_factor, seed=cfg.seed)
    save_csv(synthetic, artifact_path(out_dir, "synthetic"), origin="synthetic")
    report = dict(report)
    report["priorities"] = [float(p) for p in state.priorities]
    report["per_bin_counts"] = [int(c) for c in state.counts]
    report["config_hash"] = config_digest(serialize_config(cfg))
    report["seed"] = cfg.seed
    _write_json(artifact_path(out_dir, "generation_report"), report)
    return {"status": "ok", "achieved": report["achieved_total"], "budget": budget}


def stage_augment(cfg: PipelineConfig, out_dir: Path) -> dict:
    feats = load_csv(_require(out_dir, "features", "extract"))
    synth_path = _require(out_dir, "synthetic", "generate")
    synthetic = _load_synthetic(synth_path, feats.m)
    regressor = load_regressor(_require(out_dir, "vanilla_model", "train-vanilla"))
    mix = MixSchedule(fraction=cfg.mix.fraction, per_epoch=cfg.mix.per_epoch)
    model, trace, log = train_head_augmented(feats, synthetic, mix, cfg,
                                             encoder_model=regressor)
    save_regressor(model, artifact_path(out_dir, "augmented_model"))
    _write_json(artifact_path(out_dir, "augment_trace"), {"loss": trace, "mix_log": log})
    return {"status": "ok", "final_loss": trace[-1]}


def _load_synthetic(path: Path, width: int) -> LabeledFeatureSet:
    # A fully-gated run can leave an empty synthetic file (header only).
    try:
        return load_csv(path)
    except Exception:
        return LabeledFeatureSet(np.zeros((0, width)), np.zeros(0), name="synthetic")


def stage_evaluate(cfg: PipelineConfig, out_dir: Path, report_only: bool = False) -> dict:
    train = _load_train(cfg, out_dir)
    test = _load_test(cfg, out_dir)
    binspec = resolve_binspec(cfg, train, test)
    partition = shot_partition(bin_counts(binspec, train.targets))
    cfg_hash = config_digest(serialize_config(cfg))

    vanilla = load_regressor(_require(out_dir, "vanilla_model", "train-vanilla"))
    rep_v = compute_metrics(vanilla.predict(test.features), test.targets,
                            partition, binspec, config_hash=cfg_hash, seed=cfg.seed)
    result = {"status": "ok", "vanilla": rep_v.to_flat_dict()}
    rep_a = None
    aug_path = artifact_path(out_dir, "augmented_model")
    if aug_path.exists():
        augmented = load_regressor(aug_path)
        rep_a = compute_metrics(augmented.predict(test.features), test.targets,
                                partition, binspec, config_hash=cfg_hash, seed=cfg.seed)
        result["augmented"] = rep_a.to_flat_dict()
        result["delta"] = compare_reports(rep_v, rep_a)
    if not report_only:
        rep_v.save_json(artifact_path(out_dir, "metrics_vanilla"))
        rep_v.save_csv(Path(out_dir) / "metrics_vanilla.csv")
        if rep_a is not None:
            rep_a.save_json(artifact_path(out_dir, "metrics_augmented"))
            rep_a.save_csv(Path(out_dir) / "metrics_augmented.csv")
            _write_json(artifact_path(out_dir, "metrics_delta"), result["delta"])
    return result


PIPELINE_STAGES = [
    ("gen-data", stage_gen_data),
    ("train-vanilla", stage_train_vanilla),
    ("extract", stage_extract),
    ("train-diffusion", stage_train_diffusion),
    ("generate", stage_generate),
    ("augment", stage_augment),
    ("evaluate", stage_evaluate),
]


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path | None = None) -> dict:
    """Execute every stage in order; any failure aborts with the stage named.

    Returns a bundle with per-stage results and both metric reports.
    Artifacts already written stay on disk for inspection.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle: dict = {"out_dir": str(out), "stages": {}}
    for name, fn in PIPELINE_STAGES:
        try:
            bundle["stages"][name] = fn(cfg, out)
        except Exception as exc:
            raise RuntimeError(f"pipeline stage '{name}' failed: {exc}") from exc
    evaluation = bundle["stages"]["evaluate"]
    bundle["vanilla_report"] = evaluation["vanilla"]
    bundle["augmented_report"] = evaluation.get("augmented")
    bundle["delta"] = evaluation.get("delta")
    return bundle
