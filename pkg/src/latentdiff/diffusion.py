"""Noise schedule, v-parameterized conditional denoiser, and reverse sampler.

The forward process follows the standard Gaussian construction
z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps. Training predicts either
the velocity v_t = sqrt(abar_t) eps - sqrt(1 - abar_t) z_0 (default) or
the noise itself (ablation arm). Generation runs the ancestral reverse
chain with posterior variance beta_tilde and no noise at the final step.

Features are standardized internally before diffusion and samples are
de-standardized on the way out, so callers work in input units throughout.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import BinSpec, Standardizer
from .nnet import (
    EVAL,
    Affine,
    ConfigurationError,
    Context,
    EmaShadow,
    LayerNorm,
    OptimizerState,
    Relu,
    Sequential,
    adam_step,
    ema_update,
    load_arrays,
    make_rng,
    residual_block,
    save_arrays,
    sinusoidal_embed,
)

EMBED_DIM = 64
ZHAT_CLAMP = 8.0  # standardized units; guards early-step blowups only

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02

# Keeps 0 < beta < 1 strictly; the cosine tail otherwise rounds beta_T to 1.
_BETA_FLOOR = 1e-12
_BETA_CEIL = 1.0 - 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta/alpha/alpha-bar tables, indexed 0..T with abar[0] = 1."""

    kind: str
    timesteps: int
    offset: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def posterior_variance(self, t: int | np.ndarray) -> np.ndarray:
        """beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t."""
        t = np.asarray(t)
        return (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]


def build_schedule(kind: str, timesteps: int, offset: float = 0.008) -> NoiseSchedule:
    if timesteps < 1:
        raise ConfigurationError(f"timesteps must be >= 1, got {timesteps}")
    if not 0.0 <= offset < 1.0:
        raise ConfigurationError(f"offset must be in [0, 1), got {offset}")
    t = np.arange(timesteps + 1, dtype=np.float64)
    if kind == "cosine":
        f = np.cos((t / timesteps + offset) / (1.0 + offset) * np.pi / 2.0) ** 2
        abar_raw = f / f[0]
        beta = 1.0 - abar_raw[1:] / abar_raw[:-1]
        beta = np.clip(beta, _BETA_FLOOR, _BETA_CEIL)
    elif kind == "linear":
        beta = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, timesteps)
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    beta = np.concatenate([[0.0], beta])
    alpha = np.concatenate([[1.0], alpha])
    if np.any(np.diff(alpha_bar) >= 0):
        raise ConfigurationError("alpha_bar is not strictly decreasing")
    return NoiseSchedule(kind=kind, timesteps=timesteps, offset=float(offset),
                         beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _alpha_bar_at(schedule: NoiseSchedule, t) -> np.ndarray:
    """abar_t shaped to broadcast against (n, m) data; validates t in [1, T]."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.timesteps):
        raise ValueError(f"timestep out of range [1, {schedule.timesteps}]")
    ab = schedule.alpha_bar[t]
    return ab[:, None] if ab.ndim == 1 else ab


def forward_sample(schedule: NoiseSchedule, z0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    ab = _alpha_bar_at(schedule, t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def velocity_target(schedule: NoiseSchedule, z0: np.ndarray, eps: np.ndarray, t) -> np.ndarray:
    """v_t = sqrt(abar_t) eps - sqrt(1 - abar_t) z0."""
    ab = _alpha_bar_at(schedule, t)
    return np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * z0


def recover_z0(schedule: NoiseSchedule, z_t: np.ndarray, v_hat: np.ndarray, t) -> np.ndarray:
    """z0_hat = sqrt(abar_t) z_t - sqrt(1 - abar_t) v_hat."""
    ab = _alpha_bar_at(schedule, t)
    return np.sqrt(ab) * z_t - np.sqrt(1.0 - ab) * v_hat


def recover_z0_from_noise(schedule: NoiseSchedule, z_t: np.ndarray, eps_hat: np.ndarray, t) -> np.ndarray:
    """Noise-prediction inversion of the forward identity."""
    ab = _alpha_bar_at(schedule, t)
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def posterior_mean_coefficients(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    """Coefficients of (z0_hat, z_t) in the reverse-step mean."""
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    beta_t = schedule.beta[t]
    alpha_t = schedule.alpha[t]
    c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    c1 = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    return float(c0), float(c1)


@dataclass
class DiffusionTrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    parameterization: str = "v"  # v | noise
    schedule: str = "cosine"  # cosine | linear
    timesteps: int = 50
    offset: float = 0.008
    ema_decay: float = 0.999
    ema_enabled: bool = True
    dropout: float = 0.1
    hidden_width: int = 256
    blocks: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.parameterization not in ("v", "noise"):
            raise ConfigurationError(f"unknown parameterization {self.parameterization!r}")
        if self.timesteps < 1:
            raise ConfigurationError("timesteps must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")


class DenoiserModel:
    """Conditional denoiser g(z_t, y, t) built from dense blocks.

    Conditioning enters through a target-embedding MLP (raw target
    normalized to [0, 1], then 1 -> 64 -> 64 -> LayerNorm) and a time
    embedding (sinusoidal position encoding of t through one affine).
    The trunk projects [z_t, e_y, e_t] to the hidden width, applies
    residual blocks, and maps back to the feature dimension.
    """

    def __init__(self, feature_dim: int, schedule: NoiseSchedule,
                 standardizer: Standardizer, y_low: float, y_high: float,
                 config: DiffusionTrainConfig, rng: np.random.Generator):
        self.feature_dim = feature_dim
        self.schedule = schedule
        self.standardizer = standardizer
        self.y_low = float(y_low)
        self.y_high = float(y_high)
        self.config = config
        width = config.hidden_width
        self.ynet = Sequential([
            Affine(1, EMBED_DIM, rng, name="y.fc1"),
            Relu(),
            Affine(EMBED_DIM, EMBED_DIM, rng, name="y.fc2"),
            LayerNorm(EMBED_DIM, name="y.ln"),
        ])
        self.tnet = Affine(EMBED_DIM, EMBED_DIM, rng, name="t.proj")
        trunk: list = [Affine(feature_dim + 2 * EMBED_DIM, width, rng, name="trunk.in")]
        for i in range(config.blocks):
            trunk.append(residual_block(width, config.dropout, rng, name=f"trunk.b{i}"))
        trunk.append(Affine(width, feature_dim, rng, name="trunk.out"))
        self.trunk = Sequential(trunk)
        self.ema = EmaShadow.from_params(self.params(), config.ema_decay)

    def params(self):
        return self.ynet.params() + self.tnet.params() + self.trunk.params()

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def normalize_condition(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return (y - self.y_low) / (self.y_high - self.y_low)

    def forward(self, z_t: np.ndarray, y_norm: np.ndarray, t: np.ndarray, ctx: Context = EVAL):
        """y_norm: (n, 1) normalized targets; t: (n,) integer timesteps."""
        pe = sinusoidal_embed(np.asarray(t), EMBED_DIM)
        e_t, c_t = self.tnet.forward(pe, ctx)
        e_y, c_y = self.ynet.forward(y_norm, ctx)
        h = np.concatenate([z_t, e_y, e_t], axis=1)
        out, c_trunk = self.trunk.forward(h, ctx)
        return out, (c_y, c_t, c_trunk)

    def backward(self, grad_out: np.ndarray, cache):
        c_y, c_t, c_trunk = cache
        gh = self.trunk.backward(grad_out, c_trunk)
        m = self.feature_dim
        g_z = gh[:, :m]
        self.ynet.backward(gh[:, m:m + EMBED_DIM], c_y)
        self.tnet.backward(gh[:, m + EMBED_DIM:], c_t)
        return g_z

    def predict(self, z_t: np.ndarray, y_norm: np.ndarray, t: np.ndarray) -> np.ndarray:
        out, _ = self.forward(z_t, y_norm, t, EVAL)
        return out

    @contextmanager
    def ema_weights(self):
        """Temporarily evaluate with the EMA shadow parameters."""
        params = self.params()
        saved = [p.value.copy() for p in params]
        for p, s in zip(params, self.ema.shadow):
            p.value[...] = s
        try:
            yield
        finally:
            for p, s in zip(params, saved):
                p.value[...] = s


def train_diffusion(features: np.ndarray, targets: np.ndarray, binspec: BinSpec,
                    config: DiffusionTrainConfig) -> tuple[DenoiserModel, list[float]]:
    """Fit the denoiser on (feature, target) rows; returns (model, loss trace).

    trace[0] is the mean objective of the untrained network over one
    deterministic evaluation pass; trace[1:] are per-epoch training means.
    The objective is the mean over rows of the squared L2 distance between
    the prediction and its target (v by default, eps for the ablation).
    """
    config.validate()
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = features.shape[0]
    if n < 1:
        raise ValueError("empty training set")
    schedule = build_schedule(config.schedule, config.timesteps, config.offset)
    standardizer = Standardizer.fit(features) if n >= 2 else Standardizer.identity(features.shape[1])
    z0_all = standardizer.transform(features)
    y_norm_all = ((targets - binspec.y_min) / (binspec.y_max - binspec.y_min))[:, None]
    if np.any(y_norm_all < -1e-9) or np.any(y_norm_all > 1 + 1e-9):
        raise ValueError("targets are not normalizable to [0, 1] under the bin range")

    init_rng = make_rng(config.seed, "diffusion/init")
    model = DenoiserModel(features.shape[1], schedule, standardizer,
                          binspec.y_min, binspec.y_max, config, init_rng)
    params = model.params()
    opt = OptimizerState.for_params(params, learning_rate=config.learning_rate)
    train_rng = make_rng(config.seed, "diffusion/train")
    ctx = Context(train=True, rng=train_rng)

    def batch_objective(idx: np.ndarray, rng: np.random.Generator, ctx_: Context):
        z0 = z0_all[idx]
        y = y_norm_all[idx]
        t = rng.integers(1, schedule.timesteps + 1, size=idx.size)
        eps = rng.standard_normal(z0.shape)
        z_t = forward_sample(schedule, z0, t, eps)
        if config.parameterization == "v":
            target = velocity_target(schedule, z0, eps, t)
        else:
            target = eps
        pred, cache = model.forward(z_t, y, t, ctx_)
        diff = pred - target
        loss = float(np.sum(diff * diff) / idx.size)
        return loss, diff, cache

    trace: list[float] = []
    eval_rng = make_rng(config.seed, "diffusion/eval0")
    loss0, _, _ = batch_objective(np.arange(n), eval_rng, EVAL)
    if not np.isfinite(loss0):
        raise RuntimeError("non-finite initial diffusion objective")
    trace.append(loss0)

    batch = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = train_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, diff, cache = batch_objective(idx, train_rng, ctx)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite diffusion loss at epoch {epoch}, batch offset {start}")
            model.zero_grad()
            model.backward(2.0 * diff / idx.size, cache)
            adam_step(opt, params)
            if config.ema_enabled:
                ema_update(model.ema, params)
            epoch_losses.append(loss)
        trace.append(float(np.mean(epoch_losses)))
    if not config.ema_enabled:
        # Shadow mirrors the final raw weights so EMA sampling stays well-defined.
        model.ema = EmaShadow.from_params(params, config.ema_decay)
    return model, trace


def _reverse_chain(model: DenoiserModel, y_value: float, count: int,
                   rng: np.random.Generator, use_ema: bool) -> np.ndarray:
    """Run the reverse process; returns samples in standardized space."""
    schedule = model.schedule
    m = model.feature_dim
    y_norm = np.full((count, 1), model.normalize_condition(y_value))
    z = rng.standard_normal((count, m))

    def step_all() -> np.ndarray:
        cur = z
        for t in range(schedule.timesteps, 0, -1):
            t_vec = np.full(count, t, dtype=int)
            pred = model.predict(cur, y_norm, t_vec)
            if model.config.parameterization == "v":
                z0_hat = recover_z0(schedule, cur, pred, t)
            else:
                z0_hat = recover_z0_from_noise(schedule, cur, pred, t)
            z0_hat = np.clip(z0_hat, -ZHAT_CLAMP, ZHAT_CLAMP)
            c0, c1 = posterior_mean_coefficients(schedule, t)
            mean = c0 * z0_hat + c1 * cur
            if t > 1:
                sigma = np.sqrt(schedule.posterior_variance(t))
                cur = mean + sigma * rng.standard_normal(cur.shape)
            else:
                cur = mean
            if not np.all(np.isfinite(cur)):
                raise RuntimeError(f"non-finite state during reverse sampling at t={t}")
        return cur

    if use_ema:
        with model.ema_weights():
            return step_all()
    return step_all()


def reverse_sample(model: DenoiserModel, y_value: float, count: int,
                   seed: int | np.random.Generator, use_ema: bool = True,
                   stream: str = "sample") -> np.ndarray:
    """Generate `count` feature vectors conditioned on `y_value`, in input units."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not model.y_low <= y_value <= model.y_high:
        raise ValueError(
            f"condition {y_value} outside training range [{model.y_low}, {model.y_high}]")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, stream)
    z = _reverse_chain(model, y_value, count, rng, use_ema)
    return model.standardizer.inverse_transform(z)


def config_digest(obj) -> str:
    """Stable short hash of any JSON-serializable config object."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_denoiser(model: DenoiserModel, path: str | Path) -> None:
    meta = {
        "kind": "denoiser",
        "feature_dim": model.feature_dim,
        "y_low": model.y_low,
        "y_high": model.y_high,
        "schedule": {"kind": model.schedule.kind, "timesteps": model.schedule.timesteps,
                     "offset": model.schedule.offset},
        "config": asdict(model.config),
        "config_hash": config_digest(model.config),
        "ema_decay": model.ema.decay,
    }
    arrays = {f"p{i}": p.value for i, p in enumerate(model.params())}
    arrays.update({f"ema{i}": s for i, s in enumerate(model.ema.shadow)})
    arrays["std_mean"] = model.standardizer.mean
    arrays["std_std"] = model.standardizer.std
    arrays["std_const"] = model.standardizer.constant_dims
    save_arrays(path, meta, arrays)


def load_denoiser(path: str | Path) -> DenoiserModel:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "denoiser":
        raise ValueError(f"{path} is not a denoiser checkpoint")
    config = DiffusionTrainConfig(**meta["config"])
    schedule = build_schedule(**meta["schedule"])
    standardizer = Standardizer(mean=arrays["std_mean"], std=arrays["std_std"],
                                constant_dims=arrays["std_const"].astype(bool))
    model = DenoiserModel(meta["feature_dim"], schedule, standardizer,
                          meta["y_low"], meta["y_high"], config,
                          make_rng(0, "denoiser/load"))
    for i, p in enumerate(model.params()):
        p.value[...] = arrays[f"p{i}"]
    for i in range(len(model.ema.shadow)):
        model.ema.shadow[i][...] = arrays[f"ema{i}"]
    return model
