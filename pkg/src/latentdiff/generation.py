"""Priority-based budget allocation and Mahalanobis quality gating.

Priorities mix per-bin prediction error with per-bin scarcity,
P'(y) = lambda * e_bar(y) + (1 - lambda) * (1 - n_y / max n), normalized
to a distribution. The gate models each bin's real features as a
Gaussian (shrunk covariance) and accepts a candidate only if its
Mahalanobis distance is within the q-th nearest-rank quantile of the
distances seen on real samples in that bin. Both operate in the same
standardized feature space the diffusion model was trained in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BinSpec, LabeledFeatureSet, bin_indices
from .diffusion import DenoiserModel, _reverse_chain
from .nnet.rng import RngKey

PRIORITY_SUM_TOL = 1e-9


@dataclass
class PriorityState:
    """Per-bin error/count statistics and the normalized priorities."""

    mean_error: np.ndarray  # NaN for bins with no samples
    counts: np.ndarray
    lam: float
    priorities: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0


def track_errors(predictions: np.ndarray, targets: np.ndarray,
                 binspec: BinSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin mean absolute error and count; empty bins get NaN error."""
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"length mismatch: {predictions.shape[0]} predictions vs {targets.shape[0]} targets")
    idx = bin_indices(binspec, targets)
    abs_err = np.abs(predictions - targets)
    counts = np.bincount(idx, minlength=binspec.count)
    sums = np.bincount(idx, weights=abs_err, minlength=binspec.count)
    mean_error = np.full(binspec.count, np.nan)
    occupied = counts > 0
    mean_error[occupied] = sums[occupied] / counts[occupied]
    return mean_error, counts


def priority_scores(mean_error: np.ndarray, counts: np.ndarray, lam: float,
                    normalize_errors: bool = False) -> np.ndarray:
    """Normalized priorities over bins.

    Empty bins take the mean of the observed errors (their scarcity term is
    already maximal). If every raw score is zero the result falls back to
    uniform instead of dividing by zero.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    mean_error = np.asarray(mean_error, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if counts.max() <= 0:
        raise ValueError("at least one bin must have samples")
    err = mean_error.copy()
    observed = np.isfinite(err)
    fill = err[observed].mean() if observed.any() else 0.0
    err[~observed] = fill
    if normalize_errors and err.max() > 0:
        err = err / err.max()
    scarcity = 1.0 - counts / counts.max()
    raw = lam * err + (1.0 - lam) * scarcity
    total = raw.sum()
    if total <= 0:
        return np.full(raw.shape, 1.0 / raw.size)
    return raw / total


def compute_priorities(predictions: np.ndarray, targets: np.ndarray, binspec: BinSpec,
                       lam: float, normalize_errors: bool = False) -> PriorityState:
    mean_error, counts = track_errors(predictions, targets, binspec)
    p = priority_scores(mean_error, counts, lam, normalize_errors=normalize_errors)
    return PriorityState(mean_error=mean_error, counts=counts, lam=lam, priorities=p)


@dataclass(frozen=True)
class AllocationPlan:
    quotas: tuple[int, ...]
    total: int
    mode: str  # priority | uniform


def allocate_budget(priorities: np.ndarray, total: int, mode: str = "priority") -> AllocationPlan:
    """Integer quotas summing to `total`.

    Priority mode uses largest-remainder rounding of total * P (ties broken
    toward lower bin index); uniform mode splits as evenly as integers allow.
    """
    if total < 0:
        raise ValueError(f"budget must be >= 0, got {total}")
    k = len(priorities)
    if mode == "uniform":
        base = total // k
        quotas = np.full(k, base, dtype=int)
        quotas[: total - base * k] += 1
    elif mode == "priority":
        p = np.asarray(priorities, dtype=np.float64)
        ideal = total * p
        quotas = np.floor(ideal).astype(int)
        leftover = total - int(quotas.sum())
        if leftover > 0:
            remainders = ideal - quotas
            order = np.lexsort((np.arange(k), -remainders))
            quotas[order[:leftover]] += 1
    else:
        raise ValueError(f"unknown allocation mode {mode!r}")
    return AllocationPlan(quotas=tuple(int(q) for q in quotas), total=int(total), mode=mode)


@dataclass
class BinGate:
    gated: bool
    count: int
    mean: np.ndarray | None = None
    chol: np.ndarray | None = None  # lower Cholesky factor of the shrunk covariance
    threshold: float = np.nan
    diagonal: bool = False


@dataclass
class QualityGate:
    """Per-bin Gaussian envelope with nearest-rank distance thresholds."""

    binspec: BinSpec
    percentile: float
    min_samples: int
    shrinkage: float
    bins: list[BinGate] = field(default_factory=list)

    def mahalanobis(self, bin_id: int, candidates: np.ndarray) -> np.ndarray:
        gate = self._bin(bin_id)
        if not gate.gated:
            raise ValueError(f"bin {bin_id} is ungated (fewer than {self.min_samples} samples)")
        diff = np.asarray(candidates, dtype=np.float64) - gate.mean
        sol = np.linalg.solve(gate.chol, diff.T)
        return np.sqrt(np.sum(sol * sol, axis=0))

    def _bin(self, bin_id: int) -> BinGate:
        if not 0 <= bin_id < len(self.bins):
            raise ValueError(f"unknown bin id {bin_id}")
        return self.bins[bin_id]


def _nearest_rank_quantile(sorted_values: np.ndarray, q: float) -> float:
    rank = int(np.ceil(q * sorted_values.size))
    rank = min(max(rank, 1), sorted_values.size)
    return float(sorted_values[rank - 1])


def fit_gate(features: np.ndarray, targets: np.ndarray, binspec: BinSpec,
             percentile: float = 0.95, min_samples: int = 5,
             shrinkage: float = 0.1) -> QualityGate:
    """Fit the per-bin Gaussian gate on real (standardized) features.

    Covariance is shrunk toward its isotropic trace, Sigma = (1 - rho) * S +
    rho * (tr S / m) * I; bins with count <= m drop to diagonal covariance.
    Bins under `min_samples` are marked ungated and pass everything later.
    """
    if not 0.0 < percentile <= 1.0:
        raise ValueError(f"percentile must be in (0, 1], got {percentile}")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must be in [0, 1], got {shrinkage}")
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[1]
    idx = bin_indices(binspec, targets)
    gate = QualityGate(binspec=binspec, percentile=percentile,
                       min_samples=min_samples, shrinkage=shrinkage)
    for k in range(binspec.count):
        rows = features[idx == k]
        n_k = rows.shape[0]
        if n_k < min_samples:
            gate.bins.append(BinGate(gated=False, count=n_k))
            continue
        mean = rows.mean(axis=0)
        centered = rows - mean
        diagonal = n_k <= m
        if diagonal:
            var = centered.var(axis=0, ddof=1)
            shrunk = (1.0 - shrinkage) * var + shrinkage * var.mean()
            if np.any(shrunk <= 0):
                raise np.linalg.LinAlgError(
                    f"singular covariance in bin {k} "
                    f"(n={n_k}, diagonal mode); increase shrinkage")
            chol = np.diag(np.sqrt(shrunk))
        else:
            cov = centered.T @ centered / (n_k - 1)
            shrunk = (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / m) * np.eye(m)
            try:
                chol = np.linalg.cholesky(shrunk)
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError(
                    f"singular covariance in bin {k} (n={n_k}, m={m}); "
                    f"increase shrinkage") from None
        bg = BinGate(gated=True, count=n_k, mean=mean, chol=chol, diagonal=diagonal)
        gate.bins.append(bg)
        d = gate.mahalanobis(k, rows)
        bg.threshold = _nearest_rank_quantile(np.sort(d), percentile)
    return gate


def gate_filter(gate: QualityGate | None, candidates: np.ndarray,
                bin_id: int) -> tuple[np.ndarray, int, bool]:
    """Order-preserving filter; returns (accepted, rejected count, passthrough flag).

    A disabled gate (None) or an ungated bin passes everything; the flag
    reports the passthrough so callers can count warnings.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if gate is None:
        return candidates, 0, True
    bg = gate._bin(bin_id)
    if not bg.gated:
        return candidates, 0, True
    if candidates.shape[0] == 0:
        return candidates, 0, False
    d = gate.mahalanobis(bin_id, candidates)
    keep = d <= bg.threshold
    return candidates[keep], int((~keep).sum()), False


def generate_augmentation(model: DenoiserModel, binspec: BinSpec, plan: AllocationPlan,
                          gate: QualityGate | None, max_attempts_factor: int = 10,
                          seed: int = 0, use_ema: bool = True,
                          rng_key: RngKey | None = None) -> tuple[LabeledFeatureSet, dict]:
    """Fill each bin's quota with gate-accepted samples conditioned on its center.

    Per-bin RNG substreams are derived from the master seed and bin id, so
    bins are independent and the merged result does not depend on execution
    order. An unreachable quota yields a partial result and a shortfall
    entry in the report rather than a failure.
    """
    if len(plan.quotas) != binspec.count:
        raise ValueError("allocation plan does not match the bin spec")
    key = rng_key if rng_key is not None else RngKey(seed, "generate")
    accepted_feats: list[np.ndarray] = []
    accepted_targets: list[np.ndarray] = []
    report_bins = []
    for k, quota in enumerate(plan.quotas):
        entry = {"bin": k, "quota": int(quota), "achieved": 0, "attempts": 0,
                 "rejected": 0, "ungated": False}
        if quota > 0:
            rng = key.child(f"bin{k}").generator()
            center = float(binspec.centers[k])
            kept: list[np.ndarray] = []
            got = 0
            attempts = 0
            max_attempts = max_attempts_factor * quota
            while got < quota and attempts < max_attempts:
                chunk = min(quota - got, max_attempts - attempts)
                std_samples = _reverse_chain(model, center, chunk, rng, use_ema)
                attempts += chunk
                accepted, rejected, passthrough = gate_filter(gate, std_samples, k)
                entry["rejected"] += rejected
                entry["ungated"] = entry["ungated"] or passthrough
                if accepted.shape[0] > quota - got:
                    accepted = accepted[: quota - got]
                if accepted.shape[0]:
                    kept.append(accepted)
                    got += accepted.shape[0]
            entry["achieved"] = got
            entry["attempts"] = attempts
            if got:
                std_all = np.concatenate(kept, axis=0)
                accepted_feats.append(model.standardizer.inverse_transform(std_all))
                accepted_targets.append(np.full(got, center))
        report_bins.append(entry)
    if accepted_feats:
        feats = np.concatenate(accepted_feats, axis=0)
        targets = np.concatenate(accepted_targets)
    else:
        feats = np.zeros((0, model.feature_dim))
        targets = np.zeros(0)
    shortfall = {e["bin"]: e["quota"] - e["achieved"] for e in report_bins
                 if e["achieved"] < e["quota"]}
    report = {
        "mode": plan.mode,
        "budget": plan.total,
        "achieved_total": int(feats.shape[0]),
        "bins": report_bins,
        "shortfall": shortfall,
    }
    return LabeledFeatureSet(feats, targets, name="synthetic"), report
