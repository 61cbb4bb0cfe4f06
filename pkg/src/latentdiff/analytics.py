"""Feature-quality diagnostics for real vs synthetic sets.

Covers pairwise cosine-similarity statistics, nearest-neighbor proximity
with label consistency, per-bin distribution divergences on 1-D principal
projections, and PCA explained variance via power iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import BinSpec, LabeledFeatureSet, bin_indices
from .nnet.rng import make_rng

COSINE_PAIR_CAP = 1_000_000
DIVERGENCE_HIST_BINS = 50
DIVERGENCE_SMOOTHING = 1e-6
W1_QUANTILE_GRID = 512
_POWER_ITER_MAX = 5000
_POWER_ITER_TOL = 1e-12


@dataclass
class CosineStats:
    mean: float
    std: float
    pairs_used: int
    zero_norm_excluded: int


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    ok = norms > 0
    out = np.zeros_like(x)
    out[ok] = x[ok] / norms[ok][:, None]
    return out, ok


def cosine_stats(a: np.ndarray, b: np.ndarray, max_pairs: int = COSINE_PAIR_CAP,
                 seed: int = 0) -> CosineStats:
    """Mean/std of cosine similarity over (sampled) cross pairs.

    When `a` and `b` are the same array object, self-pairs are excluded.
    Zero-norm rows are dropped and counted. Exhaustive below `max_pairs`,
    seeded sampling above.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature widths differ")
    same = a is b
    ua, ok_a = _unit_rows(a)
    ub, ok_b = _unit_rows(b)
    excluded = int((~ok_a).sum() + (0 if same else (~ok_b).sum()))
    ia = np.flatnonzero(ok_a)
    ib = np.flatnonzero(ok_b)
    if ia.size == 0 or ib.size == 0:
        raise ValueError("no nonzero rows to compare")
    total = ia.size * ib.size - (ia.size if same else 0)
    if total <= 0:
        raise ValueError("no valid pairs")
    if total <= max_pairs:
        sims = ua[ia] @ ub[ib].T
        if same:
            mask = ~np.eye(ia.size, dtype=bool)
            vals = sims[mask]
        else:
            vals = sims.reshape(-1)
    else:
        rng = make_rng(seed, "cosine-pairs")
        ii = rng.integers(0, ia.size, size=max_pairs)
        jj = rng.integers(0, ib.size, size=max_pairs)
        if same:
            clash = ii == jj
            jj[clash] = (jj[clash] + 1) % ib.size
        vals = np.sum(ua[ia[ii]] * ub[ib[jj]], axis=1)
    return CosineStats(mean=float(vals.mean()), std=float(vals.std()),
                       pairs_used=int(vals.size), zero_norm_excluded=excluded)


@dataclass
class NeighborReport:
    distances: np.ndarray = field(repr=False)
    label_gaps: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        d, g = self.distances, self.label_gaps
        pct = lambda arr, q: float(np.percentile(arr, q))
        return {
            "distance": {"mean": float(d.mean()), "median": float(np.median(d)),
                         "p10": pct(d, 10), "p90": pct(d, 90)},
            "label_gap": {"mean": float(g.mean()), "median": float(np.median(g)),
                          "p10": pct(g, 10), "p90": pct(g, 90)},
            "count": int(d.size),
        }


def nn_analysis(synthetic: LabeledFeatureSet, real: LabeledFeatureSet,
                chunk: int = 2048) -> NeighborReport:
    """Exact nearest real neighbor per synthetic row under cosine distance."""
    if synthetic.m != real.m:
        raise ValueError("feature widths differ")
    if real.n == 0:
        raise ValueError("empty real set")
    us, _ = _unit_rows(synthetic.features)
    ur, _ = _unit_rows(real.features)
    best_sim = np.full(synthetic.n, -np.inf)
    best_idx = np.zeros(synthetic.n, dtype=int)
    for start in range(0, synthetic.n, chunk):
        block = us[start:start + chunk] @ ur.T
        best_idx[start:start + chunk] = np.argmax(block, axis=1)
        best_sim[start:start + chunk] = np.max(block, axis=1)
    distances = 1.0 - best_sim
    label_gaps = np.abs(synthetic.targets - real.targets[best_idx])
    return NeighborReport(distances=distances, label_gaps=label_gaps)


def _power_iteration(matrix: np.ndarray, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of a symmetric PSD matrix."""
    v = rng.standard_normal(matrix.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(_POWER_ITER_MAX):
        av = matrix @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return 0.0, v
        nxt = av / norm
        # Eigenvectors are sign-ambiguous; compare against both orientations.
        if min(np.linalg.norm(nxt - v), np.linalg.norm(nxt + v)) < _POWER_ITER_TOL:
            v = nxt
            break
        v = nxt
    return float(v @ matrix @ v), v


def pca_components(features: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Top-k eigenpairs of the covariance by power iteration with deflation.

    Returns (eigenvalues, components as rows, trace, mean).
    """
    features = np.asarray(features, dtype=np.float64)
    n, m = features.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if k > m:
        raise ValueError(f"k={k} exceeds feature dimension {m}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    trace = float(np.trace(cov))
    eigvals = np.zeros(k)
    comps = np.zeros((k, m))
    work = cov.copy()
    for i in range(k):
        lam, v = _power_iteration(work, make_rng(seed, f"pca/{i}"))
        lam = max(lam, 0.0)
        eigvals[i] = lam
        comps[i] = v
        work = work - lam * np.outer(v, v)
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], comps[order], trace, mean


def pca_variance(features: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Top-k explained-variance ratios plus the 2-D projection for plotting."""
    features = np.asarray(features, dtype=np.float64)
    n_proj = min(2, features.shape[1])
    eigvals, comps, trace, mean = pca_components(features, max(k, n_proj), seed=seed)
    ratios = eigvals[:k] / trace if trace > 0 else np.zeros(k)
    projection = np.zeros((features.shape[0], 2))
    projection[:, :n_proj] = (features - mean) @ comps[:n_proj].T
    return ratios, projection


def bin_divergences(real: LabeledFeatureSet, synthetic: LabeledFeatureSet,
                    binspec: BinSpec, hist_bins: int = DIVERGENCE_HIST_BINS,
                    smoothing: float = DIVERGENCE_SMOOTHING,
                    seed: int = 0) -> tuple[dict[int, dict], dict[int, str]]:
    """Per-bin KL(real||synth), JS, and W1 on 1-D principal projections.

    Each bin's features (real and synthetic alike) are projected onto the
    first principal component of that bin's real features; divergences use
    smoothed histograms over the combined range, W1 uses quantile matching.
    Bins lacking data on either side are skipped with a reason.
    """
    if real.m != synthetic.m:
        raise ValueError("feature widths differ")
    real_idx = bin_indices(binspec, real.targets)
    synth_idx = bin_indices(binspec, synthetic.targets)
    results: dict[int, dict] = {}
    skipped: dict[int, str] = {}
    for k in range(binspec.count):
        r = real.features[real_idx == k]
        s = synthetic.features[synth_idx == k]
        if r.shape[0] < 2:
            skipped[k] = f"only {r.shape[0]} real sample(s)"
            continue
        if s.shape[0] == 0:
            skipped[k] = "no synthetic samples"
            continue
        _, comps, _, mean = pca_components(r, 1, seed=seed)
        direction = comps[0]
        pr = (r - mean) @ direction
        ps = (s - mean) @ direction
        lo = min(pr.min(), ps.min())
        hi = max(pr.max(), ps.max())
        if hi == lo:
            results[k] = {"kl": 0.0, "js": 0.0, "w1": 0.0}
            continue
        edges = np.linspace(lo, hi, hist_bins + 1)
        p = np.histogram(pr, bins=edges)[0].astype(np.float64)
        q = np.histogram(ps, bins=edges)[0].astype(np.float64)
        p = (p + smoothing) / (p.sum() + smoothing * hist_bins)
        q = (q + smoothing) / (q.sum() + smoothing * hist_bins)
        kl = float(np.sum(p * np.log(p / q)))
        mix = 0.5 * (p + q)
        js = float(0.5 * np.sum(p * np.log(p / mix)) + 0.5 * np.sum(q * np.log(q / mix)))
        u = (np.arange(W1_QUANTILE_GRID) + 0.5) / W1_QUANTILE_GRID
        w1 = float(np.mean(np.abs(np.quantile(pr, u) - np.quantile(ps, u))))
        results[k] = {"kl": kl, "js": js, "w1": w1}
    return results, skipped


@dataclass
class QualityReport:
    """Bundle of all feature-quality diagnostics, JSON-serializable."""

    cosine: dict
    neighbors: dict
    divergences: dict
    divergences_skipped: dict
    pca_ratios: list[float]

    def to_dict(self) -> dict:
        return asdict(self)

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")


def build_quality_report(real: LabeledFeatureSet, synthetic: LabeledFeatureSet,
                         binspec: BinSpec, max_pairs: int = COSINE_PAIR_CAP,
                         pca_k: int = 5, seed: int = 0) -> QualityReport:
    rr = cosine_stats(real.features, real.features, max_pairs, seed)
    ss = cosine_stats(synthetic.features, synthetic.features, max_pairs, seed)
    rs = cosine_stats(real.features, synthetic.features, max_pairs, seed)
    nn = nn_analysis(synthetic, real)
    div, skipped = bin_divergences(real, synthetic, binspec, seed=seed)
    combined = np.vstack([real.features, synthetic.features])
    k = min(pca_k, combined.shape[1])
    ratios, _ = pca_variance(combined, k, seed=seed)
    return QualityReport(
        cosine={"real_real": asdict(rr), "synthetic_synthetic": asdict(ss),
                "real_synthetic": asdict(rs)},
        neighbors=nn.summary(),
        divergences={str(k_): v for k_, v in div.items()},
        divergences_skipped={str(k_): v for k_, v in skipped.items()},
        pca_ratios=[float(r) for r in ratios],
    )


def export_projection_csv(real: LabeledFeatureSet, synthetic: LabeledFeatureSet,
                          path: str | Path, seed: int = 0) -> None:
    """2-D PCA coordinates of both sets (pc1,pc2,origin,label) for plotting."""
    combined = np.vstack([real.features, synthetic.features])
    _, projection = pca_variance(combined, min(2, combined.shape[1]), seed=seed)
    lines = ["pc1,pc2,origin,label"]
    origins = ["real"] * real.n + ["synthetic"] * synthetic.n
    labels = np.concatenate([real.targets, synthetic.targets])
    for (x, y), origin, label in zip(projection, origins, labels):
        lines.append(f"{float(x)!r},{float(y)!r},{origin},{float(label)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
