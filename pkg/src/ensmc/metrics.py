"""Evaluation helpers: accuracy under a distribution, agreement reports.

A "predicate" is any ``str -> bool`` callable; expected accuracy is the
probability mass a distribution puts on strings satisfying it.
Distributions are plain ``{string: probability}`` dicts (normalized), a
particle :class:`~ensmc.inference.Estimate`, or an enumerated
:class:`~ensmc.oracle.ExactTable`.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .ensemble import EnsembleSpec, ExpertPanel
from .inference import Estimate, LocalSample
from .oracle import ExactTable, enumerate_ensemble, model_log_probs, total_variation

Predicate = Callable[[str], bool]


def as_distribution(obj) -> dict[str, float]:
    """Coerce a dict, Estimate, or ExactTable to a normalized dict."""
    if isinstance(obj, dict):
        total = float(sum(obj.values()))
        if not total > 0.0:
            raise ValueError("distribution has no mass")
        return {x: p / total for x, p in obj.items() if p > 0.0}
    if isinstance(obj, Estimate):
        return obj.distribution()
    if isinstance(obj, ExactTable):
        return obj.probs()
    raise TypeError(f"cannot interpret {type(obj).__name__} as a distribution")


def expected_accuracy(obj, predicate: Predicate) -> float:
    """Probability that a draw from the distribution satisfies the predicate."""
    return float(sum(p for x, p in as_distribution(obj).items() if predicate(x)))


def empirical_distribution(samples: Iterable) -> dict[str, float]:
    """Relative frequencies of completed draws (strings or LocalSamples).

    Truncated local draws are excluded; an all-truncated batch is an
    error rather than a silent empty distribution.
    """
    counts: dict[str, int] = {}
    for s in samples:
        if isinstance(s, LocalSample):
            if not s.completed:
                continue
            x = s.x
        else:
            x = s
        counts[x] = counts.get(x, 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no completed samples")
    return {x: c / total for x, c in counts.items()}


def mixture_identity(
    panel: ExpertPanel,
    weights,
    predicate: Predicate,
    max_len: int,
    max_nodes: int | None = None,
) -> tuple[float, float]:
    """Expected accuracy of the weighted linear pool, two ways.

    Returns ``(ensemble, mixture)`` where ``ensemble`` enumerates the
    weighted-sum ensemble directly and ``mixture`` combines per-expert
    accuracies with the same weights. For normalized experts the two are
    equal to rounding, since the weighted-sum target *is* the mixture.
    """
    kwargs = {} if max_nodes is None else {"max_nodes": max_nodes}
    spec = EnsembleSpec.from_name("sum", weights=weights)
    table = enumerate_ensemble(spec, panel, max_len, **kwargs)
    ensemble = table.expected_accuracy(predicate)
    parts = [
        _log_probs_accuracy(model_log_probs(model, max_len, **kwargs), predicate)
        for model in panel
    ]
    mixture = float(np.dot(spec.weights, parts))
    return ensemble, mixture


def _log_probs_accuracy(log_probs: dict[str, float], predicate: Predicate) -> float:
    """Accuracy under an enumerated single model's log-probability dict."""
    total = float(sum(np.exp(lv) for lv in log_probs.values()))
    hits = float(sum(np.exp(lv) for x, lv in log_probs.items() if predicate(x)))
    if not total > 0.0:
        raise ValueError("model has no enumerated mass")
    return hits / total


def intersection_report(
    panel: ExpertPanel,
    predicate: Predicate,
    max_len: int,
    weights=None,
    top: int = 5,
    max_nodes: int | None = None,
) -> dict:
    """How a product ensemble concentrates where all experts agree.

    Enumerates each expert alone and the geometric (product) ensemble,
    reporting predicate accuracy for each and the ensemble's highest
    probability strings.
    """
    kwargs = {} if max_nodes is None else {"max_nodes": max_nodes}
    spec = EnsembleSpec.geometric(weights if weights is not None else len(panel))
    table = enumerate_ensemble(spec, panel, max_len, **kwargs)
    probs = table.probs()
    ranked = sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))
    expert_acc = [
        _log_probs_accuracy(model_log_probs(m, max_len, **kwargs), predicate)
        for m in panel
    ]
    return {
        "expert_accuracy": expert_acc,
        "ensemble_accuracy": table.expected_accuracy(predicate),
        "log_z": table.log_z if np.isfinite(table.log_z) else None,
        "top_strings": [{"x": x, "p": p} for x, p in ranked[:top]],
    }


def rank_displacement(scores_a: dict[str, float], scores_b: dict[str, float]) -> float:
    """Mean absolute rank difference between two scorings of the same strings.

    Ranks are averaged over ties; the dicts must cover the same keys.
    """
    if set(scores_a) != set(scores_b):
        raise ValueError("scorings cover different strings")
    keys = sorted(scores_a)
    if not keys:
        raise ValueError("empty scorings")
    ra = stats.rankdata([scores_a[k] for k in keys])
    rb = stats.rankdata([scores_b[k] for k in keys])
    return float(np.mean(np.abs(ra - rb)))


def correlation_report(
    pairs: Sequence[tuple[Sequence[float], Sequence[float]]],
) -> dict:
    """Agreement between two scorers across instances, two complementary views.

    ``pairs`` holds per-instance aligned score vectors (a, b). Reported:

    * per-instance Spearman rank correlation, with instances where
      either vector is constant (correlation undefined) recorded as None
      and counted in ``undefined``;
    * pooled Pearson correlation after z-scoring scores within each
      instance, which weights instances by size instead of equally.

    The two views answer different questions (typical within-instance
    agreement vs. overall standardized agreement), so both are labeled
    explicitly rather than collapsed into one number.
    """
    per: list[float | None] = []
    pooled_a: list[np.ndarray] = []
    pooled_b: list[np.ndarray] = []
    undefined = 0
    for a, b in pairs:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("each pair must hold two aligned 1-d score vectors")
        if len(a) < 2 or np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
            per.append(None)
            undefined += 1
            continue
        rho = stats.spearmanr(a, b).statistic
        per.append(float(rho))
        pooled_a.append((a - a.mean()) / a.std())
        pooled_b.append((b - b.mean()) / b.std())
    defined = [r for r in per if r is not None]
    if pooled_a:
        pearson = float(
            stats.pearsonr(np.concatenate(pooled_a), np.concatenate(pooled_b)).statistic
        )
    else:
        pearson = None
    return {
        "per_instance_spearman": per,
        "mean_spearman": float(np.mean(defined)) if defined else None,
        "pooled_zscored_pearson": pearson,
        "instances": len(per),
        "undefined": undefined,
    }


def compare_to_oracle(estimate: Estimate, table: ExactTable) -> dict:
    """Sampler-vs-enumeration agreement: normalizer gap and TVD."""
    z_hat = float(np.exp(estimate.log_z_hat))
    z = float(np.exp(table.log_z))
    out = {
        "z_hat": z_hat,
        "z": z,
        "abs_error": abs(z_hat - z),
        "rel_error": abs(z_hat - z) / z if z > 0.0 else None,
    }
    try:
        out["tvd"] = total_variation(estimate.distribution(), table.probs())
    except Exception:
        out["tvd"] = None
    return out
