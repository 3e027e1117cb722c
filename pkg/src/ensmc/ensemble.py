"""Combining expert sequence models into one unnormalized string target.

An ensemble applies a weighted generalized mean to the experts'
probabilities of a complete string:

    target(x) = mean_tau(p_1(x), ..., p_K(x); w)     (up to normalization)

with ``mean_tau(v; w) = (sum_k w_k v_k^tau)^(1/tau)``. The named
operators are the closures of the family: ``minimum`` (tau -> -inf),
``geometric`` (tau -> 0, the weighted product), and ``maximum``
(tau -> +inf). Harmonic, arithmetic ("sum"), and quadratic means are the
power operator at tau = -1, 1, 2.

Zero conventions
----------------
* Zero-weight experts are dropped before aggregation (this also removes
  the 0*log 0 and 0*inf corner cases at the source).
* Consensus operators (tau <= 0, including minimum and geometric): any
  exact-zero input yields an exact-zero output; for tau < 0 this is the
  continuity convention.
* Coverage-style operators (tau > 0 and maximum): the output is zero
  only when every surviving input is zero.
* Minimum and maximum are unweighted over the surviving experts, i.e.
  the limit over the support of the weight vector; with all-positive
  weights this is the plain unweighted min/max.

All values move in log domain; ``float('-inf')`` is exact zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DeadPrefixError
from .lmcore import Alphabet, SequenceModel, prefix_log_prob, string_log_prob
from .logtools import LOG_ZERO, logsumexp, safe_log

WEIGHT_TOL = 1e-12

_NAMED_TAU = {"harmonic": -1.0, "sum": 1.0, "quadratic": 2.0}


class ExpertPanel:
    """An ordered collection of sequence models sharing one alphabet."""

    def __init__(self, models: Sequence[SequenceModel]):
        models = tuple(models)
        if not models:
            raise ValueError("panel must contain at least one expert")
        alphabet = models[0].alphabet
        for m in models[1:]:
            if m.alphabet != alphabet:
                raise ValueError("experts must share one alphabet")
        self.models = models
        self.alphabet: Alphabet = alphabet

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def __getitem__(self, k) -> SequenceModel:
        return self.models[k]


@dataclass(frozen=True)
class CustomOperator:
    """A user-registered combination function on linear-domain values.

    ``fn`` maps the surviving experts' linear probabilities to a single
    nonnegative value. ``annihilative`` declares whether zero output on
    a prefix guarantees zero on all its extensions; it is reported by
    :func:`check_annihilative` and is False unless the author can prove
    it.
    """

    name: str
    fn: Callable[[np.ndarray], float]
    annihilative: bool = False


def _normalize_weights(weights) -> tuple[float, ...]:
    """Coerce to a point on the simplex.

    An integer K means K uniform weights. Any nonnegative, not-all-zero
    vector is rescaled to sum 1 (the normalized ensemble distribution is
    invariant to the overall weight scale; only the reported normalizer
    would change). Vectors already summing to 1 within 1e-12 pass
    through unchanged, so explicitly normalized weights stay bit-exact.
    """
    if isinstance(weights, (int, np.integer)):
        if weights < 1:
            raise ValueError("need at least one expert")
        return (1.0 / weights,) * int(weights)
    weights = tuple(float(w) for w in weights)
    if not weights:
        raise ValueError("need at least one weight")
    if any(w < 0.0 or not math.isfinite(w) for w in weights):
        raise ValueError("weights must be finite and nonnegative")
    total = math.fsum(weights)
    if not total > 0.0:
        raise ValueError("all weights are zero")
    if abs(total - 1.0) > WEIGHT_TOL:
        weights = tuple(w / total for w in weights)
    return weights


@dataclass(frozen=True)
class EnsembleSpec:
    """Operator (power tau / geometric / minimum / maximum / custom) plus weights."""

    kind: str
    weights: tuple[float, ...]
    tau: float | None = None
    custom: CustomOperator | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _normalize_weights(self.weights))
        if self.kind == "power":
            if self.tau is None or not math.isfinite(self.tau) or self.tau == 0.0:
                raise ValueError(
                    "power operator needs a finite nonzero tau "
                    "(use geometric / minimum / maximum for the limits)"
                )
        elif self.kind in ("geometric", "minimum", "maximum"):
            if self.tau is not None:
                raise ValueError(f"{self.kind} operator takes no tau")
        elif self.kind == "custom":
            if self.custom is None:
                raise ValueError("custom operator spec needs a CustomOperator")
        else:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    # -- constructors ---------------------------------------------------
    @classmethod
    def power(cls, tau: float, weights) -> "EnsembleSpec":
        return cls("power", _normalize_weights(weights), tau=float(tau))

    @classmethod
    def geometric(cls, weights) -> "EnsembleSpec":
        return cls("geometric", _normalize_weights(weights))

    @classmethod
    def minimum(cls, weights) -> "EnsembleSpec":
        return cls("minimum", _normalize_weights(weights))

    @classmethod
    def maximum(cls, weights) -> "EnsembleSpec":
        return cls("maximum", _normalize_weights(weights))

    @classmethod
    def from_name(cls, name: str, weights, tau: float | None = None) -> "EnsembleSpec":
        """Build from an operator name: minimum/min, maximum/max,
        geometric/product, sum, harmonic, quadratic, or power (with tau)."""
        name = name.lower()
        if name in ("minimum", "min"):
            return cls.minimum(weights)
        if name in ("maximum", "max"):
            return cls.maximum(weights)
        if name in ("geometric", "product"):
            return cls.geometric(weights)
        if name in _NAMED_TAU:
            return cls.power(_NAMED_TAU[name], weights)
        if name == "power":
            if tau is None:
                raise ValueError("power operator needs tau")
            return cls.power(tau, weights)
        raise ValueError(f"unknown operator name {name!r}")

    @property
    def k(self) -> int:
        return len(self.weights)

    def _active(self) -> np.ndarray:
        return np.asarray(self.weights) > 0.0

    # -- evaluation -----------------------------------------------------
    def combine(self, log_values) -> float:
        """Apply the operator to one vector of log-domain values."""
        return float(self.combine_columns(np.asarray(log_values, dtype=float)[:, None])[0])

    def combine_columns(self, log_matrix: np.ndarray) -> np.ndarray:
        """Apply the operator down each column of a (K, n) log-domain matrix."""
        log_matrix = np.asarray(log_matrix, dtype=float)
        if log_matrix.ndim != 2 or log_matrix.shape[0] != self.k:
            raise ValueError(f"expected a ({self.k}, n) matrix, got {log_matrix.shape}")
        if (log_matrix == np.inf).any() or np.isnan(log_matrix).any():
            raise ValueError("values must be finite or -inf in log domain")
        active = self._active()
        m = log_matrix[active]
        w = np.asarray(self.weights)[active]
        if self.kind == "minimum":
            return m.min(axis=0)
        if self.kind == "maximum":
            return m.max(axis=0)
        any_zero = np.isneginf(m).any(axis=0)
        if self.kind == "geometric":
            out = np.where(any_zero[None, :], 0.0, m).T @ w
            out[any_zero] = LOG_ZERO
            return out
        if self.kind == "custom":
            vals = np.exp(m)
            out = np.empty(m.shape[1])
            for j in range(m.shape[1]):
                y = float(self.custom.fn(vals[:, j]))
                if not y >= 0.0:
                    raise ValueError(
                        f"custom operator {self.custom.name!r} returned {y!r}; "
                        "potentials must be nonnegative"
                    )
                out[j] = safe_log(y)
            return out
        # power: shifted weighted log-sum-exp on tau * log-values.
        tau = self.tau
        if tau < 0.0:
            scaled = np.where(any_zero[None, :], 0.0, tau * m)
            out = logsumexp(scaled, b=w[:, None], axis=0) / tau
            out[any_zero] = LOG_ZERO
            return out
        with np.errstate(invalid="ignore"):
            out = logsumexp(tau * m, b=w[:, None], axis=0) / tau
        out[np.isneginf(m).all(axis=0)] = LOG_ZERO
        return out


def check_annihilative(spec: EnsembleSpec) -> tuple[bool, str]:
    """Whether zero potential on a prefix forces zero on all extensions.

    Returns ``(flag, case)`` where ``case`` names the argument that
    justifies the flag. Every generalized-mean operator is annihilative;
    custom operators report whatever they declared, so non-mean
    combinations (e.g. a contrastive difference) can be rejected or
    repaired via :func:`epsilon_shift` before sampling.
    """
    if spec.kind == "minimum":
        return True, "limit tau -> -inf: the minimum is 0 iff some input is 0"
    if spec.kind == "maximum":
        return True, "limit tau -> +inf: the maximum is 0 iff every input is 0"
    if spec.kind == "geometric":
        return True, "limit tau -> 0: the weighted product is 0 iff some input is 0"
    if spec.kind == "power":
        if spec.tau < 0.0:
            return True, "tau < 0: by the continuity convention, any zero input gives 0"
        return True, "tau > 0: the weighted power sum is 0 iff every input is 0"
    return spec.custom.annihilative, f"declared by custom operator {spec.custom.name!r}"


def is_consensus(spec: EnsembleSpec) -> bool:
    """True for operators that zero out whenever any expert does (tau <= 0)."""
    return spec.kind in ("minimum", "geometric") or (
        spec.kind == "power" and spec.tau is not None and spec.tau < 0.0
    )


def epsilon_shift(value: float, eps: float) -> float:
    """The additive repair |value| + eps making a potential strictly positive.

    Applied to shaping values so annihilated prefixes keep an escape
    route; the sampling target itself is never shifted.
    """
    if eps <= 0.0:
        raise ValueError("eps must be > 0")
    return abs(value) + eps


# -- potentials of a (spec, panel) pair --------------------------------


def log_string_potential(spec: EnsembleSpec, panel: ExpertPanel, x: str) -> float:
    """Unnormalized log target of a complete string."""
    return spec.combine([string_log_prob(m, x) for m in panel])


def log_prefix_potential(spec: EnsembleSpec, panel: ExpertPanel, x: str) -> float:
    """Operator applied to the experts' prefix probabilities (the shaping value)."""
    return spec.combine([prefix_log_prob(m, x) for m in panel])


def log_potential_columns(
    spec: EnsembleSpec,
    panel: ExpertPanel,
    x: str,
    expert_prefixes: Sequence[float] | None = None,
) -> np.ndarray:
    """Unnormalized one-step potentials after prefix ``x``.

    Entry ``a`` is the prefix potential of ``x + a``; the end-marker
    entry is the string potential of ``x`` itself. Dividing by the
    prefix potential of ``x`` gives the next-step shaping distribution
    (not necessarily normalized). ``expert_prefixes`` may pass
    precomputed per-expert prefix log probabilities at ``x``.
    """
    eos = panel.alphabet.eos_index
    if expert_prefixes is None:
        expert_prefixes = [prefix_log_prob(m, x) for m in panel]
    logmat = np.full((len(panel), eos + 1), LOG_ZERO)
    for k, m in enumerate(panel):
        if expert_prefixes[k] != LOG_ZERO:
            logmat[k] = expert_prefixes[k] + m.log_next(x)
    return spec.combine_columns(logmat)


def log_next_potentials(spec: EnsembleSpec, panel: ExpertPanel, x: str) -> np.ndarray:
    """Next-step shaping row at ``x``: potential columns over the prefix potential.

    Raises DeadPrefixError when the prefix potential of ``x`` is zero
    (the conditional row does not exist).
    """
    base = log_prefix_potential(spec, panel, x)
    if base == LOG_ZERO:
        raise DeadPrefixError(f"prefix {x!r} has zero potential under {spec.kind}")
    return log_potential_columns(spec, panel, x) - base
