"""Exact reference computations for desk-scale fixtures.

Everything here is brute force on purpose: exhaustive depth-first
enumeration of the ensemble target over all strings up to a length
horizon, exact accuracy and divergence evaluation on the resulting
table, and a derivative-free direct search for divergence minimization
over the simplex. These routines are the ground truth the samplers are
tested against, so they share no code path with the samplers beyond the
operator definition itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ensemble import EnsembleSpec, ExpertPanel, is_consensus
from .errors import EnumerationBudgetError
from .lmcore import Alphabet, SequenceModel
from .logtools import LOG_ZERO, logsumexp
from .textio import escape_field, unescape_field
from .toy import TableModel

TABLE_MAGIC = "ensmc-table"
TABLE_VERSION = 1

#: Default enumeration budget; exceeding it is a refusal, not an attempt.
DEFAULT_ALPHABET_CAP = 6
DEFAULT_LEN_CAP = 10
DEFAULT_NODE_CAP = 500_000


@dataclass(frozen=True)
class ExactTable:
    """Exhaustive unnormalized target over strings up to ``max_len``.

    ``strings`` is sorted; ``log_values`` aligns with it;
    ``log_residual_bound`` upper-bounds the log mass of strings longer
    than the horizon (``-inf`` when the support is proven complete,
    ``+inf`` when no sound bound exists, e.g. custom operators).
    """

    alphabet: Alphabet
    max_len: int
    strings: tuple[str, ...]
    log_values: np.ndarray
    log_z: float
    log_residual_bound: float
    operator: str
    weights: tuple[float, ...]
    nodes_visited: int

    @property
    def is_complete(self) -> bool:
        return self.log_residual_bound == LOG_ZERO

    def log_value(self, x: str) -> float:
        """Unnormalized log target of a complete string within the horizon."""
        if len(x) > self.max_len:
            raise EnumerationBudgetError(f"{x!r} is beyond the horizon {self.max_len}")
        try:
            return float(self.log_values[self.strings.index(x)])
        except ValueError:
            return LOG_ZERO

    def log_prefix_target(self, x: str) -> float:
        """Log of the summed target mass over supported strings extending ``x``."""
        if len(x) > self.max_len:
            raise EnumerationBudgetError(f"{x!r} is beyond the horizon {self.max_len}")
        mask = np.array([s.startswith(x) for s in self.strings])
        if not mask.any():
            return LOG_ZERO
        return float(logsumexp(self.log_values[mask]))

    def probs(self) -> dict[str, float]:
        """The normalized distribution as a ``{string: probability}`` dict."""
        return {
            s: math.exp(lv - self.log_z) for s, lv in zip(self.strings, self.log_values)
        }

    def expected_accuracy(self, predicate: Callable[[str], bool]) -> float:
        """Probability mass of strings satisfying the predicate."""
        mask = np.array([bool(predicate(s)) for s in self.strings])
        if not mask.any():
            return 0.0
        return math.exp(float(logsumexp(self.log_values[mask])) - self.log_z)

    def to_model(self) -> TableModel:
        """The normalized distribution as an explicit-table sequence model."""
        return TableModel(self.probs(), alphabet=self.alphabet)


def _operator_label(spec: EnsembleSpec) -> str:
    if spec.kind == "power":
        return f"power(tau={spec.tau!r})"
    if spec.kind == "custom":
        return f"custom({spec.custom.name})"
    return spec.kind


def enumerate_ensemble(
    spec: EnsembleSpec,
    panel: ExpertPanel,
    max_len: int,
    max_nodes: int = DEFAULT_NODE_CAP,
    alphabet_cap: int = DEFAULT_ALPHABET_CAP,
    len_cap: int = DEFAULT_LEN_CAP,
) -> ExactTable:
    """Exhaustive DFS over all strings up to ``max_len``.

    Pruning is only applied where sound: a subtree is dropped when every
    surviving expert has zero prefix mass (all operators except custom),
    or when a consensus operator already annihilated the prefix.

    The residual bound over the frontier (prefixes one symbol beyond the
    horizon) uses the operator applied to the experts' prefix masses for
    tau <= 1 — power means are concave and positively homogeneous there,
    hence superadditive, which makes that a sound per-subtree upper
    bound. For tau > 1 and maximum that bound is not sound (the operator
    is subadditive), so the conservative sum of surviving experts'
    prefix masses is used instead. Custom operators get ``+inf`` unless
    the frontier is provably empty.

    Exceeding any budget raises EnumerationBudgetError before partial
    results are returned.
    """
    alphabet = panel.alphabet
    if alphabet.size > alphabet_cap:
        raise EnumerationBudgetError(
            f"alphabet size {alphabet.size} exceeds the cap {alphabet_cap}"
        )
    if max_len > len_cap:
        raise EnumerationBudgetError(f"max_len {max_len} exceeds the cap {len_cap}")
    if max_len < 0:
        raise ValueError("max_len must be >= 0")

    eos = alphabet.eos_index
    k = len(panel)
    active = np.asarray(spec.weights) > 0.0
    consensus = is_consensus(spec)
    custom = spec.kind == "custom"
    custom_floor = None
    if custom:
        custom_floor = float(spec.custom.fn(np.zeros(int(active.sum()))))

    entries: dict[str, float] = {}
    residual_terms: list[float] = []
    residual_unknown = False
    nodes = 0

    def visit(x: str, prefixes: np.ndarray) -> None:
        nonlocal nodes, residual_unknown
        nodes += 1
        if nodes > max_nodes:
            raise EnumerationBudgetError(f"enumeration exceeded {max_nodes} nodes")
        logmat = np.full((k, eos + 1), LOG_ZERO)
        for i, model in enumerate(panel):
            if prefixes[i] != LOG_ZERO:
                logmat[i] = prefixes[i] + model.log_next(x)
        cols = spec.combine_columns(logmat)
        if cols[eos] != LOG_ZERO:
            entries[x] = float(cols[eos])
        for j, sym in enumerate(alphabet.symbols):
            child = logmat[:, j]
            child_dead = np.isneginf(child[active]).all()
            if child_dead and not (custom and custom_floor > 0.0):
                continue
            if consensus and cols[j] == LOG_ZERO:
                continue
            if len(x) < max_len:
                visit(x + sym, child)
            elif custom:
                residual_unknown = True
            elif spec.kind == "maximum" or (spec.kind == "power" and spec.tau > 1.0):
                residual_terms.append(float(logsumexp(child[active])))
            else:
                residual_terms.append(float(cols[j]))

    visit("", np.zeros(k))

    strings = tuple(sorted(entries))
    log_values = np.array([entries[s] for s in strings])
    if not strings:
        raise EnumerationBudgetError(
            "target has no support within the horizon; nothing to normalize"
        )
    log_z = float(logsumexp(log_values))
    if residual_unknown:
        log_residual = math.inf
    elif residual_terms:
        log_residual = float(logsumexp(np.array(residual_terms)))
    else:
        log_residual = LOG_ZERO
    return ExactTable(
        alphabet=alphabet,
        max_len=max_len,
        strings=strings,
        log_values=log_values,
        log_z=log_z,
        log_residual_bound=log_residual,
        operator=_operator_label(spec),
        weights=spec.weights,
        nodes_visited=nodes,
    )


def model_log_probs(
    model: SequenceModel, max_len: int, max_nodes: int = DEFAULT_NODE_CAP
) -> dict[str, float]:
    """Complete-string log probabilities of one model up to ``max_len``."""
    alphabet = model.alphabet
    eos = alphabet.eos_index
    out: dict[str, float] = {}
    nodes = 0

    def visit(x: str, log_prefix: float) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > max_nodes:
            raise EnumerationBudgetError(f"enumeration exceeded {max_nodes} nodes")
        row = model.log_next(x)
        if log_prefix + row[eos] != LOG_ZERO:
            out[x] = log_prefix + row[eos]
        if len(x) < max_len:
            for j, sym in enumerate(alphabet.symbols):
                if row[j] != LOG_ZERO:
                    visit(x + sym, log_prefix + row[j])

    visit("", 0.0)
    return out


# -- table file format --------------------------------------------------


def dump_table(table: ExactTable, path) -> None:
    """Write the sorted ``string TAB log-value`` dump with its header."""
    lines = [
        f"{TABLE_MAGIC}\t{TABLE_VERSION}",
        f"operator\t{table.operator}",
        "weights\t" + "\t".join(repr(w) for w in table.weights),
        f"alphabet\t{escape_field(''.join(table.alphabet.symbols))}",
        f"max_len\t{table.max_len}",
        f"log_residual_bound\t{table.log_residual_bound!r}",
        f"entries\t{len(table.strings)}",
    ]
    for s, lv in zip(table.strings, table.log_values):
        lines.append(f"{escape_field(s)}\t{float(lv)!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_table(path) -> ExactTable:
    """Read a file written by :func:`dump_table`; the normalizer is recomputed."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    try:
        magic, version = lines[0].split("\t")
        if magic != TABLE_MAGIC or int(version) != TABLE_VERSION:
            raise ValueError
        header = dict(line.split("\t", 1) for line in lines[1:7])
        operator = header["operator"]
        weights = tuple(float(w) for w in header["weights"].split("\t"))
        alphabet = Alphabet(unescape_field(header["alphabet"]))
        max_len = int(header["max_len"])
        log_residual = float(header["log_residual_bound"])
        n = int(header["entries"])
    except (IndexError, KeyError, ValueError):
        raise ValueError(f"{path}: not a {TABLE_MAGIC} v{TABLE_VERSION} file")
    body = lines[7 : 7 + n]
    if len(body) != n:
        raise ValueError(f"{path}: truncated table")
    pairs = []
    for line in body:
        field, lv = line.split("\t")
        pairs.append((unescape_field(field), float(lv)))
    pairs.sort(key=lambda kv: kv[0])
    strings = tuple(s for s, _ in pairs)
    log_values = np.array([lv for _, lv in pairs])
    return ExactTable(
        alphabet=alphabet,
        max_len=max_len,
        strings=strings,
        log_values=log_values,
        log_z=float(logsumexp(log_values)),
        log_residual_bound=log_residual,
        operator=operator,
        weights=weights,
        nodes_visited=0,
    )


# -- exact divergences --------------------------------------------------


def _check_common_support(q: dict, p: dict) -> list:
    if set(q) != set(p):
        raise ValueError("distributions must be given on a common support")
    return sorted(q)


def kl_divergence(q: dict[str, float], p: dict[str, float]) -> float:
    """KL(q || p) over an explicit common support; 0 log 0 = 0."""
    total = 0.0
    for x in _check_common_support(q, p):
        if q[x] == 0.0:
            continue
        if p[x] == 0.0:
            return math.inf
        total += q[x] * math.log(q[x] / p[x])
    return total


def total_variation(q: dict[str, float], p: dict[str, float]) -> float:
    """Total variation distance between two explicit distributions."""
    keys = set(q) | set(p)
    return 0.5 * math.fsum(abs(q.get(x, 0.0) - p.get(x, 0.0)) for x in keys)


def _power_term(q: float, p: float, alpha: float) -> float:
    """q^alpha * p^(1-alpha) with the 0-and-infinity conventions spelled out."""
    if q == 0.0 and p == 0.0:
        return 0.0
    if q == 0.0:
        return 0.0 if alpha > 0.0 else math.inf
    if p == 0.0:
        return 0.0 if alpha < 1.0 else math.inf
    return math.exp(alpha * math.log(q) + (1.0 - alpha) * math.log(p))


def alpha_divergence(q: dict[str, float], p: dict[str, float], alpha: float) -> float:
    """The alpha-divergence D_alpha(q || p) on a common support.

    D_alpha = (1 - sum_x q^alpha p^(1-alpha)) / (alpha (1 - alpha)); the
    removable singularities alpha = 1 and alpha = 0 are the KL limits
    KL(q||p) and KL(p||q) respectively.
    """
    if alpha == 1.0:
        return kl_divergence(q, p)
    if alpha == 0.0:
        return kl_divergence(p, q)
    keys = _check_common_support(q, p)
    s = math.fsum(_power_term(q[x], p[x], alpha) for x in keys)
    if math.isinf(s):
        return math.inf
    return (1.0 - s) / (alpha * (1.0 - alpha))


# -- divergence minimization over the simplex ---------------------------


def _alpha_divergence_arrays(q: np.ndarray, p: np.ndarray, alpha: float) -> float:
    if alpha == 1.0 or alpha == 0.0:
        a, b = (q, p) if alpha == 1.0 else (p, q)
        total = 0.0
        for ai, bi in zip(a, b):
            if ai == 0.0:
                continue
            if bi == 0.0:
                return math.inf
            total += ai * math.log(ai / bi)
        return total
    s = 0.0
    for qi, pi in zip(q, p):
        t = _power_term(float(qi), float(pi), alpha)
        if math.isinf(t):
            return math.inf
        s += t
    return (1.0 - s) / (alpha * (1.0 - alpha))


def _alpha_objective(q: np.ndarray, experts: np.ndarray, weights: np.ndarray, alpha: float) -> float:
    total = 0.0
    for w, p in zip(weights, experts):
        if w == 0.0:
            continue
        d = _alpha_divergence_arrays(q, p, alpha)
        if math.isinf(d):
            return math.inf
        total += w * d
    return total


def minimize_divergence_simplex(
    experts: np.ndarray,
    weights: Sequence[float],
    alpha: float,
    step0: float = 0.25,
    step_min: float = 1e-7,
    max_sweeps: int = 200_000,
) -> np.ndarray:
    """Minimize the weighted alpha-divergence to K atoms over the simplex.

    Direct search with shrinking pairwise mass transfers: starting from
    the uniform distribution, repeatedly try moving ``step`` mass
    between every ordered pair of atoms, keep strict improvements, and
    halve the step when a sweep makes no progress. The transfer
    directions positively span the simplex tangent and the objective is
    convex in the distribution, so the search converges to the global
    minimizer without ever consulting the closed form.
    """
    experts = np.asarray(experts, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _, n = experts.shape
    q = np.full(n, 1.0 / n)
    best = _alpha_objective(q, experts, weights, alpha)
    step = step0
    for _ in range(max_sweeps):
        improved = False
        for i in range(n):
            for j in range(n):
                # Re-checked per transfer: an accepted move inside this
                # loop replaces q and may have drained coordinate i.
                if i == j or q[i] < step:
                    continue
                trial = q.copy()
                trial[i] -= step
                trial[j] += step
                val = _alpha_objective(trial, experts, weights, alpha)
                if val < best:
                    q, best = trial, val
                    improved = True
        if not improved:
            step *= 0.5
            if step < step_min:
                break
    return q
