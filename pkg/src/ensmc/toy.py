"""Small exactly-computable sequence models used as ensemble experts.

Three families:

* ``TableModel`` — an explicit finite distribution over complete
  strings; conditionals come from exact suffix sums.
* ``NGramModel`` — an add-lambda smoothed character n-gram fit from a
  corpus (one string per line).
* ``PFSAModel`` — a deterministic probabilistic finite-state automaton;
  per-state stop mass becomes the end-marker probability.

"Prompting" a toy expert means fitting it on a different corpus (or
table); prompt-pair experiments simply use two differently-fit experts.
"""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .errors import UndefinedConditionalError
from .lmcore import EOS_KEY, Alphabet, SequenceModel
from .logtools import LOG_ZERO, log_row
from .textio import escape_field, unescape_field

NGRAM_MAGIC = "ensmc-ngram"
NGRAM_VERSION = 1

#: Normalization tolerance for explicit string tables.
TABLE_TOL = 1e-12


def load_corpus(path) -> list[str]:
    """Read a corpus file: one training string per line, newline stripped.

    Blank lines denote the empty string. No other interpretation is
    applied to the content.
    """
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


class TableModel(SequenceModel):
    """Distribution given by an explicit ``{string: probability}`` table.

    Entries must be nonnegative and sum to 1 within 1e-12. Conditionals
    are exact ratios of suffix sums; contexts off the support of any
    prefix raise UndefinedConditionalError.
    """

    def __init__(self, entries: dict, alphabet: Alphabet | None = None):
        if not entries:
            raise ValueError("table must have at least one entry")
        total = math.fsum(entries.values())
        if abs(total - 1.0) > TABLE_TOL:
            raise ValueError(f"table probabilities sum to {total!r}, not 1 within {TABLE_TOL}")
        for x, p in entries.items():
            if p < 0.0:
                raise ValueError(f"negative probability for {x!r}")
        if alphabet is None:
            chars = sorted({ch for x in entries for ch in x})
            if not chars:
                raise ValueError("cannot derive an alphabet from an empty-string-only table")
            alphabet = Alphabet(chars)
        for x in entries:
            alphabet.check_string(x)
        self.alphabet = alphabet
        self.entries = {x: float(p) for x, p in entries.items() if p > 0.0}
        # Exact prefix masses for every prefix of every supported string.
        self._prefix_mass: dict[str, float] = defaultdict(float)
        for x, p in self.entries.items():
            for t in range(len(x) + 1):
                self._prefix_mass[x[:t]] += p
        # Conditional rows, memoized per context (the table is fixed).
        self._row_memo: dict[str, np.ndarray] = {}

    def log_next(self, context: str) -> np.ndarray:
        memoized = self._row_memo.get(context)
        if memoized is not None:
            return memoized
        mass = self._prefix_mass.get(context, 0.0)
        if mass <= 0.0:
            raise UndefinedConditionalError(f"context {context!r} off the table support")
        row = np.empty(self.alphabet.size + 1)
        for i, s in enumerate(self.alphabet.symbols):
            row[i] = self._prefix_mass.get(context + s, 0.0) / mass
        row[self.alphabet.eos_index] = self.entries.get(context, 0.0) / mass
        out = log_row(row)
        self._row_memo[context] = out
        return out


class NGramModel(SequenceModel):
    """Add-lambda smoothed character n-gram model.

    The conditioning context is the last ``order - 1`` symbols; shorter
    prefixes near the string start condition on the whole prefix, which
    is equivalent to padding with a begin marker (the marker itself is
    internal bookkeeping and never appears in the alphabet). Events
    include the end marker, so with smoothing ``lam``:

        p(s | ctx) = (count(ctx, s) + lam) / (total(ctx) + lam * (|alphabet| + 1))

    With ``lam > 0`` every conditional is strictly positive, hence every
    string has positive prefix probability. With ``lam = 0`` an unseen
    context has no conditional and raises UndefinedConditionalError.
    """

    def __init__(self, alphabet: Alphabet, order: int, smoothing: float, counts: dict):
        if order < 1:
            raise ValueError("order must be >= 1")
        if smoothing < 0.0:
            raise ValueError("smoothing must be >= 0")
        self.alphabet = alphabet
        self.order = int(order)
        self.smoothing = float(smoothing)
        self._counts: dict[str, np.ndarray] = {}
        for ctx, vec in counts.items():
            alphabet.check_string(ctx)
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (alphabet.size + 1,) or (vec < 0).any():
                raise ValueError(f"bad count vector for context {ctx!r}")
            self._counts[ctx] = vec

    def _context_key(self, context: str) -> str:
        return context[-(self.order - 1):] if self.order > 1 else ""

    def log_next(self, context: str) -> np.ndarray:
        self.alphabet.check_string(context)
        vec = self._counts.get(self._context_key(context))
        if vec is None:
            vec = np.zeros(self.alphabet.size + 1)
        total = vec.sum() + self.smoothing * (self.alphabet.size + 1)
        if total <= 0.0:
            raise UndefinedConditionalError(
                f"unsmoothed n-gram has no events for context {context!r}"
            )
        return log_row((vec + self.smoothing) / total)

    def save(self, path) -> None:
        """Write the versioned plain-text serialization (header + count table)."""
        lines = [
            f"{NGRAM_MAGIC}\t{NGRAM_VERSION}",
            f"order\t{self.order}",
            f"smoothing\t{self.smoothing!r}",
            f"alphabet\t{escape_field(''.join(self.alphabet.symbols))}",
        ]
        rows = []
        for ctx in sorted(self._counts):
            vec = self._counts[ctx]
            for i, s in enumerate(self.alphabet.symbols):
                if vec[i]:
                    rows.append((ctx, s, int(vec[i])))
            if vec[self.alphabet.eos_index]:
                rows.append((ctx, EOS_KEY, int(vec[self.alphabet.eos_index])))
        lines.append(f"counts\t{len(rows)}")
        for ctx, sym, c in rows:
            key = sym if sym == EOS_KEY else escape_field(sym)
            lines.append(f"{escape_field(ctx)}\t{key}\t{c}")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "NGramModel":
        """Read a file written by :meth:`save`."""
        with open(path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
        try:
            magic, version = lines[0].split("\t")
            if magic != NGRAM_MAGIC or int(version) != NGRAM_VERSION:
                raise ValueError
            _, order = lines[1].split("\t")
            _, smoothing = lines[2].split("\t")
            _, alpha = lines[3].split("\t")
            _, n_rows = lines[4].split("\t")
        except (IndexError, ValueError):
            raise ValueError(f"{path}: not a {NGRAM_MAGIC} v{NGRAM_VERSION} file")
        alphabet = Alphabet(unescape_field(alpha))
        counts: dict[str, np.ndarray] = {}
        body = lines[5 : 5 + int(n_rows)]
        if len(body) != int(n_rows):
            raise ValueError(f"{path}: truncated count table")
        for line in body:
            ctx_f, sym_f, c = line.split("\t")
            ctx = unescape_field(ctx_f)
            vec = counts.setdefault(ctx, np.zeros(alphabet.size + 1))
            if sym_f == EOS_KEY:
                vec[alphabet.eos_index] += int(c)
            else:
                vec[alphabet.index[unescape_field(sym_f)]] += int(c)
        return cls(alphabet, int(order), float(smoothing), counts)


def fit_ngram(
    corpus: Sequence[str],
    order: int,
    smoothing: float,
    alphabet: Alphabet | None = None,
) -> NGramModel:
    """Count-and-normalize an :class:`NGramModel` from training strings."""
    if alphabet is None:
        chars = sorted({ch for x in corpus for ch in x})
        if not chars:
            raise ValueError("cannot derive an alphabet from an empty corpus")
        alphabet = Alphabet(chars)
    counts: dict[str, np.ndarray] = {}

    def bump(ctx: str, idx: int) -> None:
        vec = counts.setdefault(ctx, np.zeros(alphabet.size + 1))
        vec[idx] += 1

    key_len = order - 1
    for x in corpus:
        alphabet.check_string(x)
        for t, ch in enumerate(x):
            ctx = x[:t][-key_len:] if key_len else ""
            bump(ctx, alphabet.index[ch])
        ctx = x[-key_len:] if key_len else ""
        bump(ctx, alphabet.eos_index)
    return NGramModel(alphabet, order, smoothing, counts)


class PFSAModel(SequenceModel):
    """Deterministic probabilistic finite-state automaton.

    ``transitions[state][symbol] = (next_state, probability)`` and
    ``stops[state]`` is the stop mass, which becomes the end-marker
    probability. Per state, stop plus outgoing mass must equal 1 within
    1e-9, and every state must be reachable from the start state.
    """

    def __init__(self, alphabet: Alphabet, start, transitions: dict, stops: dict):
        self.alphabet = alphabet
        self.start = start
        self.transitions = {
            state: dict(arcs) for state, arcs in transitions.items()
        }
        self.stops = dict(stops)
        states = set(self.transitions) | set(self.stops)
        for state in states:
            arcs = self.transitions.get(state, {})
            stop = self.stops.get(state, 0.0)
            if stop < 0.0 or any(p < 0.0 for _, p in arcs.values()):
                raise ValueError(f"negative probability at state {state!r}")
            for sym, (nxt, _) in arcs.items():
                if sym not in alphabet:
                    raise ValueError(f"arc symbol {sym!r} not in alphabet")
                if nxt not in states:
                    raise ValueError(f"arc target {nxt!r} is not a state")
            total = stop + math.fsum(p for _, p in arcs.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"state {state!r} mass sums to {total!r}, not 1")
        if start not in states:
            raise ValueError(f"start state {start!r} unknown")
        seen = {start}
        queue = [start]
        while queue:
            state = queue.pop()
            for nxt, p in self.transitions.get(state, {}).values():
                if p > 0.0 and nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        if seen != states:
            raise ValueError(f"unreachable states: {sorted(states - seen, key=repr)}")

    def _state_at(self, context: str):
        state = self.start
        for ch in context:
            arc = self.transitions.get(state, {}).get(ch)
            if arc is None or arc[1] <= 0.0:
                return None
            state = arc[0]
        return state

    def log_next(self, context: str) -> np.ndarray:
        self.alphabet.check_string(context)
        state = self._state_at(context)
        if state is None:
            raise UndefinedConditionalError(f"context {context!r} leaves the automaton")
        row = np.zeros(self.alphabet.size + 1)
        for sym, (_, p) in self.transitions.get(state, {}).items():
            row[self.alphabet.index[sym]] = p
        row[self.alphabet.eos_index] = self.stops.get(state, 0.0)
        return log_row(row)
