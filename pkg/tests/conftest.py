"""Shared fixtures: small hand-computed models whose ensemble targets
have closed forms, plus randomized-panel helpers."""
import math

import numpy as np
import pytest

from ensmc import Alphabet, EnsembleSpec, ExpertPanel, TableModel, Tokenizer, fit_ngram

# Two explicit tables over {a, b}; with the geometric operator the
# unnormalized target is sqrt(p1 * p2) per string.
GEO_P1 = {"": 0.2, "a": 0.5, "b": 0.3}
GEO_P2 = {"": 0.5, "a": 0.25, "b": 0.25}
GEO_Z = math.sqrt(0.1) + math.sqrt(0.125) + math.sqrt(0.075)
GEO_PROBS = {
    "": math.sqrt(0.1) / GEO_Z,
    "a": math.sqrt(0.125) / GEO_Z,
    "b": math.sqrt(0.075) / GEO_Z,
}

# Same tables under the minimum operator: min per string, Z = 0.2 + 0.25 + 0.25.
MIN_Z = 0.7
MIN_PROBS = {"": 0.2 / 0.7, "a": 0.25 / 0.7, "b": 0.25 / 0.7}

# Two experts agreeing on the first symbol but mirrored on the second;
# the global product differs from the step-local product by design:
# global {gc: 0.1875, gd: 0.1875, sd: 0.625}, local {0.25, 0.25, 0.5}.
MIS_P1 = {"gc": 0.45, "gd": 0.05, "sd": 0.5}
MIS_P2 = {"gc": 0.05, "gd": 0.45, "sd": 0.5}
MIS_PROBS = {"gc": 0.1875, "gd": 0.1875, "sd": 0.625}
MIS_LOCAL = {"gc": 0.25, "gd": 0.25, "sd": 0.5}


@pytest.fixture
def geo_panel():
    return ExpertPanel([TableModel(GEO_P1), TableModel(GEO_P2)])


@pytest.fixture
def geo_spec():
    return EnsembleSpec.geometric(2)


@pytest.fixture
def min_spec():
    return EnsembleSpec.minimum(2)


@pytest.fixture
def mis_panel():
    return ExpertPanel([TableModel(MIS_P1), TableModel(MIS_P2)])


@pytest.fixture
def bridge_fixture():
    """Ambiguous three-token decoder over bytes {a, b} plus a token model.

    Token C decodes to the same bytes as A then B, so every byte string
    containing "ab" has multiple tokenizations. The token model is a
    smoothed unigram fit on a tiny corpus, giving full support.
    """
    tokenizer = Tokenizer(Alphabet("ABC"), {"A": "a", "B": "b", "C": "ab"})
    token_model = fit_ngram(
        ["AB", "C", "A", "CCB", "BA"], order=1, smoothing=0.2,
        alphabet=tokenizer.token_alphabet,
    )
    return token_model, tokenizer


@pytest.fixture
def make_random_table():
    """Factory for random TableModels over a fixed alphabet.

    Draws a random subset of the candidate strings as support and
    normalizes positive random masses over it, so zeros in one model's
    support relative to another's occur routinely.
    """

    def build(rng: np.random.Generator, alphabet: str = "ab", max_len: int = 2,
              full_support: bool = False) -> TableModel:
        candidates = [""]
        frontier = [""]
        for _ in range(max_len):
            frontier = [x + s for x in frontier for s in alphabet]
            candidates.extend(frontier)
        if full_support:
            chosen = list(candidates)
        else:
            size = int(rng.integers(1, len(candidates) + 1))
            chosen = list(rng.choice(candidates, size=size, replace=False))
        masses = rng.random(len(chosen)) + 0.05
        masses /= masses.sum()
        return TableModel(
            {x: float(p) for x, p in zip(chosen, masses)},
            alphabet=Alphabet(alphabet),
        )

    return build


@pytest.fixture
def make_random_panel(make_random_table):
    """Factory for K-expert panels of random tables on a shared alphabet."""

    def build(rng: np.random.Generator, k: int = 2, alphabet: str = "ab",
              max_len: int = 2, full_support: bool = False) -> ExpertPanel:
        return ExpertPanel(
            [make_random_table(rng, alphabet, max_len, full_support) for _ in range(k)]
        )

    return build
