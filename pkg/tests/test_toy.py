import numpy as np
import pytest
from numpy.testing import assert_allclose

from ensmc import (
    LOG_ZERO,
    Alphabet,
    NGramModel,
    PFSAModel,
    TableModel,
    UndefinedConditionalError,
    check_model,
    fit_ngram,
    load_corpus,
    string_log_prob,
)


class TestLoadCorpus:
    def test_blank_lines_are_empty_strings(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("ab\n\nb\n")
        assert load_corpus(p) == ["ab", "", "b"]


class TestTableModel:
    def test_rejects_defective_mass(self):
        with pytest.raises(ValueError):
            TableModel({"a": 0.5, "b": 0.5 - 1e-9})

    def test_rejects_negative_probability(self):
        with pytest.raises(ValueError):
            TableModel({"a": 1.5, "b": -0.5})

    def test_conditionals_are_exact_mass_ratios(self):
        model = TableModel({"a": 0.2, "ab": 0.3, "b": 0.5})
        row = model.log_next("a")
        # After "a": continue with "b" w.p. 0.3/0.5, stop w.p. 0.2/0.5.
        assert_allclose(np.exp(row[model.alphabet.index["b"]]), 0.6, rtol=1e-12)
        assert_allclose(np.exp(row[model.alphabet.eos_index]), 0.4, rtol=1e-12)

    def test_off_support_context_raises(self):
        model = TableModel({"a": 1.0}, alphabet=Alphabet("ab"))
        with pytest.raises(UndefinedConditionalError):
            model.log_next("b")

    def test_alphabet_derived_sorted(self):
        assert TableModel({"ba": 1.0}).alphabet.symbols == ("a", "b")

    def test_rows_normalized_everywhere(self, make_random_table):
        rng = np.random.default_rng(12)
        for _ in range(20):
            model = make_random_table(rng)
            check_model(model, ["", "a", "b", "aa", "ab", "ba", "bb"])


class TestNGramModel:
    def test_fit_counts_and_scores(self):
        """Unsmoothed bigram reproduces corpus conditional frequencies."""
        model = fit_ngram(["ab", "aa", "a"], order=2, smoothing=0.0)
        row = model.log_next("a")
        # Events after context "a": a once ("aa"), b once ("ab"), and
        # two stops ("aa" and "a" both end in this context).
        assert_allclose(np.exp(row[model.alphabet.index["a"]]), 0.25, rtol=1e-12)
        assert_allclose(np.exp(row[model.alphabet.index["b"]]), 0.25, rtol=1e-12)
        assert_allclose(np.exp(row[model.alphabet.eos_index]), 0.5, rtol=1e-12)

    def test_smoothing_gives_full_support(self):
        model = fit_ngram(["ab"], order=2, smoothing=0.5)
        assert string_log_prob(model, "bbba") > LOG_ZERO

    def test_unsmoothed_unseen_context_raises(self):
        model = fit_ngram(["aa"], order=2, smoothing=0.0, alphabet=Alphabet("ab"))
        with pytest.raises(UndefinedConditionalError):
            model.log_next("b")

    def test_context_key_is_last_order_minus_one(self):
        model = fit_ngram(["abab"], order=2, smoothing=0.1)
        assert_allclose(model.log_next("ab"), model.log_next("bbb" + "ab"[-1:]))

    def test_rows_normalized(self):
        model = fit_ngram(["ab", "ba", ""], order=3, smoothing=0.3)
        check_model(model, ["", "a", "ab", "ba", "bb", "abab"])

    def test_save_load_round_trip(self, tmp_path):
        """Persisted counts reload to bitwise-identical conditionals."""
        model = fit_ngram(["ab", "aab", "b"], order=2, smoothing=0.25)
        path = tmp_path / "model.tsv"
        model.save(path)
        back = NGramModel.load(path)
        assert back.alphabet == model.alphabet
        assert back.order == model.order and back.smoothing == model.smoothing
        for ctx in ("", "a", "b", "ab"):
            assert (back.log_next(ctx) == model.log_next(ctx)).all()

    def test_load_rejects_tampered_header(self, tmp_path):
        model = fit_ngram(["ab"], order=2, smoothing=0.1)
        path = tmp_path / "model.tsv"
        model.save(path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace("1", "9", 1)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            NGramModel.load(path)

    def test_bad_construction_rejected(self):
        with pytest.raises(ValueError):
            NGramModel(Alphabet("ab"), order=0, smoothing=0.1, counts={})
        with pytest.raises(ValueError):
            NGramModel(Alphabet("ab"), order=2, smoothing=-0.1, counts={})


class TestPFSAModel:
    def build(self):
        # Two states: s emits a and loops or stops; t only stops via b.
        return PFSAModel(
            Alphabet("ab"),
            start="s",
            transitions={
                "s": {"a": ("s", 0.5), "b": ("t", 0.25)},
                "t": {},
            },
            stops={"s": 0.25, "t": 1.0},
        )

    def test_path_products(self):
        model = self.build()
        # "aab": 0.5 * 0.5 * 0.25 * stop(t)=1.
        assert_allclose(np.exp(string_log_prob(model, "aab")), 0.0625, rtol=1e-12)
        assert_allclose(np.exp(string_log_prob(model, "")), 0.25, rtol=1e-12)

    def test_rows_normalized(self):
        check_model(self.build(), ["", "a", "ab", "aaab"])

    def test_dead_walk_raises(self):
        model = self.build()
        with pytest.raises(UndefinedConditionalError):
            model.log_next("b" + "a")  # t has no outgoing arcs

    def test_rejects_unnormalized_state(self):
        with pytest.raises(ValueError):
            PFSAModel(
                Alphabet("a"),
                start="s",
                transitions={"s": {"a": ("s", 0.5)}},
                stops={"s": 0.4},
            )

    def test_rejects_unreachable_state(self):
        with pytest.raises(ValueError):
            PFSAModel(
                Alphabet("a"),
                start="s",
                transitions={"s": {"a": ("s", 0.5)}, "u": {"a": ("u", 0.5)}},
                stops={"s": 0.5, "u": 0.5},
            )
