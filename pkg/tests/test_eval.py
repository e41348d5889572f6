import math
import warnings

import numpy as np
import pytest

from nagcrf.eval import (MetricReport, bleu, bleu_score, lcs_length, rep_n, rep_n_corpus, rouge_l,
                            rouge_n, score_outputs, token_kept_f1)

from naive_metrics import (naive_bleu, naive_lcs, naive_rep, naive_rouge_l, naive_rouge_n,
                           random_seqs)


class TestTwoImplementationOracle:
    def test_rouge_and_rep(self):
        for c, r in random_seqs(np.random.default_rng(0)):
            for n in (1, 2, 3):
                assert abs(rouge_n(c, r, n) - naive_rouge_n(c, r, n)) < 1e-9
                assert abs(rep_n(c, n) - naive_rep(c, n)) < 1e-9
            assert lcs_length(c, r) == naive_lcs(tuple(c), tuple(r))
            assert abs(rouge_l(c, r) - naive_rouge_l(c, r)) < 1e-9

    def test_bleu(self):
        rng = np.random.default_rng(1)
        pairs = list(random_seqs(rng))
        for s in range(0, 200, 10):
            cands = [c for c, _ in pairs[s:s + 10]]
            refs = [r for _, r in pairs[s:s + 10]]
            assert abs(bleu_score(cands, refs) - naive_bleu(cands, refs)) < 1e-9
        for c, r in pairs:
            assert abs(bleu_score([c], [r]) - naive_bleu([c], [r])) < 1e-9


class TestRep:
    def test_hand_cases(self):
        assert rep_n("a b c".split(), 1) == 0.0
        assert rep_n("a a b".split(), 1) == pytest.approx(100 / 3, abs=1e-3)
        assert rep_n("a b a b".split(), 2) == pytest.approx(100 / 3, abs=1e-3)

    def test_short_sequence(self):
        assert rep_n(["a"], 2) == 0.0 and rep_n([], 1) == 0.0

    def test_bad_n(self):
        with pytest.raises(ValueError):
            rep_n(["a"], 0)

    def test_corpus_mean(self):
        assert rep_n_corpus([["a", "a"], ["a", "b"]], 1) == pytest.approx(25.0)


class TestRouge:
    def test_identical_and_disjoint(self):
        assert rouge_n(list("abc"), list("abc"), 2) == 100.0
        assert rouge_n(list("abc"), list("xyz"), 1) == 0.0

    def test_hand_unigram(self):
        assert rouge_n("a b c".split(), "a c d".split(), 1) == pytest.approx(66.667, abs=1e-3)

    def test_empty_candidate(self):
        assert rouge_n([], ["a"], 1) == 0.0 and rouge_l([], ["a"]) == 0.0

    def test_rouge_l_hand(self):
        assert rouge_l("a b c".split(), "a c".split()) == pytest.approx(80.0)
        assert rouge_l(list("abc"), list("abc")) == 100.0


class TestTokenKeptF1:
    def test_identical(self):
        assert token_kept_f1(["a", "c"], ["a", "c"], list("abcd")) == 100.0

    def test_keeps_nothing(self):
        assert token_kept_f1([], ["a"], list("abcd")) == 0.0

    def test_hand_case(self):
        assert token_kept_f1(["a", "b"], ["a", "c"], list("abcd")) == pytest.approx(50.0)

    def test_repeated_source_tokens_are_position_aligned(self):
        # candidate keeps the first "a", reference the second: aligned leftmost, both map to index 0
        assert token_kept_f1(["a", "b"], ["a", "b"], list("aab")) == 100.0
        assert token_kept_f1(["a", "a"], ["a"], list("aba")) == pytest.approx(200 / 3)

    def test_non_subsequence_falls_back_with_warning(self):
        with pytest.warns(UserWarning):
            score = token_kept_f1(["c", "a"], ["a", "c"], list("abc"))
        assert score == 100.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            token_kept_f1(["c", "a"], ["a", "c"], list("abc"), warn=False)


class TestBleu:
    def test_identical(self):
        c = [list("abcde"), list("fghij")]
        assert bleu_score(c, c) == pytest.approx(100.0)

    def test_disjoint(self):
        assert bleu_score([list("abcde")], [list("vwxyz")]) < 1.0

    def test_hand_transcript(self):
        cand, ref = "the cat sat on the mat".split(), "the cat is on the mat".split()
        # 1-grams: the,cat,sat,on,the,mat vs the,cat,is,on,the,mat -> 5/6
        # 2-grams: the cat | cat sat | sat on | on the | the mat -> 3/5
        # 3-grams: the cat sat | cat sat on | sat on the | on the mat -> 1/4
        # 4-grams: none of 3 match -> 1e-9/3
        want = 100.0 * math.exp((math.log(5 / 6) + math.log(3 / 5) + math.log(1 / 4) + math.log(1e-9 / 3)) / 4)
        score, info = bleu([cand], [ref])
        assert score == pytest.approx(want, rel=1e-12)
        assert info["precisions"][:3] == pytest.approx([5 / 6, 3 / 5, 1 / 4])
        assert info["bp"] == 1.0

    def test_brevity_penalty(self):
        score, info = bleu([list("ab")], [list("abcd")], max_n=2)
        assert info["bp"] == pytest.approx(math.exp(1 - 2))
        assert score == pytest.approx(100 * math.exp(-1))

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [])


class TestReport:
    def test_score_outputs_ranges(self):
        rng = np.random.default_rng(3)
        pairs = list(random_seqs(rng, 30))
        rep = score_outputs([c for c, _ in pairs], [r for _, r in pairs], label="x")
        for v in (rep.rouge1, rep.rouge2, rep.rougeL, rep.token_kept_f1, rep.bleu, *rep.rep_n.values()):
            assert 0.0 <= v <= 100.0
        assert rep.n_examples == 30

    def test_perfect(self):
        refs = [list("abc"), list("de")]
        rep = score_outputs(refs, refs, [list("abcx"), list("dex")])
        assert rep.rouge1 == rep.rougeL == rep.token_kept_f1 == 100.0

    def test_text_and_tsv(self):
        rep = MetricReport(1.0, 2.0, 3.0, 4.0, 5.0, {1: 0.0, 2: 1.5}, 10.0, 9.0, None, 2, "run")
        text = rep.to_text()
        assert "rouge1: 1.0000" in text and "speedup_vs_baseline: -" in text
        assert all(": " in line for line in text.splitlines())
        assert len(rep.tsv_row().split("\t")) == len(rep.tsv_header().split("\t"))
