"""Sequence metrics (ROUGE-1/2/L, token-kept F1, BLEU, rep-n) and the
single-example latency benchmark.

All scores are percentages in [0, 100]. Inputs are token lists.
"""

from __future__ import annotations

import math
import statistics
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

BLEU_EPS = 1e-9


def ngrams(tokens, n: int) -> list[tuple]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def rep_n(tokens, n: int) -> float:
    """Share of duplicate n-grams, ``100 * (1 - unique / total)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    grams = ngrams(list(tokens), n)
    if not grams:
        return 0.0
    return 100.0 * (1.0 - len(set(grams)) / len(grams))


def rep_n_corpus(outputs, n: int) -> float:
    outputs = list(outputs)
    return float(np.mean([rep_n(o, n) for o in outputs])) if outputs else 0.0


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 100.0 * 2 * p * r / (p + r)


def rouge_n(candidate, reference, n: int) -> float:
    """Balanced F-measure of clipped n-gram overlap."""
    c, r = Counter(ngrams(list(candidate), n)), Counter(ngrams(list(reference), n))
    if not c and not r:
        return 100.0
    return _f1(sum((c & r).values()), sum(c.values()), sum(r.values()))


def lcs_length(a, b) -> int:
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    candidate, reference = list(candidate), list(reference)
    if not candidate and not reference:
        return 100.0
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def _kept_positions(kept, source):
    """Leftmost alignment of ``kept`` as a subsequence of ``source``; None if impossible."""
    pos, j = [], 0
    for tok in kept:
        while j < len(source) and source[j] != tok:
            j += 1
        if j == len(source):
            return None
        pos.append(j)
        j += 1
    return pos


def token_kept_f1(candidate, reference, source, warn: bool = True) -> float:
    """F1 between the source positions kept by candidate and reference.

    Both are aligned to the source leftmost-first; when either is not a
    subsequence of the source the score falls back to token multisets.
    """
    candidate, reference, source = list(candidate), list(reference), list(source)
    if not candidate and not reference:
        return 100.0
    cp, rp = _kept_positions(candidate, source), _kept_positions(reference, source)
    if cp is None or rp is None:
        if warn:
            warnings.warn("compression output is not a subsequence of the source; "
                          "using token multisets", stacklevel=2)
        overlap = sum((Counter(candidate) & Counter(reference)).values())
    else:
        overlap = len(set(cp) & set(rp))
    return _f1(overlap, len(candidate), len(reference))


def bleu(candidates, references, max_n: int = 4) -> tuple[float, dict]:
    """Corpus BLEU with a standard brevity penalty.

    Zero match counts are replaced by ``1e-9``. Orders for which the
    candidate corpus has no n-grams at all are left out of the geometric mean.
    """
    candidates, references = [list(c) for c in candidates], [list(r) for r in references]
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    for c, r in zip(candidates, references):
        for n in range(1, max_n + 1):
            cg, rg = Counter(ngrams(c, n)), Counter(ngrams(r, n))
            matches[n - 1] += sum((cg & rg).values())
            totals[n - 1] += sum(cg.values())
    c_len = sum(len(c) for c in candidates)
    r_len = sum(len(r) for r in references)
    orders = [n for n in range(max_n) if totals[n] > 0]
    precisions = [max(matches[n], BLEU_EPS) / totals[n] if totals[n] else 0.0 for n in range(max_n)]
    if not orders:
        score = 100.0 if r_len == 0 else 0.0
        return score, {"precisions": precisions, "bp": 0.0, "c_len": c_len, "r_len": r_len}
    log_p = sum(math.log(precisions[n]) for n in orders) / len(orders)
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    score = 100.0 * bp * math.exp(log_p)
    return score, {"precisions": precisions, "bp": bp, "c_len": c_len, "r_len": r_len}


def bleu_score(candidates, references, max_n: int = 4) -> float:
    return bleu(candidates, references, max_n)[0]


@dataclass
class MetricReport:
    rouge1: float
    rouge2: float
    rougeL: float
    token_kept_f1: float
    bleu: float
    rep_n: dict = field(default_factory=dict)
    mean_latency_ns: float = 0.0
    median_latency_ns: float = 0.0
    speedup_vs_baseline: float | None = None
    n_examples: int = 0
    label: str = ""

    FIELDS = ("label", "n_examples", "rouge1", "rouge2", "rougeL", "token_kept_f1", "bleu",
              "rep_1", "rep_2", "rep_3", "rep_4", "mean_latency_ns", "median_latency_ns",
              "speedup_vs_baseline")

    def _values(self) -> dict:
        vals = {
            "label": self.label, "n_examples": self.n_examples,
            "rouge1": self.rouge1, "rouge2": self.rouge2, "rougeL": self.rougeL,
            "token_kept_f1": self.token_kept_f1, "bleu": self.bleu,
            "mean_latency_ns": self.mean_latency_ns, "median_latency_ns": self.median_latency_ns,
            "speedup_vs_baseline": self.speedup_vs_baseline,
        }
        for n in range(1, 5):
            vals[f"rep_{n}"] = self.rep_n.get(n, 0.0)
        return vals

    def to_text(self) -> str:
        lines = []
        for k, v in self._values().items():
            lines.append(f"{k}: {_fmt(v)}")
        return "\n".join(lines) + "\n"

    def tsv_header(self) -> str:
        return "\t".join(self.FIELDS)

    def tsv_row(self) -> str:
        vals = self._values()
        return "\t".join(_fmt(vals[k]) for k in self.FIELDS)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def score_outputs(outputs, references, sources=None, label: str = "") -> MetricReport:
    """Corpus-level metrics (ROUGE and F1 averaged per example, BLEU pooled)."""
    outputs, references = [list(o) for o in outputs], [list(r) for r in references]
    n = len(outputs)
    if n == 0:
        return MetricReport(0.0, 0.0, 0.0, 0.0, 0.0, {i: 0.0 for i in range(1, 5)}, label=label)
    if sources is None:
        f1 = [rouge_n(o, r, 1) for o, r in zip(outputs, references)]
    else:
        f1 = [token_kept_f1(o, r, s, warn=False) for o, r, s in zip(outputs, references, sources)]
    return MetricReport(
        rouge1=float(np.mean([rouge_n(o, r, 1) for o, r in zip(outputs, references)])),
        rouge2=float(np.mean([rouge_n(o, r, 2) for o, r in zip(outputs, references)])),
        rougeL=float(np.mean([rouge_l(o, r) for o, r in zip(outputs, references)])),
        token_kept_f1=float(np.mean(f1)),
        bleu=bleu_score(outputs, references),
        rep_n={i: rep_n_corpus(outputs, i) for i in range(1, 5)},
        n_examples=n,
        label=label,
    )


def benchmark(model, pairs, configs, labels=None, repeats: int = 1, warmup: int = 3,
              baseline_latency_ns: float | None = None,
              include_encoding: bool = True) -> list[MetricReport]:
    """Decode every example on its own, one config at a time, and report
    metrics plus latency.

    Speedups are relative to the first config, or to ``baseline_latency_ns``
    when given. With ``repeats > 1`` each example's latency is its median over
    the repeats. A config may also be a callable ``(source_tokens, ids) ->
    DecodeConfig`` such as :class:`~nagcrf.decode.LpdPlan`.
    """
    pairs = list(pairs)
    labels = labels or [f"config{i}" for i in range(len(configs))]
    reports = []
    for cfg, label in zip(configs, labels):
        inputs = [model.input_ids(s) for s, _ in pairs]

        def cfg_for(src, ids, cfg=cfg):
            return cfg(src, ids) if callable(cfg) else cfg

        for (src, _), ids in list(zip(pairs, inputs))[:warmup]:
            model.decode_ids(ids, cfg_for(src, ids), include_encoding)
        outputs, lat = [], []
        for (src, _), ids in zip(pairs, inputs):
            c = cfg_for(src, ids)
            times = []
            for _ in range(repeats):
                res = model.decode_ids(ids, c, include_encoding)
                times.append(res.latency_ns)
            lat.append(statistics.median(times))
            outputs.append(model.vocab.decode(res.output))
        rep = score_outputs(outputs, [t for _, t in pairs], [s for s, _ in pairs], label)
        rep.mean_latency_ns = float(np.mean(lat))
        rep.median_latency_ns = float(np.median(lat))
        reports.append(rep)
    base = baseline_latency_ns if baseline_latency_ns is not None else reports[0].mean_latency_ns
    for rep in reports:
        rep.speedup_vs_baseline = base / rep.mean_latency_ns if rep.mean_latency_ns > 0 else None
    return reports
