"""Decoding strategies over the CRF lattice: dynamic length, ratio-first and
fixed-length / length-parallel (LPD)."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .crf import CrfParams, build_lattice, label_scores, path_score, viterbi
from .encoder import EOS, RESERVED_IDS
from .tensor import Tensor

STRATEGIES = ("dynamic", "ratio_first", "fixed_length")


@dataclass
class DecodeConfig:
    strategy: str = "dynamic"
    alpha: float = 1.0
    fixed_lengths: list[int] = field(default_factory=list)
    beam_k: int = 256

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if bool(self.fixed_lengths) != (self.strategy == "fixed_length"):
            raise ValueError("fixed_lengths must be given exactly when strategy is fixed_length")


@dataclass
class DecodeResult:
    trajectory: list[int]
    output: list[int]
    score: float
    latency_ns: int = 0


def strip_reserved(ids) -> list[int]:
    return [int(i) for i in ids if int(i) not in RESERVED_IDS]


def _as_array(H) -> np.ndarray:
    return H.data if isinstance(H, Tensor) else np.asarray(H, dtype=np.float64)


def _run(H, params: CrfParams, k: int, n: int, exclude=None) -> DecodeResult:
    t0 = time.perf_counter_ns()
    h = _as_array(H)[:n]
    scores = h @ params.phi_weight.data + params.phi_bias.data
    lattice = build_lattice(scores, k, exclude=exclude)
    labels, score = viterbi(lattice, params)
    elapsed = time.perf_counter_ns() - t0
    return DecodeResult(labels, strip_reserved(labels), score, elapsed)


def decode_dynamic(H, params: CrfParams, k: int | None = None) -> DecodeResult:
    """Viterbi over every encoder position; the output is the trajectory with
    ``[eos]`` and other reserved labels removed."""
    k = params.beam_k if k is None else k
    return _run(H, params, k, _as_array(H).shape[0])


def ratio_length(T: int, alpha: float) -> int:
    """``round(alpha * T)`` with round-half-to-even, clamped to at least 1."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    n = round(alpha * T)
    if n < 1:
        warnings.warn(f"round({alpha} * {T}) < 1; decoding a single position", stacklevel=2)
        n = 1
    return min(n, T)


def decode_ratio_first(H, params: CrfParams, k: int | None = None, alpha: float = 1.0) -> DecodeResult:
    """Dynamic decoding restricted to the first ``round(alpha * T)`` positions."""
    k = params.beam_k if k is None else k
    T = _as_array(H).shape[0]
    return _run(H, params, k, ratio_length(T, alpha))


def decode_fixed_length(H, params: CrfParams, k: int | None = None, length: int = 1) -> DecodeResult:
    """Viterbi over exactly ``length`` positions with ``[eos]`` removed from
    the candidate sets (models trained without end markers)."""
    k = params.beam_k if k is None else k
    T = _as_array(H).shape[0]
    if not 1 <= length <= T:
        raise ValueError(f"fixed length {length} outside [1, {T}]")
    return _run(H, params, k, length, exclude=(EOS,))


def decode_lpd(H, params: CrfParams, k: int | None = None, lengths=()) -> DecodeResult:
    """Decode once per candidate length and keep the best length-normalized
    path score; ties go to the shorter length."""
    if not len(lengths):
        raise ValueError("LPD needs at least one candidate length")
    t0 = time.perf_counter_ns()
    best = None
    for length in sorted(set(int(n) for n in lengths)):
        res = decode_fixed_length(H, params, k, length)
        if best is None or res.score / length > best.score / len(best.trajectory):
            best = res
    best.latency_ns = time.perf_counter_ns() - t0
    return best


def decode(H, params: CrfParams, config: DecodeConfig) -> DecodeResult:
    if config.strategy == "dynamic":
        return decode_dynamic(H, params, config.beam_k)
    if config.strategy == "ratio_first":
        return decode_ratio_first(H, params, config.beam_k, config.alpha)
    if len(config.fixed_lengths) == 1:
        return decode_fixed_length(H, params, config.beam_k, config.fixed_lengths[0])
    return decode_lpd(H, params, config.beam_k, config.fixed_lengths)


def full_scores(H, params: CrfParams) -> np.ndarray:
    """Emission scores for every position (convenience for scoring paths)."""
    return label_scores(H if isinstance(H, Tensor) else Tensor(H), params).data


def rescore(H, params: CrfParams, labels) -> float:
    return path_score(full_scores(H, params), labels, params)


class LengthPrior:
    """Output-length candidates from corpus target/source length ratios.

    Stands in for a learned length predictor: for a source of ``n`` tokens the
    candidates are the most frequent values of ``round(r * n)`` over the
    training ratios ``r``.
    """

    def __init__(self, ratios):
        self.ratios = np.asarray(sorted(ratios), dtype=np.float64)
        if not self.ratios.size:
            raise ValueError("length prior needs at least one ratio")

    @classmethod
    def from_pairs(cls, pairs) -> "LengthPrior":
        return cls([len(t) / len(s) for s, t in pairs if len(s)])

    def candidates(self, source_len: int, max_len: int, n: int) -> list[int]:
        lengths, counts = np.unique(np.clip(np.rint(self.ratios * source_len), 1, max_len).astype(int),
                                    return_counts=True)
        order = np.lexsort((lengths, -counts))[:n]
        return sorted(int(x) for x in lengths[order])


@dataclass
class LpdPlan:
    """Per-example LPD config: the ``n`` most likely lengths under ``prior``."""

    prior: LengthPrior
    n: int = 10
    beam_k: int = 256

    def __call__(self, source_tokens, ids) -> DecodeConfig:
        lengths = self.prior.candidates(len(source_tokens), len(ids), self.n)
        return DecodeConfig("fixed_length", 1.0, lengths, self.beam_k)
