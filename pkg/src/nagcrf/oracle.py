"""Randomised brute-force checks of the CRF and decoders on tiny instances.

Each suite draws random emission scores and low-rank transition factors,
runs the production code path with full candidate sets and compares it with
exhaustive enumeration over all ``|V|^L`` label sequences.
"""

from __future__ import annotations

import numpy as np

from .crf import (ORACLE_LIMIT, CrfParams, OracleSizeError, build_lattice, exact_oracle_partition,
                  exact_oracle_viterbi, log_partition, path_score, viterbi)
from .decode import decode_dynamic, decode_fixed_length
from .encoder import EOS

PARTITION_RTOL = 1e-9


def random_instance(rng: np.random.Generator, V: int, L: int, rank: int = 3):
    """Emission scores ``(L, V)`` and params whose phi map is the identity."""
    p = CrfParams.init(V, V, rank, V, rng)
    p.phi_weight.data = np.eye(V)
    p.E1.data = rng.normal(size=(V, rank))
    p.E2.data = rng.normal(size=(V, rank))
    return rng.normal(scale=2.0, size=(L, V)), p


def _sizes(rng, max_vocab, max_len):
    return int(rng.integers(EOS + 1, max_vocab + 1)), int(rng.integers(1, max_len + 1))


def suite_partition(rng, max_vocab, max_len, n):
    worst = 0.0
    for _ in range(n):
        scores, p = random_instance(rng, *_sizes(rng, max_vocab, max_len))
        want = exact_oracle_partition(scores, p)
        got = log_partition(build_lattice(scores, p.vocab_size), p)
        worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
    return worst < PARTITION_RTOL, f"max relative error {worst:.3e} over {n} instances"


def suite_viterbi(rng, max_vocab, max_len, n):
    bad = 0
    for _ in range(n):
        scores, p = random_instance(rng, *_sizes(rng, max_vocab, max_len))
        labels, score = viterbi(build_lattice(scores, p.vocab_size), p)
        want, _ = exact_oracle_viterbi(scores, p)
        bad += labels != want or score != path_score(scores, labels, p)
    return bad == 0, f"{bad} mismatches over {n} instances"


def suite_tied_viterbi(rng, max_vocab, max_len, n):
    """Small-integer parameters, so exact score ties are common."""
    bad = 0
    for _ in range(n):
        V, L = _sizes(rng, max_vocab, max_len)
        scores, p = random_instance(rng, V, L, rank=2)
        scores = rng.integers(-1, 2, size=(L, V)).astype(float)
        p.E1.data = rng.integers(-1, 2, size=(V, 2)).astype(float)
        p.E2.data = rng.integers(-1, 2, size=(V, 2)).astype(float)
        bad += viterbi(build_lattice(scores, V), p)[0] != exact_oracle_viterbi(scores, p)[0]
    return bad == 0, f"{bad} tie-break mismatches over {n} instances"


def suite_fixed_length(rng, max_vocab, max_len, n):
    bad = 0
    for _ in range(n):
        scores, p = random_instance(rng, *_sizes(rng, max_vocab, max_len))
        masked = scores.copy()
        masked[:, EOS] = -np.inf
        want, _ = exact_oracle_viterbi(masked, p)
        bad += decode_fixed_length(scores, p, p.vocab_size, scores.shape[0]).trajectory != want
    return bad == 0, f"{bad} mismatches over {n} instances"


def suite_absorption(rng, max_vocab, max_len, n):
    """No optimal path leaves [eos] once t(eos, eos) beats every t(eos, v) by
    more than any emission gain available on the remaining positions."""
    bad = 0
    for _ in range(n):
        V, L = _sizes(rng, max_vocab, max_len)
        scores, p = random_instance(rng, V, L, rank=2)
        p.E1.data[EOS] = [10.0, 0.0]
        p.E2.data[:, 0] = rng.uniform(-1.0, 1.0, V)
        p.E2.data[EOS, 0] = 10.0  # t(eos, eos) = 100, t(eos, v) <= 10
        want, _ = exact_oracle_viterbi(scores, p)
        tail = want[want.index(EOS):] if EOS in want else []
        bad += any(y != EOS for y in tail) or decode_dynamic(scores, p, V).trajectory != want
    return bad == 0, f"{bad} violations over {n} instances"


def suite_truncation(rng, max_vocab, max_len, n):
    """Truncated log Z never exceeds the exact one and grows with k."""
    bad = 0
    for _ in range(n):
        scores, p = random_instance(rng, *_sizes(rng, max_vocab, max_len))
        zs = [log_partition(build_lattice(scores, k), p) for k in range(2, p.vocab_size + 1)]
        exact = exact_oracle_partition(scores, p)
        bad += any(b < a - 1e-12 for a, b in zip(zs, zs[1:])) or zs[-1] > exact + 1e-9 * abs(exact)
    return bad == 0, f"{bad} non-monotone instances over {n}"


SUITES = {
    "partition": suite_partition,
    "viterbi": suite_viterbi,
    "viterbi_ties": suite_tied_viterbi,
    "fixed_length": suite_fixed_length,
    "eos_absorption": suite_absorption,
    "truncation_monotone": suite_truncation,
}


def run_oracle_suites(max_vocab: int = 6, max_len: int = 5, instances: int = 200, seed: int = 0):
    """Run every suite; returns ``[(name, passed, detail), ...]``."""
    if max_vocab <= EOS:
        raise ValueError(f"max vocabulary must exceed {EOS} so [eos] is a label, got {max_vocab}")
    if max_len < 1 or instances < 1:
        raise ValueError("max length and instance count must be positive")
    if max_vocab ** max_len > ORACLE_LIMIT:
        raise OracleSizeError(f"{max_vocab}^{max_len} paths exceed the enumeration limit {ORACLE_LIMIT}")
    rng = np.random.default_rng(seed)
    return [(name, *fn(rng, max_vocab, max_len, instances)) for name, fn in SUITES.items()]
