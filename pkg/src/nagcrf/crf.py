"""Linear-chain CRF over the vocabulary with a low-rank transition matrix.

Transition scores are ``t(u, v) = E1[u] . E2[v]``; only the rows for the
current candidate labels are ever multiplied out. The partition function and
Viterbi run over a lattice holding the top-``k`` labels per position.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .encoder import EOS
from .tensor import Tensor

ORACLE_LIMIT = 10**7


class OracleSizeError(ValueError):
    pass


@dataclass
class CrfParams:
    phi_weight: Tensor  # (d_model, |V|)
    phi_bias: Tensor  # (|V|,)
    E1: Tensor  # (|V|, rank)
    E2: Tensor  # (|V|, rank)
    beam_k: int = 256

    @property
    def vocab_size(self) -> int:
        return self.phi_bias.shape[0]

    @property
    def rank(self) -> int:
        return self.E1.shape[1]

    @classmethod
    def init(cls, d_model: int, vocab_size: int, rank: int, beam_k: int,
             rng: np.random.Generator) -> "CrfParams":
        u = lambda *s: tn.parameter(rng.uniform(-0.1, 0.1, size=s))
        return cls(u(d_model, vocab_size), tn.parameter(np.zeros(vocab_size)),
                   u(vocab_size, rank), u(vocab_size, rank), beam_k)

    def named_parameters(self):
        return [("crf.phi_weight", self.phi_weight), ("crf.phi_bias", self.phi_bias),
                ("crf.E1", self.E1), ("crf.E2", self.E2)]

    def transition(self, u: int, v: int) -> float:
        return float(np.dot(self.E1.data[u], self.E2.data[v]))


@dataclass
class Lattice:
    """Per-position candidate labels (sorted by label score, descending)."""

    candidates: np.ndarray  # (L, k) int
    label_scores: np.ndarray  # (L, k) float

    @property
    def length(self) -> int:
        return self.candidates.shape[0]

    @property
    def width(self) -> int:
        return self.candidates.shape[1]


def label_scores(H: Tensor, params: CrfParams) -> Tensor:
    """Emission scores ``H @ W + b`` over the whole vocabulary."""
    return tn.add(tn.matmul(H, params.phi_weight), params.phi_bias)


def path_score(scores: np.ndarray, labels, params: CrfParams) -> float:
    """Score of one label path given full emission scores ``(L, |V|)``.

    Accumulates in the same order as :func:`viterbi`.
    """
    labels = [int(y) for y in labels]
    if not labels:
        raise ValueError("path must have at least one label")
    E1, E2 = params.E1.data, params.E2.data
    s = float(scores[0, labels[0]])
    for i in range(1, len(labels)):
        s = float(scores[i, labels[i]]) + (s + float(E1[labels[i - 1]] @ E2[labels[i]]))
    return s


def select_candidates(scores: np.ndarray, k: int, force=None, exclude=None, eos_id: int = EOS) -> np.ndarray:
    """Top-``k`` label ids per position along the last axis.

    ``[eos]`` is always kept unless excluded; ``force`` adds further ids per
    position (shape ``scores.shape[:-1]``), e.g. gold labels during training.
    Returned ids are ordered by score descending, ties toward lower id.
    """
    V = scores.shape[-1]
    key = np.array(scores, dtype=np.float64, copy=True)
    if exclude is not None:
        key[..., list(exclude)] = -np.inf
    n_allowed = V - (len(set(exclude)) if exclude is not None else 0)
    k = min(k, n_allowed)
    if exclude is None or eos_id not in exclude:
        key[..., eos_id] = np.inf
    if force is not None:
        np.put_along_axis(key, np.asarray(force)[..., None], np.inf, axis=-1)
    # stable argsort: equal keys stay in id order
    order = np.argsort(-key, axis=-1, kind="stable")[..., :k]
    cand_scores = np.take_along_axis(scores, order, axis=-1)
    keyed = np.lexsort((order, -cand_scores), axis=-1)
    return np.take_along_axis(order, keyed, axis=-1)


def build_lattice(scores: np.ndarray, k: int, exclude=None, eos_id: int = EOS) -> Lattice:
    """Truncate ``(L, |V|)`` emission scores to a ``k``-wide lattice.

    ``k`` larger than the vocabulary is clamped; ``[eos]`` is forced into
    every position unless listed in ``exclude``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if k < 2:
        raise ValueError(f"beam size must be >= 2, got {k}")
    cands = select_candidates(scores, k, exclude=exclude, eos_id=eos_id)
    return Lattice(cands, np.take_along_axis(scores, cands, axis=-1))


def forward_log_partition(emit: Tensor, cands: np.ndarray, params: CrfParams,
                          lengths: np.ndarray | None = None) -> Tensor:
    """Batched log-space forward algorithm over candidate lattices.

    ``emit`` and ``cands`` are ``(B, L, k)``; ``lengths`` gives the number of
    valid positions per row. Returns ``log Z`` of shape ``(B,)``.
    """
    B, L, k = emit.shape
    if lengths is None:
        lengths = np.full(B, L)
    alpha = emit[:, 0]
    if L > 1:
        e1 = tn.gather_rows(params.E1, cands[:, :-1])  # (B, L-1, k, r)
        e2 = tn.gather_rows(params.E2, cands[:, 1:])
        trans = tn.matmul(e1, tn.transpose(e2, (0, 1, 3, 2)))  # (B, L-1, k, k)
    for i in range(1, L):
        s = tn.add(tn.add(tn.reshape(alpha, (B, k, 1)), trans[:, i - 1]),
                   tn.reshape(emit[:, i], (B, 1, k)))
        nxt = tn.logsumexp(s, axis=1)
        live = (lengths > i)[:, None]
        alpha = nxt if live.all() else tn.where(live, nxt, alpha)
    return tn.logsumexp(alpha, axis=-1)


def log_partition(lattice: Lattice, params: CrfParams) -> float:
    """Truncated ``log Z`` of one lattice (same code path used in training)."""
    emit = tn.Tensor(lattice.label_scores[None])
    return float(forward_log_partition(emit, lattice.candidates[None], params).data[0])


def viterbi(lattice: Lattice, params: CrfParams) -> tuple[list[int], float]:
    """Best label path over the lattice; ties go to the lower label id.

    The returned score is recomputed with :func:`path_score` semantics so it
    matches exactly.
    """
    L = lattice.length
    # id-sorted candidates make argmax's first-hit rule the low-id tie-break
    perm = np.argsort(lattice.candidates, axis=1, kind="stable")
    cands = np.take_along_axis(lattice.candidates, perm, axis=1)
    emit = np.take_along_axis(lattice.label_scores, perm, axis=1)
    alpha = emit[0]
    if L == 1:
        j = int(np.argmax(alpha))
        return [int(cands[0, j])], float(alpha[j])
    E1, E2 = params.E1.data, params.E2.data
    trans = np.matmul(E1[cands[:-1]], np.swapaxes(E2[cands[1:]], 1, 2))  # (L-1, k, k)
    back = np.empty((L - 1, cands.shape[1]), dtype=np.int64)
    cols = np.arange(cands.shape[1])
    for i in range(1, L):
        s = alpha[:, None] + trans[i - 1]
        bp = s.argmax(axis=0)
        back[i - 1] = bp
        alpha = emit[i] + s[bp, cols]
    j = int(np.argmax(alpha))
    path = [j]
    for i in range(L - 2, -1, -1):
        j = int(back[i, j])
        path.append(j)
    path.reverse()
    labels = [int(cands[i, j]) for i, j in enumerate(path)]
    return labels, _lattice_path_score(lattice, labels, params)


def _lattice_path_score(lattice: Lattice, labels, params: CrfParams) -> float:
    E1, E2 = params.E1.data, params.E2.data
    pos = [int(np.flatnonzero(lattice.candidates[i] == y)[0]) for i, y in enumerate(labels)]
    s = float(lattice.label_scores[0, pos[0]])
    for i in range(1, len(labels)):
        s = float(lattice.label_scores[i, pos[i]]) + (s + float(E1[labels[i - 1]] @ E2[labels[i]]))
    return s


def crf_nll(H: Tensor, targets: np.ndarray, lengths: np.ndarray, params: CrfParams,
            k: int | None = None, eos_id: int = EOS) -> Tensor:
    """Per-example negative log-likelihood ``log Z - S(target)``, shape ``(B,)``.

    ``H`` is ``(B, T, d_model)``; ``targets`` is ``(B, L)`` padded with any
    valid id past each row's length. Gold labels are forced into the training
    lattice, so the loss is never negative.
    """
    targets = np.asarray(targets, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    B, L = targets.shape
    V = params.vocab_size
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ValueError(f"target label outside vocabulary of size {V}")
    k = params.beam_k if k is None else k
    phi = label_scores(H[:, :L], params)  # (B, L, V)
    if k >= V:
        cands = np.broadcast_to(np.arange(V), (B, L, V))
        emit = phi
    else:
        cands = select_candidates(phi.data, k, force=targets, eos_id=eos_id)
        emit = tn.take_along(phi, cands, axis=-1)
    log_z = forward_log_partition(emit, cands, params, lengths)
    return tn.sub(log_z, gold_path_score(phi, targets, lengths, params))


def gold_path_score(phi: Tensor, targets: np.ndarray, lengths: np.ndarray, params: CrfParams) -> Tensor:
    B, L = targets.shape
    valid = np.arange(L)[None, :] < lengths[:, None]
    emit = tn.reshape(tn.take_along(phi, targets[..., None], axis=-1), (B, L))
    score = tn.tsum(tn.mul(emit, valid.astype(np.float64)), axis=1)
    if L > 1:
        e1 = tn.gather_rows(params.E1, targets[:, :-1])
        e2 = tn.gather_rows(params.E2, targets[:, 1:])
        trans = tn.tsum(tn.mul(e1, e2), axis=-1)  # (B, L-1)
        score = tn.add(score, tn.tsum(tn.mul(trans, valid[:, 1:].astype(np.float64)), axis=1))
    return score


# exhaustive oracles ------------------------------------------------------------

def _all_path_scores(scores: np.ndarray, params: CrfParams) -> np.ndarray:
    """Scores of every path as an array indexed ``[y_L, ..., y_1]``."""
    L, V = scores.shape
    if V ** L > ORACLE_LIMIT:
        raise OracleSizeError(f"|V|^L = {V}^{L} exceeds the enumeration limit {ORACLE_LIMIT}")
    T = params.E1.data @ params.E2.data.T  # dense matrix: tiny vocabularies only
    total = np.zeros((V,) * L)
    for i in range(L):
        shape = [1] * L
        shape[L - 1 - i] = V
        total = total + scores[i].reshape(shape)
        if i:
            tshape = [1] * L
            tshape[L - i] = V  # y_{i-1}
            tshape[L - 1 - i] = V  # y_i
            # axis for y_i precedes y_{i-1}, so transpose T
            total = total + T.T.reshape(tshape)
    return total


def exact_oracle_partition(scores: np.ndarray, params: CrfParams) -> float:
    """``log Z`` by enumerating all ``|V|^L`` label sequences."""
    total = _all_path_scores(np.asarray(scores, dtype=np.float64), params).ravel()
    m = total.max()
    return float(m + np.log(np.exp(total - m).sum()))


def exact_oracle_viterbi(scores: np.ndarray, params: CrfParams) -> tuple[list[int], float]:
    """Exhaustive argmax. Among tied paths, the lowest last label wins, then
    the lowest second-to-last, and so on (the Viterbi back-pointer rule)."""
    scores = np.asarray(scores, dtype=np.float64)
    total = _all_path_scores(scores, params)
    flat = int(np.argmax(total))
    rev = np.unravel_index(flat, total.shape)
    labels = [int(y) for y in reversed(rev)]
    return labels, float(total[rev])


def enumerate_paths(V: int, L: int):
    """All label sequences in lexicographic order (for small test oracles)."""
    if V ** L > ORACLE_LIMIT:
        raise OracleSizeError(f"|V|^L = {V}^{L} exceeds the enumeration limit {ORACLE_LIMIT}")
    return itertools.product(range(V), repeat=L)
