"""Target construction, the combined CRF + context-aware loss, Adam and the
training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .crf import CrfParams, crf_nll, label_scores
from .decode import DecodeConfig, LengthPrior
from .encoder import EOS, PAD, encode_batch
from .model import NagModel, save_checkpoint
from .tensor import GradientTape, Tensor

log = logging.getLogger(__name__)


class TargetTooLongError(ValueError):
    pass


@dataclass
class TrainingExample:
    source_ids: list[int]
    target_ids: list[int]
    supervised_len: int


@dataclass
class TrainConfig:
    lam: float = 1.0
    window_c: int = 3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    train_k: int | None = None  # beam for the training lattice; None uses the model's beam_k
    append_eos: bool = True  # False trains the fixed-length (no end marker) variant
    use_crf: bool = True
    eval_size: int = 300
    grad_clip: float | None = 5.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.window_c < 0:
            raise ValueError(f"window c must be >= 0, got {self.window_c}")


def make_example(source_tokens, target_tokens, model: NagModel, append_eos: bool = True) -> TrainingExample:
    """Encode one pair; the target (plus two ``[eos]``) is aligned to the first
    encoder positions."""
    source_ids = model.input_ids(source_tokens)
    target_ids = model.vocab.encode(target_tokens)
    if append_eos:
        target_ids = target_ids + [EOS, EOS]
    elif not target_ids:
        raise TargetTooLongError("empty target cannot be supervised without end markers")
    if len(target_ids) > len(source_ids):
        raise TargetTooLongError(
            f"target needs {len(target_ids)} positions but the source provides {len(source_ids)}")
    return TrainingExample(source_ids, target_ids, len(target_ids))


def negative_mask(targets: np.ndarray, lengths: np.ndarray, c: int, vocab_size: int) -> np.ndarray:
    """``(B, L, |V|)`` indicator of distinct window neighbours ``y_j != y_i``.

    The window is clipped at sequence edges; repeated neighbours count once.
    """
    B, L = targets.shape
    mask = np.zeros((B, L, vocab_size))
    for off in range(-c, c + 1):
        if off == 0:
            continue
        i = np.arange(max(0, -off), min(L, L - off))
        j = i + off
        ok = (j[None, :] < lengths[:, None]) & (i[None, :] < lengths[:, None])
        yi, yj = targets[:, i], targets[:, j]
        ok &= yi != yj
        b_idx, pos = np.nonzero(ok)
        mask[b_idx, i[pos], yj[b_idx, pos]] = 1.0
    return mask


def context_aware_loss(phi: Tensor, targets: np.ndarray, lengths: np.ndarray, c: int) -> Tensor:
    """Per-example context-aware loss, shape ``(B,)``.

    ``phi`` holds emission scores ``(B, L, |V|)``; the token distribution is
    their softmax. Gold tokens are pushed up and distinct tokens within ``c``
    positions pushed down through ``log(1 - p)``.
    """
    B, L, V = phi.shape
    valid = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)
    logp = tn.log_softmax(phi, axis=-1)
    gold = tn.reshape(tn.take_along(logp, targets[..., None], axis=-1), (B, L))
    loss = tn.neg(tn.tsum(tn.mul(gold, valid), axis=1))
    if c > 0:
        mask = negative_mask(targets, lengths, c, V)
        if mask.any():
            log1m = tn.log(tn.clip(tn.sub(1.0, tn.exp(logp)), 1e-12, None))
            loss = tn.sub(loss, tn.tsum(tn.mul(log1m, mask), axis=(1, 2)))
    return loss


def pad_batch(examples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    T = max(len(e.source_ids) for e in examples)
    L = max(e.supervised_len for e in examples)
    src = np.full((len(examples), T), PAD, dtype=np.int64)
    tgt = np.full((len(examples), L), EOS, dtype=np.int64)
    for b, e in enumerate(examples):
        src[b, :len(e.source_ids)] = e.source_ids
        tgt[b, :e.supervised_len] = e.target_ids
    lengths = np.array([e.supervised_len for e in examples], dtype=np.int64)
    return src, tgt, lengths


def total_loss_from_hidden(H: Tensor, targets: np.ndarray, lengths: np.ndarray, params: CrfParams,
                           config: TrainConfig) -> Tensor:
    """Batch-mean of ``L_crf + lambda * L_ca`` (each summed over supervised positions)."""
    B = targets.shape[0]
    if config.use_crf:
        main = crf_nll(H, targets, lengths, params, k=config.train_k)
    else:
        main = context_aware_loss(label_scores(H[:, :targets.shape[1]], params), targets, lengths, 0)
    if config.lam > 0:
        phi = label_scores(H[:, :targets.shape[1]], params)
        main = tn.add(main, tn.scale(context_aware_loss(phi, targets, lengths, config.window_c), config.lam))
    return tn.scale(tn.tsum(main), 1.0 / B)


def total_loss(model: NagModel, examples, config: TrainConfig) -> Tensor:
    src, tgt, lengths = pad_batch(examples)
    H = encode_batch(model.encoder, src)
    return total_loss_from_hidden(H, tgt, lengths, model.crf, config)


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, config: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


def _clip_grads(grads, max_norm: float):
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads if g is not None))
    if norm > max_norm:
        f = max_norm / norm
        grads = [None if g is None else g * f for g in grads]
    return grads


def train_step(model: NagModel, batch, config: TrainConfig, state: AdamState) -> float:
    params = model.parameters()
    for p in params:
        p.grad = None
    with GradientTape() as tape:
        loss = total_loss(model, batch, config)
    tape.backward(loss)
    grads = [p.grad for p in params]
    if config.grad_clip:
        grads = _clip_grads(grads, config.grad_clip)
    adam_step(params, grads, state, config)
    return loss.item()


def batches(examples, batch_size: int, rng: np.random.Generator):
    """Shuffled batches of similar source length (sorted within chunks)."""
    order = rng.permutation(len(examples))
    chunk = batch_size * 20
    out = []
    for s in range(0, len(order), chunk):
        block = sorted(order[s:s + chunk], key=lambda i: (len(examples[i].source_ids), i))
        out += [block[j:j + batch_size] for j in range(0, len(block), batch_size)]
    for j in rng.permutation(len(out)):
        yield [examples[i] for i in out[j]]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_f1: float
    dev_rep2: float

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_f1:.4f}\t{self.dev_rep2:.4f}"


@dataclass
class TrainResult:
    model: NagModel
    history: list[EpochRecord]
    best_epoch: int
    skipped: int


def evaluate_dev(model: NagModel, pairs, length_prior: LengthPrior | None = None,
                 n_lengths: int = 1) -> tuple[float, float]:
    """Mean token-kept F1 and corpus rep-2 on ``pairs``.

    Uses dynamic decoding, or LPD over ``n_lengths`` candidates from
    ``length_prior`` for models trained without end markers.
    """
    from .eval import rep_n_corpus, token_kept_f1

    if not pairs:
        return 0.0, 0.0
    outs, f1s = [], []
    for src, ref in pairs:
        ids = model.input_ids(src)
        if length_prior is None:
            cfg = DecodeConfig(beam_k=model.crf.beam_k)
        else:
            lengths = length_prior.candidates(len(src), len(ids), n_lengths)
            cfg = DecodeConfig(strategy="fixed_length", fixed_lengths=lengths, beam_k=model.crf.beam_k)
        hyp = model.vocab.decode(model.decode_ids(ids, cfg).output)
        outs.append(hyp)
        f1s.append(token_kept_f1(hyp, ref, src, warn=False))
    return float(np.mean(f1s)), rep_n_corpus(outs, 2)


def build_examples(model: NagModel, pairs, append_eos: bool = True):
    examples, skipped = [], 0
    for line_no, (src, tgt) in enumerate(pairs, 1):
        try:
            examples.append(make_example(src, tgt, model, append_eos))
        except (TargetTooLongError, ValueError) as err:
            skipped += 1
            log.debug("skipping example %d: %s", line_no, err)
    if skipped:
        log.warning("skipped %d of %d examples whose target does not fit the source positions",
                    skipped, len(pairs))
    return examples, skipped


def train(model: NagModel, train_pairs, dev_pairs, config: TrainConfig,
          checkpoint_path=None, log_fn=None) -> TrainResult:
    """Train in place and restore the parameters of the epoch with the best dev
    token-kept F1. Deterministic for a fixed ``config.seed``."""
    if not train_pairs:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(config.seed)
    if not config.use_crf:
        # the CE-only ablation never trains transitions; zero them so decoding
        # reduces to per-position argmax
        model.crf.E1.data[:] = 0.0
        model.crf.E2.data[:] = 0.0
    examples, skipped = build_examples(model, train_pairs, config.append_eos)
    dev = list(dev_pairs)[:config.eval_size]
    prior = None if config.append_eos else LengthPrior.from_pairs(train_pairs)
    state = AdamState()
    history: list[EpochRecord] = []
    best_f1, best_epoch, best_params = -1.0, 0, None
    for epoch in range(1, config.epochs + 1):
        losses = [train_step(model, b, config, state) for b in batches(examples, config.batch_size, rng)]
        dev_f1, dev_rep2 = evaluate_dev(model, dev, prior)
        rec = EpochRecord(epoch, float(np.mean(losses)), dev_f1, dev_rep2)
        history.append(rec)
        if log_fn:
            log_fn(rec)
        log.info("epoch %d loss %.4f dev-F1 %.2f rep-2 %.3f", epoch, rec.train_loss, dev_f1, dev_rep2)
        if dev_f1 > best_f1:
            best_f1, best_epoch = dev_f1, epoch
            best_params = [p.data.copy() for p in model.parameters()]
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path, extra={"train": asdict(config), "epoch": epoch})
    for p, data in zip(model.parameters(), best_params):
        p.data = data
    return TrainResult(model, history, best_epoch, skipped)
