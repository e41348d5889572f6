"""Synthetic corpora, corpus files and vocabulary construction.

Corpus file format: UTF-8, one example per line, ``source<TAB>target`` with
whitespace-separated tokens.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import RESERVED_TOKENS, Vocabulary

TASK_KINDS = ("compression", "noisy-copy", "substitution-translation")


class CorpusFormatError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.path = path
        self.line_no = line_no


@dataclass
class Corpus:
    examples: list[tuple[list[str], list[str]]] = field(default_factory=list)
    split: str = "train"

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.examples == other.examples


@dataclass
class TaskSpec:
    """Parameters of a synthetic task.

    compression
        A fixed random ``keep_ratio`` share of the vocabulary is "content";
        the rest is filler. Each source holds about ``keep_ratio * n`` content
        tokens (jittered by ``keep_jitter``); the target is the content tokens
        in order, with adjacent repeats collapsed.
    noisy-copy
        The target copies the source except that rare tokens are rewritten
        through a fixed mapping.
    substitution-translation
        Tokens are mapped through a fixed bijection, and each pair whose first
        token belongs to a fixed "swap" class is emitted in reverse order.

    ``repetition_bias`` is the probability of duplicating a source token in
    place, which makes adjacent repeats common.
    """

    kind: str = "compression"
    vocab_size: int = 200
    min_len: int = 10
    max_len: int = 30
    keep_ratio: float = 0.3
    keep_jitter: int = 1
    repetition_bias: float = 0.0
    rare_rate: float = 0.1
    n_examples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}, expected one of {TASK_KINDS}")
        if not 0.0 < self.keep_ratio < 1.0:
            raise ValueError(f"keep_ratio must lie in (0, 1), got {self.keep_ratio}")
        if self.vocab_size < 10:
            raise ValueError(f"vocab_size must be >= 10, got {self.vocab_size}")
        if not 2 <= self.min_len <= self.max_len:
            raise ValueError(f"need 2 <= min_len <= max_len, got {self.min_len}, {self.max_len}")

    @property
    def task_kind(self) -> str:
        """Input construction mode used by the encoder for this task."""
        return "length-reducing" if self.kind == "compression" else "general"


def _words(n: int) -> list[str]:
    return [f"w{i}" for i in range(n)]


def _duplicate(tokens, p, rng, max_len):
    if p <= 0:
        return tokens
    out = []
    for tok in tokens:
        out.append(tok)
        if rng.random() < p and len(out) < max_len:
            out.append(tok)
    return out[:max_len]


def _compression(spec: TaskSpec, rng: np.random.Generator):
    words = _words(spec.vocab_size)
    perm = rng.permutation(spec.vocab_size)
    n_content = min(max(1, round(spec.keep_ratio * spec.vocab_size)), spec.vocab_size - 1)
    content = [words[i] for i in perm[:n_content]]
    filler = [words[i] for i in perm[n_content:]]
    content_set = set(content)
    examples = []
    for _ in range(spec.n_examples):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        base = round(spec.keep_ratio * n) + int(rng.integers(-spec.keep_jitter, spec.keep_jitter + 1))
        n_keep = int(np.clip(base, 1, n - 1))
        is_content = np.zeros(n, dtype=bool)
        is_content[rng.choice(n, size=n_keep, replace=False)] = True
        src = [content[rng.integers(len(content))] if c else filler[rng.integers(len(filler))]
               for c in is_content]
        src = _duplicate(src, spec.repetition_bias, rng, spec.max_len)
        tgt = [t for j, t in enumerate(src) if t in content_set and (j == 0 or src[j - 1] != t)]
        examples.append((src, tgt))
    return examples


def _noisy_copy(spec: TaskSpec, rng: np.random.Generator):
    words = _words(spec.vocab_size)
    perm = rng.permutation(spec.vocab_size)
    n_rare = max(1, round(0.1 * spec.vocab_size))
    rare = [words[i] for i in perm[:n_rare]]
    common = [words[i] for i in perm[n_rare:]]
    rewrite = dict(zip(rare, [common[i] for i in rng.choice(len(common), size=n_rare, replace=False)]))
    examples = []
    for _ in range(spec.n_examples):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [rare[rng.integers(n_rare)] if rng.random() < spec.rare_rate else common[rng.integers(len(common))]
               for _ in range(n)]
        src = _duplicate(src, spec.repetition_bias, rng, spec.max_len)
        examples.append((src, [rewrite.get(t, t) for t in src]))
    return examples


def _substitution(spec: TaskSpec, rng: np.random.Generator):
    words = _words(spec.vocab_size)
    targets = [f"t{i}" for i in rng.permutation(spec.vocab_size)]
    mapping = dict(zip(words, targets))
    swap = {words[i] for i in rng.choice(spec.vocab_size, size=spec.vocab_size // 5, replace=False)}
    examples = []
    for _ in range(spec.n_examples):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [words[i] for i in rng.integers(0, spec.vocab_size, size=n)]
        src = _duplicate(src, spec.repetition_bias, rng, spec.max_len)
        out, j = [], 0
        while j < len(src):
            if src[j] in swap and j + 1 < len(src):
                out += [mapping[src[j + 1]], mapping[src[j]]]
                j += 2
            else:
                out.append(mapping[src[j]])
                j += 1
        examples.append((src, out))
    return examples


def generate(spec: TaskSpec, split: str = "train") -> Corpus:
    """Deterministic corpus for ``spec`` (same seed, same corpus)."""
    rng = np.random.default_rng(spec.seed)
    maker = {"compression": _compression, "noisy-copy": _noisy_copy,
             "substitution-translation": _substitution}[spec.kind]
    return Corpus(maker(spec, rng), split)


def generate_splits(spec: TaskSpec, sizes: dict[str, int]) -> dict[str, Corpus]:
    """Train/dev/test corpora sharing one task definition (one seed, one draw)."""
    total = sum(sizes.values())
    whole = generate(TaskSpec(**{**spec.__dict__, "n_examples": total})).examples
    out, start = {}, 0
    for name, n in sizes.items():
        out[name] = Corpus(whole[start:start + n], name)
        start += n
    return out


def save_corpus(corpus: Corpus, path) -> None:
    lines = [" ".join(s) + "\t" + " ".join(t) + "\n" for s, t in corpus.examples]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_corpus(path, split: str = "train") -> Corpus:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise CorpusFormatError(path, line_no, "expected 'source<TAB>target'")
            src, tgt = line.split("\t", 1)
            if "\t" in tgt:
                raise CorpusFormatError(path, line_no, "more than one tab separator")
            src_toks = src.split()
            if not src_toks:
                raise CorpusFormatError(path, line_no, "empty source")
            examples.append((src_toks, tgt.split()))
    return Corpus(examples, split)


def build_vocab(corpus, max_size: int = 10**9) -> Vocabulary:
    """Reserved tokens first, then by descending frequency (ties lexicographic)."""
    if max_size <= len(RESERVED_TOKENS):
        raise ValueError(f"max_size must exceed {len(RESERVED_TOKENS)}")
    counts = Counter()
    for src, tgt in corpus:
        counts.update(src)
        counts.update(tgt)
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[:max_size - len(RESERVED_TOKENS)]]
    return Vocabulary([*RESERVED_TOKENS, *keep])


def length_ratios(corpus) -> np.ndarray:
    return np.array([len(t) / len(s) for s, t in corpus], dtype=np.float64)


def corpus_stats(corpus, bucket: float = 0.05) -> dict:
    """Length statistics and the target/source ratio histogram."""
    ratios = length_ratios(corpus)
    src_len = np.array([len(s) for s, _ in corpus])
    tgt_len = np.array([len(t) for _, t in corpus])
    edges = np.arange(0.0, max(1.0, ratios.max() if ratios.size else 1.0) + bucket, bucket)
    hist, _ = np.histogram(ratios, bins=edges)
    return {
        "n_examples": len(ratios),
        "source_len_mean": float(src_len.mean()) if src_len.size else 0.0,
        "target_len_mean": float(tgt_len.mean()) if tgt_len.size else 0.0,
        "ratio_mean": float(ratios.mean()) if ratios.size else 0.0,
        "ratio_p50": float(np.percentile(ratios, 50)) if ratios.size else 0.0,
        "ratio_p99": float(np.percentile(ratios, 99)) if ratios.size else 0.0,
        "ratio_max": float(ratios.max()) if ratios.size else 0.0,
        "histogram": [(float(lo), float(lo + bucket), int(c)) for lo, c in zip(edges[:-1], hist)],
    }


def format_stats(stats: dict) -> str:
    lines = [f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}"
             for k, v in stats.items() if k != "histogram"]
    for lo, hi, c in stats["histogram"]:
        lines.append(f"ratio_bucket[{lo:.2f},{hi:.2f}): {c}")
    return "\n".join(lines) + "\n"
