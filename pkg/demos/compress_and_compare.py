"""
Sentence compression without left-to-right decoding
====================================================

We generate a synthetic deletion-based compression corpus and train a small
encoder with a CRF on top. Then we decode the test set in four ways. A few
CPU minutes are enough for the model to learn which tokens to keep.
"""

from nagcrf.data import TaskSpec, build_vocab, corpus_stats, generate_splits
from nagcrf.decode import DecodeConfig, LengthPrior, LpdPlan
from nagcrf.encoder import EncoderConfig
from nagcrf.eval import benchmark
from nagcrf.model import NagModel
from nagcrf.train import TrainConfig, train

splits = generate_splits(TaskSpec(kind="compression", vocab_size=200, keep_ratio=0.3, seed=1),
                         {"train": 4000, "dev": 200, "test": 200})
src, tgt = splits["train"].examples[0]
print("source:", " ".join(src))
print("target:", " ".join(tgt))

# Targets are about a third of the source. The tail of the ratio histogram
# tells us how short a ratio-first truncation can safely be.
stats = corpus_stats(splits["train"])
print(f"mean ratio {stats['ratio_mean']:.3f}, 99th percentile {stats['ratio_p99']:.3f}")

# %%
# Training. Each epoch ends with a dev pass and the best-scoring parameters
# are kept.
vocab = build_vocab(splits["train"])
model = NagModel.init(vocab, EncoderConfig(n_layers=2, d_model=64, n_heads=4, d_ffn=128, max_len=64),
                      rank=32, beam_k=32, seed=0)
result = train(model, splits["train"].examples, splits["dev"].examples,
               TrainConfig(epochs=8, batch_size=32, train_k=32, eval_size=200, seed=0))
for rec in result.history:
    print(rec)

print("decoded:", " ".join(model.generate(src, DecodeConfig(beam_k=32))))

# %%
# Four decoding strategies on the same model:
#
# * dynamic: the CRF decides where the output ends
# * ratio-first: the lattice is cut to a fraction of the input length first
# * fixed-length: a single length taken from the training ratios
# * LPD: the best of several candidate lengths
#
# This model was trained to end its outputs with [eos]. The length-prescribed
# decoders forbid [eos], so they are at a disadvantage here; a fair LPD
# baseline trains with ``TrainConfig(append_eos=False)``.
prior = LengthPrior.from_pairs(splits["train"].examples)
alpha = round(stats["ratio_p99"] + 0.05, 2)
configs = [DecodeConfig(beam_k=32), DecodeConfig("ratio_first", alpha, beam_k=32),
           LpdPlan(prior, n=1, beam_k=32), LpdPlan(prior, n=10, beam_k=32)]
labels = ["dynamic", f"ratio_first:{alpha}", "fixed:1-best", "lpd:10"]
for rep in benchmark(model, splits["test"].examples, configs, labels, repeats=3, include_encoding=False):
    print(f"{rep.label:>18}  F1 {rep.token_kept_f1:6.2f}  ROUGE-1 {rep.rouge1:6.2f}  "
          f"median {rep.median_latency_ns / 1e3:7.1f} us  speedup {rep.speedup_vs_baseline:.2f}x")
