"""
A low-rank CRF over a pruned lattice
====================================

Every position of the output gets a score for every label. The CRF adds a
transition score between neighbouring labels, built from two small embedding
tables instead of a full |V| x |V| matrix. Decoding only looks at the top-k
labels per position. This script builds one tiny instance by hand and checks
the pruned search against brute-force enumeration.
"""

import numpy as np

from nagcrf import tensor as tn
from nagcrf.crf import (CrfParams, build_lattice, exact_oracle_partition, exact_oracle_viterbi,
                        log_partition, viterbi)
from nagcrf.encoder import EOS

rng = np.random.default_rng(0)
V, L, rank = 7, 4, 2

# The emission map is the identity here, so the "hidden states" are the label
# scores themselves. That keeps the example readable.
params = CrfParams(tn.parameter(np.eye(V)), tn.parameter(np.zeros(V)),
                   tn.parameter(rng.normal(size=(V, rank))), tn.parameter(rng.normal(size=(V, rank))),
                   beam_k=V)
scores = rng.normal(size=(L, V))

# transition t(u, v) is a dot product of a row of E1 with a row of E2
T = params.E1.data @ params.E2.data.T
print("transition matrix has rank", np.linalg.matrix_rank(T))

# %%
# With k = |V| the lattice keeps every label and the dynamic program is exact.
full = build_lattice(scores, V)
print("log Z, lattice :", log_partition(full, params))
print("log Z, brute   :", exact_oracle_partition(scores, params))
print("viterbi        :", viterbi(full, params))
print("brute argmax   :", exact_oracle_viterbi(scores, params))

# %%
# Pruning to k candidates per position can only lose probability mass, so the
# pruned log-partition never exceeds the exact one. [eos] is always kept in the
# lattice so a sequence can always end.
for k in range(2, V + 1):
    lat = build_lattice(scores, k)
    assert all(EOS in row for row in lat.candidates)
    print(f"k={k}: log Z = {log_partition(lat, params):.4f}")

# %%
# When [eos] -> [eos] is the strongest transition, a path that has emitted
# [eos] has no reason to leave it. The decoded trajectory ends in a run of
# [eos] and everything after the first one is dropped.
E1, E2 = params.E1.data.copy(), params.E2.data.copy()
E1[EOS] = [10.0, 0.0]
E2[:, 0] = rng.uniform(-0.1, 0.1, V)
E2[EOS, 0] = 1.0
sticky = CrfParams(params.phi_weight, params.phi_bias, tn.parameter(E1), tn.parameter(E2), beam_k=V)
boosted = scores.copy()
boosted[0, 6] += 20.0
boosted[1, EOS] += 5.0
labels, score = viterbi(build_lattice(boosted, V), sticky)
print("trajectory with sticky [eos]:", labels)
