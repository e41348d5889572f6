import struct

import numpy as np
import pytest

from nagcrf.data import TaskSpec, build_vocab, generate
from nagcrf.decode import DecodeConfig, LengthPrior, LpdPlan
from nagcrf.encoder import EncoderConfig, RESERVED_TOKENS
from nagcrf.eval import benchmark
from nagcrf.model import MAGIC, CheckpointError, NagModel, load_checkpoint, read_checkpoint, save_checkpoint


@pytest.fixture(scope="module")
def corpus():
    return generate(TaskSpec(vocab_size=30, min_len=8, max_len=14, n_examples=30, seed=1))


@pytest.fixture
def model(corpus):
    cfg = EncoderConfig(n_layers=1, d_model=8, n_heads=2, d_ffn=8, max_len=16)
    return NagModel.init(build_vocab(corpus), cfg, rank=4, beam_k=10, seed=2)


class TestCheckpoint:
    def test_round_trip(self, model, corpus, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path, extra={"note": "x"})
        loaded, header = load_checkpoint(path)
        assert header["extra"] == {"note": "x"} and header["version"] == 1
        assert loaded.vocab == model.vocab and loaded.config_dict() == model.config_dict()
        for (n1, a), (n2, b) in zip(model.named_parameters(), loaded.named_parameters()):
            assert n1 == n2 and np.array_equal(a.data, b.data)
        src = corpus.examples[0][0]
        assert loaded.generate(src) == model.generate(src)

    def test_layout(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        buf = path.read_bytes()
        assert buf[:8] == MAGIC
        version, hlen = struct.unpack_from("<II", buf, 8)
        header, tensors = read_checkpoint(path)
        assert version == 1 and header["n_tensors"] == len(tensors)
        first_name = model.named_parameters()[0][0].encode()
        off = 16 + hlen
        assert buf[off + 4:off + 4 + len(first_name)] == first_name

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"garbage!" + bytes(16))
        with pytest.raises(CheckpointError, match="magic"):
            read_checkpoint(tmp_path / "x")

    def test_bad_version(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        buf = bytearray(path.read_bytes())
        buf[8:12] = struct.pack("<I", 99)
        path.write_bytes(bytes(buf))
        with pytest.raises(CheckpointError, match="version"):
            read_checkpoint(path)

    def test_trailing_bytes(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(CheckpointError, match="trailing"):
            read_checkpoint(path)

    def test_general_task_kind_pads(self, corpus):
        cfg = EncoderConfig(n_layers=1, d_model=8, n_heads=2, d_ffn=8, max_len=16)
        m = NagModel.init(build_vocab(corpus), cfg, task_kind="general")
        assert len(m.input_ids(["a", "b"])) == 16


class TestBenchmark:
    def test_self_comparison_and_fields(self, model, corpus):
        (rep,) = benchmark(model, corpus.examples[:5], [DecodeConfig(beam_k=10)], ["dyn"], warmup=1)
        assert rep.speedup_vs_baseline == 1.0 and rep.label == "dyn" and rep.n_examples == 5
        assert rep.mean_latency_ns > 0 and rep.median_latency_ns > 0
        for v in (rep.rouge1, rep.rouge2, rep.rougeL, rep.token_kept_f1, rep.bleu, *rep.rep_n.values()):
            assert 0.0 <= v <= 100.0

    def test_ratio_first_speedup(self, model, corpus):
        reps = benchmark(model, corpus.examples[:10],
                         [DecodeConfig("ratio_first", 1.0, beam_k=10), DecodeConfig("ratio_first", 0.3, beam_k=10)],
                         repeats=5, include_encoding=False)
        assert reps[1].speedup_vs_baseline > 1.0

    def test_external_baseline_and_plans(self, model, corpus):
        plan = LpdPlan(LengthPrior.from_pairs(corpus.examples), n=3, beam_k=10)
        reps = benchmark(model, corpus.examples[:3], [plan], baseline_latency_ns=1e12)
        assert reps[0].speedup_vs_baseline > 1.0


def test_reserved_tokens_in_vocab(model):
    assert model.vocab.tokens[:5] == list(RESERVED_TOKENS)
