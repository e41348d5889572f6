"""The full generator (encoder + CRF head) and its checkpoint container.

Checkpoint layout (all integers little-endian)::

    magic    b"NAGCKPT\\0"
    u32      format version
    u32      header length, then UTF-8 JSON header (config echo, vocab, tensor count)
    per tensor:
        u32 name length, UTF-8 name
        u32 rank, rank x u64 dims
        prod(dims) x float64 payload
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .crf import CrfParams
from .decode import DecodeConfig, DecodeResult, decode
from .encoder import EncoderConfig, EncoderModel, Vocabulary, build_input, encode

MAGIC = b"NAGCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class NagModel:
    vocab: Vocabulary
    encoder: EncoderModel
    crf: CrfParams
    task_kind: str = "length-reducing"

    @classmethod
    def init(cls, vocab: Vocabulary, enc_config: EncoderConfig, rank: int = 32, beam_k: int = 256,
             seed: int = 0, task_kind: str = "length-reducing") -> "NagModel":
        rng = np.random.default_rng(seed)
        encoder = EncoderModel.init(enc_config, len(vocab), rng)
        crf = CrfParams.init(enc_config.d_model, len(vocab), rank, beam_k, rng)
        return cls(vocab, encoder, crf, task_kind)

    def named_parameters(self):
        return self.encoder.named_parameters() + self.crf.named_parameters()

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def input_ids(self, source_tokens) -> list[int]:
        return build_input(self.vocab.encode(source_tokens), self.encoder.config, self.task_kind)

    def decode_ids(self, ids, config: DecodeConfig, include_encoding: bool = True) -> DecodeResult:
        t0 = time.perf_counter_ns()
        H = encode(self.encoder, ids).data
        t1 = time.perf_counter_ns()
        res = decode(H, self.crf, config)
        if include_encoding:
            res.latency_ns += t1 - t0
        return res

    def generate(self, source_tokens, config: DecodeConfig | None = None) -> list[str]:
        res = self.decode_ids(self.input_ids(source_tokens), config or DecodeConfig())
        return self.vocab.decode(res.output)

    def config_dict(self) -> dict:
        return {
            "encoder": asdict(self.encoder.config),
            "rank_d": self.crf.rank,
            "beam_k": self.crf.beam_k,
            "task_kind": self.task_kind,
        }


def save_checkpoint(model: NagModel, path, extra: dict | None = None) -> None:
    named = model.named_parameters()
    header = {
        "version": FORMAT_VERSION,
        "config": model.config_dict(),
        "extra": extra or {},
        "vocab": model.vocab.tokens,
        "n_tensors": len(named),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    for name, t in named:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{t.data.ndim}Q", t.data.ndim, *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    header = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    tensors = {}
    for _ in range(header["n_tensors"]):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)
        off += 8 * n
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return header, tensors


def load_checkpoint(path) -> tuple[NagModel, dict]:
    header, tensors = read_checkpoint(path)
    cfg = header["config"]
    model = NagModel.init(Vocabulary(header["vocab"]), EncoderConfig(**cfg["encoder"]),
                          rank=cfg["rank_d"], beam_k=cfg["beam_k"], task_kind=cfg["task_kind"])
    for name, t in model.named_parameters():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tensors[name].shape != t.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {t.shape}")
        t.data = tensors[name].copy()
    return model, header
