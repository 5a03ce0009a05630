"""Binary checkpoint format for a full engine state.

Layout, all integers little-endian:

    offset 0   magic "ACRM"
    offset 4   format version, u32
    offset 8   reservoir snapshot offset from file start, u64
    offset 16  blob count, u32
    ...        named blobs: name length u32, name bytes, dtype tag u8,
               rank u32, dims u32 each, raw payload (C order)
    ...        codebook block: "CDBK", s u32, k u32, subdim u32,
               float32 centroid payload
    ...        reservoir snapshot: length u64, snapshot bytes
    tail       crc32 of everything before it, u32

Everything needed to resume a run rides along: parameters, compressor,
codebooks, reservoir, optimizer moments, rng state, and a JSON metadata
blob with the config echo and the metrics emitted so far. load(save(x))
is bit-identical; resuming must reproduce an unbroken run exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .autoencoder import CompressorParams
from .config import RunConfig, parse_config
from .engine import EngineState, frozen_checksums
from .errors import CheckpointError
from .metrics import MetricRecord
from .network import SplitModel
from .nn import OptimState, Tensor
from .quantizer import Codebooks
from .reservoir import snapshot_from_bytes, snapshot_to_bytes

MAGIC = b"ACRM"
VERSION = 1

_DTYPE_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<u4"): 4,
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass
class CheckpointBundle:
    """Everything a resumed run needs besides the dataset itself."""

    state: EngineState
    config: RunConfig
    config_text: str
    records: list


def _pack_blob(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    arr = arr.astype(dt, copy=False)
    if arr.dtype not in _DTYPE_TAGS:
        raise CheckpointError(f"blob {name!r} has unsupported dtype {arr.dtype}")
    raw = name.encode()
    head = struct.pack("<I", len(raw)) + raw
    head += struct.pack("<BI", _DTYPE_TAGS[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + arr.tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _read_blob(r: _Reader) -> tuple[str, np.ndarray]:
    name = r.take(r.u32()).decode()
    tag = r.take(1)[0]
    if tag not in _TAG_DTYPES:
        raise CheckpointError(f"blob {name!r} has unknown dtype tag {tag}")
    dtype = _TAG_DTYPES[tag]
    rank = r.u32()
    dims = tuple(r.u32() for _ in range(rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = r.take(count * dtype.itemsize)
    return name, np.frombuffer(payload, dtype=dtype).reshape(dims)


def _rng_state_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": {k: str(v) for k, v in st["state"].items()},
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _rng_from_json(d: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    if d["bit_generator"] != rng.bit_generator.state["bit_generator"]:
        raise CheckpointError(f"unsupported rng kind {d['bit_generator']!r}")
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {k: int(v) for k, v in d["state"].items()},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
    return rng


def save_checkpoint(
    state: EngineState, path: str, *, config_text: str = "", records: list | None = None
) -> None:
    """Serialize the engine state; see the module docstring for layout."""
    blobs: list[bytes] = []
    for name, p in sorted(state.model.params.items()):
        blobs.append(_pack_blob(f"model.{name}", p.data))
    for name, p in sorted(state.compressor.params.items()):
        blobs.append(_pack_blob(f"acae.{name}", p.data))
    for pname, slots in sorted(state.optim.slots.items()):
        for key, buf in sorted(slots.items()):
            blobs.append(_pack_blob(f"optim.{pname}.{key}", buf))

    meta = {
        "config_text": config_text,
        "rng": _rng_state_json(state.rng),
        "current_task": state.current_task,
        "global_step": state.global_step,
        "rehearsal_n": state.rehearsal_n,
        "num_classes": state.num_classes,
        "crop_range": list(state.crop_range),
        "augment": state.augment,
        "sample_with_replacement": state.sample_with_replacement,
        "seen_classes": sorted(state.seen_classes),
        "optim": {
            "kind": state.optim.kind,
            "lr": state.optim.lr,
            "momentum": state.optim.momentum,
            "beta1": state.optim.beta1,
            "beta2": state.optim.beta2,
            "eps": state.optim.eps,
            "weight_decay": state.optim.weight_decay,
            "step_count": state.optim.step_count,
        },
        "frozen_digest": state.frozen_digest,
        "records": [
            [r.step, r.task, r.seen_classes, r.top1, r.top5, r.boundary]
            for r in (records or [])
        ],
    }
    blobs.append(_pack_blob("meta.json", np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)))

    body = struct.pack("<I", len(blobs)) + b"".join(blobs)
    books = state.books
    codebook_block = b"CDBK" + struct.pack(
        "<III", books.s, books.k, books.subdim
    ) + np.ascontiguousarray(books.centroids, dtype="<f4").tobytes()

    hw = state.model.config.feature_hw
    snap = snapshot_to_bytes(state.reservoir, state.books.s, hw[0], hw[1], books.k)

    reservoir_offset = 16 + len(body) + len(codebook_block)
    out = MAGIC + struct.pack("<IQ", VERSION, reservoir_offset) + body
    out += codebook_block + struct.pack("<Q", len(snap)) + snap
    out += struct.pack("<I", zlib.crc32(out))
    with open(path, "wb") as fh:
        fh.write(out)


def load_checkpoint(path: str) -> CheckpointBundle:
    """Parse and validate a checkpoint; inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    r = _Reader(blob[:-4])
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    reservoir_offset = r.u64()

    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name, arr = _read_blob(r)
        arrays[name] = arr

    if r.take(4) != b"CDBK":
        raise CheckpointError(f"{path}: missing codebook block")
    s, k, subdim = struct.unpack("<III", r.take(12))
    cents = np.frombuffer(r.take(s * k * subdim * 4), dtype="<f4").reshape(s, k, subdim)
    books = Codebooks(s, k, subdim, cents.copy())

    if r.pos != reservoir_offset:
        raise CheckpointError(f"{path}: reservoir offset {reservoir_offset} does not match layout")
    snap_len = r.u64()
    reservoir, _ = snapshot_from_bytes(r.take(snap_len))

    if "meta.json" not in arrays:
        raise CheckpointError(f"{path}: missing metadata blob")
    meta = json.loads(arrays.pop("meta.json").tobytes().decode())

    cfg = parse_config(meta["config_text"])
    net = cfg.net_config()
    model_params = {}
    acae_params = {}
    for name, arr in arrays.items():
        if name.startswith("model."):
            model_params[name[6:]] = Tensor(arr.copy())
        elif name.startswith("acae."):
            acae_params[name[5:]] = Tensor(arr.copy())
    model = SplitModel(net, model_params)
    comp = CompressorParams(cfg.acae_latent_channels, acae_params)

    for name in model.head_names():
        model.params[name].requires_grad = True

    o = meta["optim"]
    optim = OptimState(
        o["kind"], lr=o["lr"], momentum=o["momentum"], beta1=o["beta1"],
        beta2=o["beta2"], eps=o["eps"], weight_decay=o["weight_decay"],
    )
    optim.step_count = o["step_count"]
    for name, arr in arrays.items():
        if name.startswith("optim."):
            pname, key = name[6:].rsplit(".", 1)
            optim.slots.setdefault(pname, {})[key] = arr.copy()

    state = EngineState(
        model=model,
        compressor=comp,
        books=books,
        reservoir=reservoir,
        optim=optim,
        rehearsal_n=meta["rehearsal_n"],
        num_classes=meta["num_classes"],
        rng=_rng_from_json(meta["rng"]),
        crop_range=tuple(meta["crop_range"]),
        augment=meta["augment"],
        sample_with_replacement=meta["sample_with_replacement"],
        current_task=meta["current_task"],
        global_step=meta["global_step"],
        frozen_digest=dict(meta["frozen_digest"]),
        seen_classes=set(meta["seen_classes"]),
    )
    if frozen_checksums(state) != state.frozen_digest:
        raise CheckpointError(f"{path}: frozen parameter digests do not match stored values")

    records = [MetricRecord(*row) for row in meta["records"]]
    return CheckpointBundle(state, cfg, meta["config_text"], records)
