"""Embedding records: ingestion, binary cache persistence, batching, and
synthetic dataset generators for desk-scale verification.

Cache file layout (little-endian throughout):

    header, exactly 32 bytes:
        magic       4s   b"FRVL"
        version     u16  currently 1
        dtype       u8   0 = f32, 1 = f16
        label_kind  u8   0 = none, 1 = class (u32), 2 = scalar (f32)
        d_v         u32
        d_t         u32
        record_count u64
        reserved    8 bytes, zero
    then record_count fixed-width records:
        id (u64) + image vector (d_v * w) + text vector (d_t * w) + label
        with w = 4 (f32) or 2 (f16); label is 0/4/4 bytes by kind.

Files are immutable once written (write to temp + atomic rename). f16
vectors are re-normalized on read to restore the unit-norm invariant lost to
quantization.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CorruptCacheError, DataError, ZeroNormError
from .kernel import RngState, l2_normalize

MAGIC = b"FRVL"
VERSION = 1
HEADER_FMT = "<4sHBBIIQ8x"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
assert HEADER_SIZE == 32

DTYPE_CODES = {"f32": 0, "f16": 1}
DTYPE_NAMES = {v: k for k, v in DTYPE_CODES.items()}
LABEL_CODES = {"none": 0, "class": 1, "scalar": 2}
LABEL_NAMES = {v: k for k, v in LABEL_CODES.items()}
UNIT_NORM_TOL = 1e-3


@dataclass(frozen=True)
class CacheHeader:
    dtype: str
    label_kind: str
    d_v: int
    d_t: int
    record_count: int
    version: int = VERSION


@dataclass
class EmbeddingRecord:
    id: int
    image_vec: np.ndarray
    text_vec: np.ndarray
    label: int | float | None = None


@dataclass(frozen=True)
class SyntheticSpec:
    task: str  # matching | bottleneck
    n_samples: int
    d_v: int
    d_t: int
    seed: int
    bottleneck_hidden_dim: int = 8
    match_noise: float = 0.25
    label_in_retained: bool = False  # bottleneck control variant

    def __post_init__(self):
        if self.task not in ("matching", "bottleneck"):
            raise ValueError(f"unknown synthetic task {self.task!r}")
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100 for statistical checks")


def label_kind_of(label) -> str:
    if label is None:
        return "none"
    if isinstance(label, (int, np.integer)):
        return "class"
    return "scalar"


def normalize_and_ingest(raw_image, raw_text, id: int,
                         label=None) -> EmbeddingRecord:
    """L2-normalize both raw vectors and build a record. Zero-norm inputs
    are rejected with the offending id in the error."""
    try:
        v = l2_normalize(np.asarray(raw_image, dtype=np.float32))
        t = l2_normalize(np.asarray(raw_text, dtype=np.float32))
    except ZeroNormError as e:
        raise DataError(f"record id={id}: {e}") from e
    return EmbeddingRecord(id=int(id), image_vec=v, text_vec=t, label=label)


def record_size(d_v: int, d_t: int, dtype: str, label_kind: str) -> int:
    w = 4 if dtype == "f32" else 2
    label_bytes = 0 if label_kind == "none" else 4
    return 8 + d_v * w + d_t * w + label_bytes


def _record_numpy_dtype(d_v: int, d_t: int, dtype: str, label_kind: str):
    vec = "<f4" if dtype == "f32" else "<f2"
    fields = [("id", "<u8"), ("img", vec, (d_v,)), ("txt", vec, (d_t,))]
    if label_kind == "class":
        fields.append(("label", "<u4"))
    elif label_kind == "scalar":
        fields.append(("label", "<f4"))
    return np.dtype(fields)


def write_cache(records, path, dtype: str = "f32") -> dict:
    """Serialize records to path. Returns {bytes_written, record_count}."""
    records = list(records)
    if dtype not in DTYPE_CODES:
        raise ValueError(f"unknown dtype {dtype!r}")
    if records:
        d_v = records[0].image_vec.shape[0]
        d_t = records[0].text_vec.shape[0]
        label_kind = label_kind_of(records[0].label)
        ids = set()
        for r in records:
            if r.image_vec.shape != (d_v,) or r.text_vec.shape != (d_t,):
                raise DataError(f"record id={r.id}: heterogeneous dimensions")
            if label_kind_of(r.label) != label_kind:
                raise DataError(f"record id={r.id}: heterogeneous label kind")
            if r.id in ids:
                raise DataError(f"duplicate record id {r.id}")
            ids.add(r.id)
    else:
        d_v = d_t = 0
        label_kind = "none"

    header = struct.pack(HEADER_FMT, MAGIC, VERSION, DTYPE_CODES[dtype],
                         LABEL_CODES[label_kind], d_v, d_t, len(records))
    arr = np.zeros(len(records),
                   dtype=_record_numpy_dtype(d_v, d_t, dtype, label_kind))
    for i, r in enumerate(records):
        arr[i]["id"] = r.id
        arr[i]["img"] = r.image_vec  # f16 rounds to nearest even per IEEE 754
        arr[i]["txt"] = r.text_vec
        if label_kind != "none":
            arr[i]["label"] = r.label
    payload = header + arr.tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return {"bytes_written": len(payload), "record_count": len(records)}


def read_header(data: bytes) -> CacheHeader:
    if len(data) < HEADER_SIZE:
        raise CorruptCacheError("file shorter than header", len(data))
    magic, version, dtype_c, label_c, d_v, d_t, count = struct.unpack(
        HEADER_FMT, data[:HEADER_SIZE])
    if magic != MAGIC:
        raise CorruptCacheError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CorruptCacheError(f"unsupported version {version}", 4)
    if dtype_c not in DTYPE_NAMES:
        raise CorruptCacheError(f"unknown dtype code {dtype_c}", 6)
    if label_c not in LABEL_NAMES:
        raise CorruptCacheError(f"unknown label kind code {label_c}", 7)
    return CacheHeader(dtype=DTYPE_NAMES[dtype_c],
                       label_kind=LABEL_NAMES[label_c],
                       d_v=d_v, d_t=d_t, record_count=count, version=version)


def read_cache(path):
    """Returns (records, header). f32 round-trips bit-exactly; f16 vectors
    are re-normalized after widening."""
    with open(path, "rb") as fh:
        data = fh.read()
    header = read_header(data)
    rsize = record_size(header.d_v, header.d_t, header.dtype,
                        header.label_kind)
    expected = HEADER_SIZE + header.record_count * rsize
    if len(data) != expected:
        raise CorruptCacheError(
            f"truncated or oversized file: have {len(data)} bytes, "
            f"expected {expected}", min(len(data), expected))
    arr = np.frombuffer(
        data, dtype=_record_numpy_dtype(header.d_v, header.d_t, header.dtype,
                                        header.label_kind),
        count=header.record_count, offset=HEADER_SIZE)
    records = []
    for row in arr:
        img = np.asarray(row["img"], dtype=np.float32)
        txt = np.asarray(row["txt"], dtype=np.float32)
        if header.dtype == "f16":
            img = l2_normalize(img)
            txt = l2_normalize(txt)
        if header.label_kind == "class":
            label = int(row["label"])
        elif header.label_kind == "scalar":
            label = float(row["label"])
        else:
            label = None
        records.append(EmbeddingRecord(id=int(row["id"]), image_vec=img,
                                       text_vec=txt, label=label))
    return records, header


def import_tsv(path):
    """Import externally extracted embeddings: one record per line,
    `id <tab> label <tab> image floats <tab> text floats` (floats
    comma-separated); normalization happens on ingest."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, "
                    f"got {len(parts)}")
            rid, label_s, img_s, txt_s = parts
            if label_s in ("", "none"):
                label = None
            elif "." in label_s or "e" in label_s.lower():
                label = float(label_s)
            else:
                label = int(label_s)
            img = np.array([float(x) for x in img_s.split(",")],
                           dtype=np.float32)
            txt = np.array([float(x) for x in txt_s.split(",")],
                           dtype=np.float32)
            records.append(normalize_and_ingest(img, txt, int(rid), label))
    return records


def make_batches(records, batch_size: int, rng: RngState,
                 drop_last: bool = False):
    """Deterministically shuffled batches. Row i of the image and text
    tensors come from the same record, so the in-batch score matrix has its
    positives on the diagonal."""
    n = len(records)
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds record count {n}")
    perm = rng.generator().permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if drop_last and idx.size < batch_size:
            break
        V = np.stack([records[i].image_vec for i in idx])
        T = np.stack([records[i].text_vec for i in idx])
        labels = np.array([records[i].label for i in idx])
        batches.append((V, T, labels))
    return batches


def _unit_sphere(gen, n, d):
    x = gen.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def synth_matching_task(spec: SyntheticSpec):
    """Balanced image-text matching. Positives pair an image vector with a
    small perturbation of itself (mapped through a fixed matrix when the
    text dimension differs); negatives pair independent draws."""
    if spec.task != "matching":
        raise ValueError("spec.task must be 'matching'")
    gen = RngState(spec.seed).generator()
    n, d_v, d_t = spec.n_samples, spec.d_v, spec.d_t
    if d_v == d_t:
        M = None
    else:
        M = gen.standard_normal((d_t, d_v)) / np.sqrt(d_v)
    V = _unit_sphere(gen, n, d_v)
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    labels = labels[gen.permutation(n)]
    noise = gen.standard_normal((n, d_t))
    indep = _unit_sphere(gen, n, d_v)
    records = []
    for i in range(n):
        src = V[i] if labels[i] == 1 else indep[i]
        base = src if M is None else M @ src
        t = base + spec.match_noise * noise[i]
        records.append(EmbeddingRecord(
            id=i, image_vec=V[i].astype(np.float32),
            text_vec=l2_normalize(t).astype(np.float32),
            label=int(labels[i])))
    return records


def synth_bottleneck_task(spec: SyntheticSpec):
    """Information-bottleneck task: the label is a deterministic function of
    latent coordinates that the stored embedding annihilates, so no classifier
    on (v, t) can beat chance. With label_in_retained=True the label instead
    reads the retained subspace (control: information present)."""
    if spec.task != "bottleneck":
        raise ValueError("spec.task must be 'bottleneck'")
    gen = RngState(spec.seed).generator()
    n, d_v, d_t, k = (spec.n_samples, spec.d_v, spec.d_t,
                      spec.bottleneck_hidden_dim)
    w_hidden = gen.standard_normal(k)
    w_retained = gen.standard_normal(d_v)
    U = gen.standard_normal((n, d_v + k))
    T = _unit_sphere(gen, n, d_t)  # independent noise
    records = []
    for i in range(n):
        u = U[i]
        if spec.label_in_retained:
            y = int(u[:d_v] @ w_retained > 0)
        else:
            y = int(u[d_v:] @ w_hidden > 0)
        records.append(EmbeddingRecord(
            id=i, image_vec=l2_normalize(u[:d_v]).astype(np.float32),
            text_vec=T[i].astype(np.float32), label=y))
    return records


def generate_synthetic(spec: SyntheticSpec):
    if spec.task == "matching":
        return synth_matching_task(spec)
    return synth_bottleneck_task(spec)
