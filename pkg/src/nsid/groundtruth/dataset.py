"""Stimulus/response datasets and their single-file binary container.

Layout (all integers little-endian)::

    b"NSID"  u32 version  u32 n_sections
    per section: u16 name_len, name (utf-8), u8 kind, u8 ndim, u64 dims[ndim]
    payloads in declared order: f64 / i64 raw arrays, or utf-8 text

``kind`` is 0 for float64, 1 for int64, 2 for text (``dims == [n_bytes]``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NSID"
VERSION = 1
KIND_F64, KIND_I64, KIND_TEXT = 0, 1, 2


class DatasetFormatError(ValueError):
    code = "format"


class BadMagicError(DatasetFormatError):
    code = "bad-magic"


class VersionMismatchError(DatasetFormatError):
    code = "version"


class TruncatedFileError(DatasetFormatError):
    code = "truncated"


class ShapeHeaderError(DatasetFormatError):
    code = "shape-header"


def write_container(path: str | Path, sections: dict[str, object]) -> None:
    """Write named arrays (float or integer) and strings to ``path``."""
    header = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    payloads = []
    for name, value in sections.items():
        if isinstance(value, str):
            blob = value.encode("utf-8")
            kind, dims = KIND_TEXT, (len(blob),)
        else:
            arr = np.asarray(value)
            if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
                kind, arr = KIND_I64, arr.astype("<i8")
            else:
                kind, arr = KIND_F64, arr.astype("<f8")
            blob, dims = np.ascontiguousarray(arr).tobytes(), arr.shape
        encoded = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded)) + encoded + struct.pack("<BB", kind, len(dims)))
        header.append(struct.pack(f"<{len(dims)}Q", *dims))
        payloads.append(blob)
    Path(path).write_bytes(b"".join(header + payloads))


def read_container(path: str | Path) -> dict[str, object]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an NSID container")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedFileError(f"{path}: file ends inside the header or payload")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    version, n_sections = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionMismatchError(f"{path}: container version {version}, expected {VERSION}")
    decls = []
    for _ in range(n_sections):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        kind, ndim = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        if kind not in (KIND_F64, KIND_I64, KIND_TEXT) or (kind == KIND_TEXT and ndim != 1):
            raise ShapeHeaderError(f"{path}: section {name!r} has an invalid kind/shape declaration")
        decls.append((name, kind, dims))
    out: dict[str, object] = {}
    for name, kind, dims in decls:
        count = int(np.prod(dims)) if dims else 1
        if kind == KIND_TEXT:
            out[name] = take(count).decode("utf-8")
        else:
            dtype = "<f8" if kind == KIND_F64 else "<i8"
            out[name] = np.frombuffer(take(8 * count), dtype=dtype).reshape(dims).copy()
    if pos != len(raw):
        raise ShapeHeaderError(f"{path}: {len(raw) - pos} trailing bytes beyond the declared sections")
    return out


SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class Dataset:
    """Paired stimuli and responses.

    ``rates`` (noiseless responses) exist only for simulated data.
    ``repeats`` holds repeated presentations of the test stimuli,
    shape ``[S_test, R, N]``, aligned with ``splits['test']``.
    """

    stimuli: np.ndarray
    responses: np.ndarray
    rates: np.ndarray | None = None
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    repeats: np.ndarray | None = None
    locations: np.ndarray | None = None
    type_ids: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stimuli.ndim != 4:
            raise ValueError(f"stimuli must be [S,C,H,W], got {self.stimuli.shape}")
        if self.responses.ndim != 2 or self.responses.shape[0] != self.stimuli.shape[0]:
            raise ValueError("responses must be [S,N] with S matching the stimuli")
        if self.rates is not None and self.rates.shape != self.responses.shape:
            raise ValueError("rates must match responses in shape")
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}
        seen = np.concatenate([v for v in self.splits.values()]) if self.splits else np.array([], dtype=np.int64)
        if len(np.unique(seen)) != len(seen):
            raise ValueError("splits overlap or repeat an index")
        if len(seen) and (seen.min() < 0 or seen.max() >= self.n_samples):
            raise ValueError("split index out of range")

    @property
    def n_samples(self) -> int:
        return self.stimuli.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.responses.shape[1]

    @property
    def is_synthetic(self) -> bool:
        return self.rates is not None

    def split(self, name: str) -> np.ndarray:
        return self.splits.get(name, np.array([], dtype=np.int64))

    def subset_neurons(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.stimuli, self.responses[:, idx],
            None if self.rates is None else self.rates[:, idx], dict(self.splits),
            None if self.repeats is None else self.repeats[:, :, idx],
            None if self.locations is None else self.locations[idx],
            None if self.type_ids is None else self.type_ids[idx], dict(self.meta),
        )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    sections: dict[str, object] = {"stimuli": ds.stimuli, "responses": ds.responses}
    for name in ("rates", "repeats", "locations", "type_ids"):
        value = getattr(ds, name)
        if value is not None:
            sections[name] = value
    for name, idx in ds.splits.items():
        sections[f"split:{name}"] = idx
    sections["meta"] = json.dumps(ds.meta, sort_keys=True)
    write_container(path, sections)


def load_dataset(path: str | Path) -> Dataset:
    sec = read_container(path)
    try:
        stimuli, responses = sec["stimuli"], sec["responses"]
    except KeyError as exc:
        raise ShapeHeaderError(f"{path}: missing section {exc}") from None
    splits = {k.split(":", 1)[1]: v for k, v in sec.items() if k.startswith("split:")}
    try:
        return Dataset(
            stimuli=stimuli, responses=responses, rates=sec.get("rates"), splits=splits,
            repeats=sec.get("repeats"), locations=sec.get("locations"), type_ids=sec.get("type_ids"),
            meta=json.loads(sec.get("meta", "{}")),
        )
    except ValueError as exc:
        raise ShapeHeaderError(f"{path}: {exc}") from None
