"""Persistent store of per-image hash codes with an exhaustive Hamming scanner.

Codes are packed into 64-bit words; the scan XORs word-for-word and
popcounts via a compiled kernel, which is what makes the exhaustive scan
viable at the 100k-record scale.

Index file layout (DRHI, little-endian):
    magic "DRHI" | u32 version=1 | u32 bits_len | u64 record count |
    per record:
        u32 id_len | id UTF-8 | u32 map_w | u32 map_h |
        global code words (u64 each) | u32 local count |
        per local: u32 x0, y0, w, h | code words
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import (
    DimensionMismatch,
    DuplicateImageId,
    IoFailure,
    LengthMismatch,
    MalformedHeader,
    VersionMismatch,
)
from .hashnet import WORD_BITS, HashCode, HashLayerParams, encode_words
from .pooling import pool_boxes
from .regions import RegionBox, SlidingWindowConfig, propose_for_dims

INDEX_MAGIC = b"DRHI"
INDEX_VERSION = 1

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@njit(cache=True, parallel=True)
def _hamming_scan(mat, q):
    """Hamming distance of every row of mat to q (uint64 words, SWAR popcount)."""
    n, w = mat.shape
    out = np.empty(n, dtype=np.int64)
    for i in prange(n):
        acc = np.uint64(0)
        for j in range(w):
            x = mat[i, j] ^ q[j]
            x = x - ((x >> np.uint64(1)) & _M1)
            x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
            x = (x + (x >> np.uint64(4))) & _M4
            acc += (x * _H01) >> np.uint64(56)
        out[i] = acc
    return out


def hamming_many(words_matrix: np.ndarray, q_words: np.ndarray) -> np.ndarray:
    """Distances from one packed query to an (n, n_words) code matrix."""
    if words_matrix.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if words_matrix.shape[1] != q_words.shape[0]:
        raise LengthMismatch(
            f"query has {q_words.shape[0]} words, matrix has {words_matrix.shape[1]}"
        )
    return _hamming_scan(
        np.ascontiguousarray(words_matrix), np.ascontiguousarray(q_words)
    )


def hamming(a: HashCode, b: HashCode) -> int:
    """Number of differing bits via word-wise XOR + popcount."""
    if a.bits_len != b.bits_len:
        raise LengthMismatch(f"code lengths differ: {a.bits_len} vs {b.bits_len}")
    return sum(int(x ^ y).bit_count() for x, y in zip(a.words, b.words))


@dataclass
class IndexRecord:
    """Per-image entry: global code plus local (box, code) pairs."""

    image_id: str
    map_w: int
    map_h: int
    global_code: HashCode
    locals: list[tuple[RegionBox, HashCode]] = field(default_factory=list)

    def __post_init__(self):
        for box, code in self.locals:
            if not box.fits(self.map_w, self.map_h):
                raise DimensionMismatch(
                    f"{self.image_id!r}: local box {box} exceeds map {self.map_w}x{self.map_h}"
                )
            if code.bits_len != self.global_code.bits_len:
                raise LengthMismatch(f"{self.image_id!r}: mixed code lengths in one record")
        self._local_words = (
            np.stack([code.words for _, code in self.locals])
            if self.locals
            else np.empty((0, self.global_code.words.shape[0]), dtype=np.uint64)
        )

    @property
    def local_words(self) -> np.ndarray:
        return self._local_words


class HashIndex:
    """Immutable ordered collection of IndexRecords with uniform code length."""

    def __init__(self, bits_len: int, records: list[IndexRecord]):
        self.bits_len = bits_len
        self.records = list(records)
        self._lookup: dict[str, int] = {}
        for pos, rec in enumerate(self.records):
            if rec.image_id in self._lookup:
                raise DuplicateImageId(rec.image_id)
            if rec.global_code.bits_len != bits_len:
                raise LengthMismatch(
                    f"{rec.image_id!r}: {rec.global_code.bits_len}-bit code in {bits_len}-bit index"
                )
            self._lookup[rec.image_id] = pos
        n_words = (bits_len + WORD_BITS - 1) // WORD_BITS
        self.global_words = (
            np.stack([rec.global_code.words for rec in self.records])
            if self.records
            else np.empty((0, n_words), dtype=np.uint64)
        )

    def __len__(self) -> int:
        return len(self.records)

    def record(self, image_id: str) -> IndexRecord:
        return self.records[self._lookup[image_id]]

    def position(self, image_id: str) -> int:
        return self._lookup[image_id]


def build_index(
    maps,
    params: HashLayerParams,
    cfg: SlidingWindowConfig,
    image_dims=None,
) -> HashIndex:
    """Encode every feature map into one IndexRecord, in input order.

    image_dims maps image_id to original (width, height) pixels for the
    aspect filter; missing entries fall back to stride-derived dims. The
    global code always comes from the whole-map box; locals are the
    sliding-window proposals minus that box.
    """
    records = []
    seen: set[str] = set()
    for fm in maps:
        if fm.image_id in seen:
            raise DuplicateImageId(fm.image_id)
        seen.add(fm.image_id)
        if image_dims and fm.image_id in image_dims:
            img_w, img_h = image_dims[fm.image_id]
        else:
            img_w, img_h = fm.width_c * fm.stride, fm.height_c * fm.stride
        global_box = RegionBox(0, 0, fm.width_c, fm.height_c)
        local_boxes = [
            box
            for box in propose_for_dims(fm.width_c, fm.height_c, img_w, img_h, cfg)
            if box != global_box
        ]
        boxes = [global_box] + local_boxes
        words = encode_words(params, pool_boxes(fm, boxes))
        global_code = HashCode(params.bits, words[0])
        locals_ = [
            (box, HashCode(params.bits, words[i + 1])) for i, box in enumerate(local_boxes)
        ]
        records.append(IndexRecord(fm.image_id, fm.width_c, fm.height_c, global_code, locals_))
    return HashIndex(params.bits, records)


def scan_global(index: HashIndex, q: HashCode, m: int) -> list[tuple[str, int]]:
    """The m smallest global-code distances, ascending, ties by record order."""
    if q.bits_len != index.bits_len:
        raise LengthMismatch(f"query is {q.bits_len}-bit, index is {index.bits_len}-bit")
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    if not index.records:
        return []
    distances = hamming_many(index.global_words, q.words)
    order = np.argsort(distances, kind="stable")[:m]
    return [(index.records[i].image_id, int(distances[i])) for i in order]


def save_index(index: HashIndex, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<IIQ", INDEX_VERSION, index.bits_len, len(index.records)))
            for rec in index.records:
                id_bytes = rec.image_id.encode("utf-8")
                fh.write(struct.pack("<I", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(struct.pack("<II", rec.map_w, rec.map_h))
                fh.write(rec.global_code.words.astype("<u8").tobytes())
                fh.write(struct.pack("<I", len(rec.locals)))
                for box, code in rec.locals:
                    fh.write(struct.pack("<IIII", box.x0, box.y0, box.w, box.h))
                    fh.write(code.words.astype("<u8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_index(path) -> HashIndex:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    view = memoryview(raw)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(raw):
            raise DimensionMismatch(f"{path}: truncated at byte {offset}")
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != INDEX_MAGIC:
        raise MalformedHeader(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != INDEX_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    bits_len, count = struct.unpack("<IQ", take(12))
    n_words = (bits_len + WORD_BITS - 1) // WORD_BITS

    def read_code() -> HashCode:
        words = np.frombuffer(take(8 * n_words), dtype="<u8").astype(np.uint64)
        return HashCode(bits_len, words)

    records = []
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        image_id = bytes(take(id_len)).decode("utf-8")
        map_w, map_h = struct.unpack("<II", take(8))
        global_code = read_code()
        (n_local,) = struct.unpack("<I", take(4))
        locals_ = []
        for _ in range(n_local):
            x0, y0, w, h = struct.unpack("<IIII", take(16))
            locals_.append((RegionBox(x0, y0, w, h), read_code()))
        records.append(IndexRecord(image_id, map_w, map_h, global_code, locals_))
    if offset != len(raw):
        raise DimensionMismatch(f"{path}: {len(raw) - offset} trailing bytes")
    return HashIndex(bits_len, records)
