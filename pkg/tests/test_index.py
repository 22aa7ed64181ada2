import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drh.errors import (
    DuplicateImageId,
    LengthMismatch,
    MalformedHeader,
    VersionMismatch,
)
from drh.hashnet import HashCode, HashLayerParams, encode
from drh.index import (
    HashIndex,
    IndexRecord,
    build_index,
    hamming,
    hamming_many,
    load_index,
    save_index,
    scan_global,
)
from drh.pooling import roi_max_pool
from drh.regions import RegionBox, SlidingWindowConfig, propose_regions

from conftest import make_map, naive_hamming


def random_code(rng, bits=64):
    n_words = (bits + 63) // 64
    words = rng.integers(0, 2**64, size=n_words, dtype=np.uint64)
    if bits % 64:
        words[-1] &= np.uint64((1 << (bits % 64)) - 1)
    return HashCode(bits, words)


def random_index(rng, n_records, bits=64, max_locals=5, map_w=6, map_h=6):
    records = []
    for i in range(n_records):
        n_local = int(rng.integers(0, max_locals + 1))
        locals_ = [
            (RegionBox(int(rng.integers(0, map_w - 1)), int(rng.integers(0, map_h - 1)), 1, 1),
             random_code(rng, bits))
            for _ in range(n_local)
        ]
        records.append(IndexRecord(f"img{i:04d}", map_w, map_h, random_code(rng, bits), locals_))
    return HashIndex(bits, records)


class TestHamming:
    def test_identity(self, rng):
        a = random_code(rng, 128)
        assert hamming(a, a) == 0

    def test_complement_64(self):
        a = HashCode(64, np.array([0x0123456789ABCDEF], dtype=np.uint64))
        b = HashCode(64, np.array([~np.uint64(0x0123456789ABCDEF)], dtype=np.uint64))
        assert hamming(a, b) == 64

    def test_random_1024_bit_pairs_vs_bit_loop(self, rng):
        for _ in range(25):
            a, b = random_code(rng, 1024), random_code(rng, 1024)
            assert hamming(a, b) == naive_hamming(a, b)

    def test_length_mismatch(self, rng):
        with pytest.raises(LengthMismatch):
            hamming(random_code(rng, 64), random_code(rng, 128))

    def test_kernel_matches_scalar(self, rng):
        mat = rng.integers(0, 2**64, size=(40, 3), dtype=np.uint64)
        q = rng.integers(0, 2**64, size=3, dtype=np.uint64)
        dists = hamming_many(mat, q)
        for i in range(40):
            assert dists[i] == hamming(HashCode(192, mat[i]), HashCode(192, q))


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bits=st.sampled_from([1, 63, 64, 65, 256, 1024]))
def test_hamming_metric_properties(seed, bits):
    rng = np.random.default_rng(seed)
    a, b, c = (random_code(rng, bits) for _ in range(3))
    assert hamming(a, a) == 0
    assert hamming(a, b) == hamming(b, a)
    assert hamming(a, b) <= hamming(a, c) + hamming(c, b)
    assert 0 <= hamming(a, b) <= bits


class TestBuildIndex:
    def test_empty_stream(self):
        params = HashLayerParams(np.zeros((8, 4)), np.zeros(8))
        index = build_index([], params, SlidingWindowConfig())
        assert len(index) == 0

    def test_single_cell_map(self, rng):
        fm = make_map(rng, image_id="one", width_c=1, height_c=1, channels=4)
        params = HashLayerParams(rng.standard_normal((8, 4)), np.zeros(8))
        index = build_index([fm], params, SlidingWindowConfig())
        rec = index.record("one")
        assert rec.global_code == encode(params, fm.data[0, 0].astype(np.float64))
        assert rec.locals == []

    def test_recompute_from_scratch_oracle(self, rng):
        params = HashLayerParams(rng.standard_normal((16, 4)) * 0.4, rng.standard_normal(16) * 0.1)
        cfg = SlidingWindowConfig()
        maps = [make_map(rng, image_id=f"m{i}", width_c=9, height_c=7) for i in range(10)]
        index = build_index(maps, params, cfg)
        assert [r.image_id for r in index.records] == [f"m{i}" for i in range(10)]
        for fm, rec in zip(maps, index.records):
            boxes = propose_regions(fm, fm.width_c * fm.stride, fm.height_c * fm.stride, cfg)
            global_box = boxes[0]
            assert rec.global_code == encode(params, roi_max_pool(fm, global_box))
            assert [b for b, _ in rec.locals] == boxes[1:]
            for box, code in rec.locals:
                assert code == encode(params, roi_max_pool(fm, box))

    def test_duplicate_image_id(self, rng):
        params = HashLayerParams(np.zeros((4, 4)), np.zeros(4))
        maps = [make_map(rng, image_id="dup"), make_map(rng, image_id="dup")]
        with pytest.raises(DuplicateImageId):
            build_index(maps, params, SlidingWindowConfig())


class TestScanGlobal:
    def test_exact_match_first(self, rng):
        index = random_index(rng, 30)
        target = index.records[17].global_code
        ranked = scan_global(index, target, 5)
        assert ranked[0] == ("img0017", 0)

    def test_m_larger_than_index(self, rng):
        index = random_index(rng, 7)
        assert len(scan_global(index, random_code(rng), 100)) == 7

    def test_matches_full_sort_oracle(self, rng):
        index = random_index(rng, 1000, bits=64)
        q = random_code(rng, 64)
        got = scan_global(index, q, 50)
        oracle = sorted(
            ((hamming(q, rec.global_code), i) for i, rec in enumerate(index.records)),
        )[:50]
        assert got == [(index.records[i].image_id, d) for d, i in oracle]

    def test_stable_ties(self, rng):
        code = random_code(rng, 64)
        records = [IndexRecord(f"r{i}", 4, 4, code, []) for i in range(6)]
        index = HashIndex(64, records)
        assert [i for i, _ in scan_global(index, code, 6)] == [f"r{i}" for i in range(6)]

    def test_length_mismatch(self, rng):
        index = random_index(rng, 3, bits=64)
        with pytest.raises(LengthMismatch):
            scan_global(index, random_code(rng, 128), 2)

    def test_empty_index(self, rng):
        index = HashIndex(64, [])
        assert scan_global(index, random_code(rng, 64), 10) == []


class TestIndexFile:
    def test_empty_round_trip(self, tmp_path):
        index = HashIndex(96, [])
        path = tmp_path / "e.drhi"
        save_index(index, path)
        back = load_index(path)
        assert back.bits_len == 96 and len(back) == 0

    def test_random_round_trip(self, tmp_path, rng):
        index = random_index(rng, 12, bits=130)
        path = tmp_path / "r.drhi"
        save_index(index, path)
        back = load_index(path)
        assert back.bits_len == index.bits_len
        assert len(back) == len(index)
        for a, b in zip(index.records, back.records):
            assert a.image_id == b.image_id
            assert (a.map_w, a.map_h) == (b.map_w, b.map_h)
            assert a.global_code == b.global_code
            assert a.locals == b.locals

    def test_write_read_write_idempotent(self, tmp_path, rng):
        index = random_index(rng, 5)
        p1, p2 = tmp_path / "a.drhi", tmp_path / "b.drhi"
        save_index(index, p1)
        save_index(load_index(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "bad.drhi"
        path.write_bytes(b"ZZZZ" + b"\x00" * 20)
        with pytest.raises(MalformedHeader):
            load_index(path)

    def test_version_mismatch(self, tmp_path):
        import struct

        path = tmp_path / "v.drhi"
        path.write_bytes(b"DRHI" + struct.pack("<IIQ", 9, 64, 0))
        with pytest.raises(VersionMismatch):
            load_index(path)

    def test_mixed_bit_lengths_rejected(self, rng):
        records = [
            IndexRecord("a", 4, 4, random_code(rng, 64), []),
            IndexRecord("b", 4, 4, random_code(rng, 128), []),
        ]
        with pytest.raises(LengthMismatch):
            HashIndex(64, records)
