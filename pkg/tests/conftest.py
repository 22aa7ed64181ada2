import numpy as np
import pytest

from drh.featmap import FeatureMap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_map(rng, image_id="img", width_c=8, height_c=6, channels=4, stride=16, scale=1.0):
    data = rng.standard_normal((height_c, width_c, channels)).astype(np.float32) * scale
    return FeatureMap(image_id, width_c, height_c, channels, stride, data)


def bit_at(code, i):
    """Spec-layout bit extraction: word i//64, position i%64."""
    return (int(code.words[i // 64]) >> (i % 64)) & 1


def naive_hamming(a, b):
    """Per-bit loop oracle, independent of the packed XOR/popcount path."""
    assert a.bits_len == b.bits_len
    return sum(bit_at(a, i) != bit_at(b, i) for i in range(a.bits_len))
