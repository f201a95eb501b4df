import numpy as np
import pytest

from eoppg._rng import derive_seed, substream


def test_substream_depends_only_on_key():
    a = substream(1, 2, "x").standard_normal(5)
    b = substream(1, 2, "x").standard_normal(5)
    c = substream(1, 2, "y").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, "data", 800, 3) == derive_seed(0, "data", 800, 3)
    assert derive_seed(0, "data", 800, 3) != derive_seed(0, "data", 800, 4)
    assert 0 <= derive_seed(5) < 2**63


def test_negative_or_unsupported_keys_rejected():
    with pytest.raises(ValueError):
        substream(-1)
    with pytest.raises(TypeError):
        substream(1.5)
