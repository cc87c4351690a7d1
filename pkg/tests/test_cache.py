"""Feature/mask cache: round-trips, misses, corruption, engine keying."""

import numpy as np

from objsim.cache import FeatureCache, content_hash_array, content_hash_file
from objsim.inference import ForegroundMask, PatchFeatureGrid


def _grid(seed=0, with_token=True):
    rng = np.random.default_rng(seed)
    grid = rng.standard_normal((24, 24, 6)).astype(np.float32)
    token = rng.standard_normal(6).astype(np.float32) if with_token else None
    return PatchFeatureGrid(grid, token)


def test_grid_roundtrip_bit_exact(tmp_path):
    cache = FeatureCache(tmp_path)
    grid = _grid()
    cache.put_grid("img1", "engA", grid)
    out = cache.get_grid("img1", "engA")
    assert np.array_equal(out.grid, grid.grid)
    assert out.grid.tobytes() == grid.grid.tobytes()
    assert np.array_equal(out.global_token, grid.global_token)


def test_grid_roundtrip_without_token(tmp_path):
    cache = FeatureCache(tmp_path)
    cache.put_grid("img1", "engA", _grid(with_token=False))
    assert cache.get_grid("img1", "engA").global_token is None


def test_cold_cache_misses(tmp_path):
    cache = FeatureCache(tmp_path)
    assert cache.get_grid("img1", "engA") is None
    assert cache.get_mask("img1", "engA") is None


def test_engines_never_alias(tmp_path):
    cache = FeatureCache(tmp_path)
    cache.put_grid("img1", "engA", _grid(1))
    cache.put_grid("img1", "engB", _grid(2))
    a = cache.get_grid("img1", "engA")
    b = cache.get_grid("img1", "engB")
    assert not np.array_equal(a.grid, b.grid)


def test_corrupt_entry_is_a_miss(tmp_path, caplog):
    cache = FeatureCache(tmp_path)
    cache.put_grid("img1", "engA", _grid())
    entry = next(tmp_path.glob("*.grid.ismx"))
    entry.write_bytes(entry.read_bytes()[:40])
    with caplog.at_level("WARNING"):
        assert cache.get_grid("img1", "engA") is None
    assert any("corrupt cache entry" in r.message for r in caplog.records)


def test_corrupt_sidecar_is_a_miss(tmp_path):
    cache = FeatureCache(tmp_path)
    cache.put_grid("img1", "engA", _grid())
    sidecar = next(tmp_path.glob("*.grid.ismx.json"))
    sidecar.write_text("{not json")
    assert cache.get_grid("img1", "engA") is None


def test_mask_roundtrip(tmp_path):
    cache = FeatureCache(tmp_path)
    rng = np.random.default_rng(4)
    mask = ForegroundMask(rng.random((336, 336)).astype(np.float32))
    cache.put_mask("img9", "engA", mask)
    out = cache.get_mask("img9", "engA")
    assert np.array_equal(out.alpha, mask.alpha)


def test_put_overwrites(tmp_path):
    cache = FeatureCache(tmp_path)
    cache.put_grid("img1", "engA", _grid(1))
    cache.put_grid("img1", "engA", _grid(2))
    assert np.array_equal(cache.get_grid("img1", "engA").grid, _grid(2).grid)


def test_content_hashes(tmp_path):
    f = tmp_path / "a.bin"
    f.write_bytes(b"hello")
    g = tmp_path / "b.bin"
    g.write_bytes(b"hello")
    assert content_hash_file(f) == content_hash_file(g)
    arr = np.arange(4, dtype=np.float32)
    assert content_hash_array(arr) == content_hash_array(arr.copy())
    assert content_hash_array(arr) != content_hash_array(arr.astype(np.float64))
