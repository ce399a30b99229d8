"""End-to-end model fit plus ``.rfae`` persistence round trips."""

import struct

import numpy as np
import pytest

from rfae import persistence
from rfae.model import EXTENSIONS, RFAE, RFAEConfig, StageError, stage_seed
from rfae.persistence import BundleError, ModelBundle, read_bundle, write_bundle

SMALL = dict(n_trees=60, epochs=15, batch_size=64, hidden=(32, 16), seed=3)


@pytest.fixture(scope="module")
def fitted(small_tree):
    X, y = small_tree.features, small_tree.labels
    rng = np.random.default_rng(0)
    idx = rng.permutation(len(y))
    tr, te = idx[:180], idx[180:]
    model = RFAE(RFAEConfig(**SMALL)).fit(X[tr], y[tr])
    return model, X[te], y[te]


def test_stage_seed_stable_and_distinct():
    assert stage_seed(0, "forest") == stage_seed(0, "forest")
    assert stage_seed(0, "forest") != stage_seed(0, "network")
    assert stage_seed(0, "forest") != stage_seed(1, "forest")


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_config_rejects_bad_lambda(lam):
    with pytest.raises(ValueError):
        RFAEConfig(lam=lam)


def test_fit_shapes(fitted):
    model, X_te, _ = fitted
    n = model.x_train.shape[0]
    assert model.p_star.shape == (n, model.medoids.size)
    np.testing.assert_allclose(model.p_star.sum(axis=1), 1.0)
    assert model.target.shape == (n, 2)
    for ext in EXTENSIONS:
        Z = model.transform(X_te, ext)
        assert Z.shape == (len(X_te), 2) and np.all(np.isfinite(Z))


def test_unknown_extension(fitted):
    with pytest.raises(ValueError):
        fitted[0].transform(fitted[1], "umap")


def test_transform_empty(fitted):
    model = fitted[0]
    assert model.transform(np.zeros((0, model.x_train.shape[1]))).shape == (0, 2)


def test_fit_deterministic(small_tree):
    X, y = small_tree.features, small_tree.labels
    a = RFAE(RFAEConfig(**SMALL)).fit(X[:150], y[:150])
    b = RFAE(RFAEConfig(**SMALL)).fit(X[:150], y[:150])
    np.testing.assert_array_equal(a.transform(X[150:]), b.transform(X[150:]))


def test_bad_target_rows(small_tree):
    X, y = small_tree.features, small_tree.labels
    with pytest.raises(StageError, match="row-count mismatch") as info:
        RFAE(RFAEConfig(**SMALL)).fit(X[:100], y[:100], target=np.zeros((99, 2)))
    assert info.value.stage == "target"


def test_external_target_is_used(small_tree):
    X, y = small_tree.features, small_tree.labels
    target = np.random.default_rng(0).normal(size=(100, 2))
    model = RFAE(RFAEConfig(**SMALL)).fit(X[:100], y[:100], target=target)
    np.testing.assert_allclose(model.target * model.target_scale + model.target_center, target)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_round_trip(fitted, tmp_path):
    model, X_te, _ = fitted
    path = tmp_path / "m.rfae"
    persistence.save(model, path)
    back = persistence.load(path)
    for ext in EXTENSIONS:
        np.testing.assert_allclose(back.transform(X_te, ext), model.transform(X_te, ext),
                                   rtol=0, atol=1e-12)
    assert back.class_names == model.class_names
    assert back.config_dict() == model.config_dict()
    np.testing.assert_array_equal(back.history.total, model.history.total)


def test_bundle_round_trip_dtypes(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.int64).reshape(2, 3), "b": np.array([1.5, -2.0]),
              "empty": np.zeros((0, 4))}
    write_bundle(ModelBundle({"x": 1}, arrays), tmp_path / "b.rfae")
    back = read_bundle(tmp_path / "b.rfae")
    assert back.header["x"] == 1
    for k, v in arrays.items():
        np.testing.assert_array_equal(back.arrays[k], v)
        assert back.arrays[k].dtype == v.dtype


@pytest.fixture
def bundle_bytes(tmp_path):
    path = tmp_path / "b.rfae"
    write_bundle(ModelBundle({}, {"a": np.arange(10.0)}), path)
    return path, bytearray(path.read_bytes())


def test_corrupted_byte(bundle_bytes):
    path, raw = bundle_bytes
    raw[-20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(BundleError, match="checksum"):
        read_bundle(path)


def test_bad_magic(bundle_bytes):
    path, raw = bundle_bytes
    path.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(BundleError, match="not an .rfae"):
        read_bundle(path)


def test_truncated(bundle_bytes):
    path, raw = bundle_bytes
    path.write_bytes(bytes(raw[:-30]))
    with pytest.raises(BundleError):
        read_bundle(path)


def test_truncated_section_with_valid_checksum(tmp_path):
    import zlib
    path = tmp_path / "b.rfae"
    write_bundle(ModelBundle({}, {"a": np.arange(10.0)}), path)
    body = path.read_bytes()[:-4 - 16]
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(BundleError, match="truncated"):
        read_bundle(path)


def test_newer_version(tmp_path):
    path = tmp_path / "v.rfae"
    write_bundle(ModelBundle({"format_version": 99}, {}), path)
    with pytest.raises(BundleError, match="unsupported version"):
        read_bundle(path)
