"""Single-file ``.rfae`` model container.

Layout (all integers little-endian)::

    b"RFAE" | u32 header_len | header JSON (utf-8)
    for each section: u64 byte_len | raw little-endian float64 / int64 data
    u32 CRC32 of every preceding byte

The header records the format version, the configuration and, for each
section, its name, dtype and shape, in file order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Normalizer
from .forest import Forest, Tree
from .kernel_extension import LinearExtension
from .model import RFAE, RFAEConfig
from .network import LossHistory, MlpSpec, NetworkWeights

MAGIC = b"RFAE"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


class BundleError(ValueError):
    pass


@dataclass
class ModelBundle:
    header: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def write_bundle(bundle: ModelBundle, path):
    sections, blobs = [], []
    for name, arr in bundle.arrays.items():
        arr = np.asarray(arr)
        kind = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        sections.append({"name": name, "dtype": kind, "shape": list(arr.shape)})
        blobs.append(data)
    header = dict(bundle.header)
    header["format_version"] = header.get("format_version", FORMAT_VERSION)
    header["sections"] = sections
    hbytes = json.dumps(header, sort_keys=True).encode()
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", len(hbytes))
    buf += hbytes
    for data in blobs:
        buf += struct.pack("<Q", len(data))
        buf += data
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def read_bundle(path) -> ModelBundle:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BundleError("not an .rfae file (bad magic or truncated)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise BundleError("checksum failure: file is corrupted")
    (hlen,) = struct.unpack_from("<I", body, 4)
    pos = 8 + hlen
    if pos > len(body):
        raise BundleError("truncated header")
    try:
        header = json.loads(body[8:pos].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"unreadable header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleError(f"unsupported version {version} (this build reads {FORMAT_VERSION})")
    arrays = {}
    for sec in header.get("sections", []):
        if pos + 8 > len(body):
            raise BundleError(f"truncated file at section {sec['name']!r}")
        (nbytes,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + nbytes > len(body):
            raise BundleError(f"truncated file at section {sec['name']!r}")
        arr = np.frombuffer(body[pos:pos + nbytes], dtype=_DTYPES[sec["dtype"]])
        arrays[sec["name"]] = arr.reshape(sec["shape"]).astype(arr.dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(body):
        raise BundleError("trailing bytes after last section")
    return ModelBundle(header, arrays)


# ---------------------------------------------------------------------------
# model <-> bundle
# ---------------------------------------------------------------------------

def to_bundle(model: RFAE) -> ModelBundle:
    model._check_fitted()
    f = model.forest
    a = {
        "normalizer_min": model.normalizer.minimum,
        "normalizer_max": model.normalizer.maximum,
        "x_train": model.x_train,
        "y_train": model.y_train,
        "medoids": model.medoids,
        "p_star": model.p_star,
        "target": model.target,
        "target_center": model.target_center,
        "tree_sizes": np.array([t.n_nodes for t in f.trees], dtype=np.int64),
        "tree_feature": np.concatenate([t.feature for t in f.trees]),
        "tree_threshold": np.concatenate([t.threshold for t in f.trees]),
        "tree_left": np.concatenate([t.left for t in f.trees]),
        "tree_right": np.concatenate([t.right for t in f.trees]),
        "tree_value": np.concatenate([t.value for t in f.trees]),
        "tree_inbag": f.inbag,
        "loss_recon": np.array(model.history.recon),
        "loss_geo": np.array(model.history.geo),
        "loss_total": np.array(model.history.total),
    }
    w = model.weights
    for k, (W, b) in enumerate(zip(w.weights, w.biases)):
        a[f"net_W{k}"] = np.asarray(W, dtype=np.float64)
        a[f"net_b{k}"] = np.asarray(b, dtype=np.float64)
    for name, ext in model.extensions.items():
        a[f"ext_{name}"] = ext.W
        if name == "nystrom":
            a["ext_nystrom_eigenvalues"] = ext.eigenvalues
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config_dict(),
        "spec": model.spec.to_dict(),
        "n_layers": len(w.weights),
        "net_dtype": str(np.dtype(w.weights[0].dtype)),
        "n_trees": f.n_trees,
        "n_train": f.n_train,
        "n_classes": f.n_classes,
        "n_features": int(model.x_train.shape[1]),
        "n_prototypes": int(model.medoids.size),
        "target_scale": model.target_scale,
        "extensions": sorted(model.extensions),
        "class_names": model.class_names,
    }
    return ModelBundle(header, a)


def from_bundle(bundle: ModelBundle) -> RFAE:
    h, a = bundle.header, bundle.arrays
    cfg = dict(h["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    model = RFAE(RFAEConfig(**cfg))
    model.normalizer = Normalizer(a["normalizer_min"], a["normalizer_max"])
    model.x_train = a["x_train"]
    model.y_train = a["y_train"]
    model.class_names = h.get("class_names")
    model.medoids = a["medoids"]
    model.p_star = a["p_star"]
    model.target = a["target"]
    model.target_center = a["target_center"]
    model.target_scale = float(h["target_scale"])

    trees, start = [], 0
    for t, size in enumerate(a["tree_sizes"]):
        sl = slice(start, start + int(size))
        trees.append(Tree(a["tree_feature"][sl], a["tree_threshold"][sl], a["tree_left"][sl],
                          a["tree_right"][sl], a["tree_value"][sl], a["tree_inbag"][t]))
        start += int(size)
    model.forest = Forest.from_trees(trees, model.x_train, h["n_classes"])

    s = h["spec"]
    model.spec = MlpSpec(s["input_dim"], tuple(s["encoder_hidden"]), s["latent_dim"],
                         s["clamp_hidden"])
    dt = np.dtype(h["net_dtype"])
    model.weights = NetworkWeights(
        [a[f"net_W{k}"].astype(dt) for k in range(h["n_layers"])],
        [a[f"net_b{k}"].astype(dt) for k in range(h["n_layers"])])
    model.history = LossHistory(list(a["loss_recon"]), list(a["loss_geo"]),
                                list(a["loss_total"]))
    for name in h["extensions"]:
        ext = LinearExtension(a[f"ext_{name}"], name)
        if name == "nystrom":
            ext.eigenvalues = a["ext_nystrom_eigenvalues"]
            ext.eigenvectors = ext.W * ext.eigenvalues
        model.extensions[name] = ext
    return model


def save(model: RFAE, path):
    write_bundle(to_bundle(model), path)


def load(path) -> RFAE:
    return from_bundle(read_bundle(path))
