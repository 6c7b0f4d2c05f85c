"""On-disk model bundle.

A bundle is a directory::

    manifest.json        format version, config, seed, artifact digests
    params.bin/.json     model parameters (raw little-endian blob + index)
    vocab.json           executable vocabulary
    location.bin/.json   location encoder weights + metadata
    clusters.json        benign mix-up map, executable -> sorted executables
    train_report.json    losses and F1 scores

Every file except the manifest's ``created_at`` field is a pure function of
the trained model, so two identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np

from .encode import ExecutableVocab
from .errors import ConfigError
from .location import LocationEncoder
from .neural import ModelShape, check_params
from .trainer import TrainConfig, TrainedModel, TrainReport, clusters_from_json

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
ARTIFACTS = {
    "params": ("params.json", "params.bin"),
    "vocab": ("vocab.json",),
    "location": ("location.json", "location.bin"),
    "clusters": ("clusters.json",),
    "train_report": ("train_report.json",),
}


def _package_version() -> str:
    from . import __version__
    return __version__


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _pack(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    index, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        index.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return index, b"".join(chunks)


def _unpack(index: list[dict], blob: bytes) -> dict[str, np.ndarray]:
    out = {}
    for item in index:
        raw = blob[item["offset"]: item["offset"] + item["nbytes"]]
        if len(raw) != item["nbytes"]:
            raise ConfigError(f"bundle blob truncated at {item['name']}")
        out[item["name"]] = np.frombuffer(raw, dtype=item["dtype"]).reshape(item["shape"]).copy()
    return out


def _files(model: TrainedModel) -> dict[str, bytes]:
    p_index, p_blob = _pack(model.params)
    loc_meta, loc_arrays = model.location.state()
    l_index, l_blob = _pack(loc_arrays)
    shape = model.shape
    report = model.report.to_json() if model.report is not None else None
    return {
        "params.json": _dump_json({"shape": vars(shape), "index": p_index}),
        "params.bin": p_blob,
        "vocab.json": _dump_json(model.vocab.to_json()),
        "location.json": _dump_json({"meta": loc_meta, "index": l_index}),
        "location.bin": l_blob,
        "clusters.json": _dump_json(model.clusters_json()),
        "train_report.json": _dump_json(report),
    }


def bundle_digest(files: dict[str, bytes], config_hash: str) -> str:
    h = hashlib.sha256(config_hash.encode())
    for name in sorted(files):
        h.update(name.encode())
        h.update(hashlib.sha256(files[name]).digest())
    return h.hexdigest()[:16]


def save_bundle(model: TrainedModel, directory, extra: dict | None = None) -> str:
    """Write ``model`` to ``directory`` and return its bundle id."""
    os.makedirs(directory, exist_ok=True)
    files = _files(model)
    cfg = model.config
    bundle_id = bundle_digest(files, cfg.config_hash())
    model.bundle_id = bundle_id
    for name, data in files.items():
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "version": _package_version(),
        "bundle_id": bundle_id,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "clustering": cfg.clustering,
        "artifacts": {k: {f: hashlib.sha256(files[f]).hexdigest() for f in v}
                      for k, v in ARTIFACTS.items()},
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        manifest["extra"] = extra
    with open(os.path.join(directory, MANIFEST), "wb") as fh:
        fh.write(_dump_json(manifest))
    return bundle_id


def read_manifest(directory) -> dict:
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise ConfigError(f"not a model bundle (missing {path})")
    with open(path) as fh:
        return json.load(fh)


def load_bundle(directory, verify: bool = True) -> TrainedModel:
    manifest = read_manifest(directory)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported bundle format {manifest.get('format_version')!r}")
    files = {}
    for names in ARTIFACTS.values():
        for name in names:
            path = os.path.join(directory, name)
            if not os.path.isfile(path):
                raise ConfigError(f"bundle is missing {path}")
            with open(path, "rb") as fh:
                files[name] = fh.read()
    if verify:
        for names in manifest["artifacts"].values():
            for name, digest in names.items():
                if hashlib.sha256(files[name]).hexdigest() != digest:
                    raise ConfigError(f"bundle artifact {name} does not match its manifest digest")

    cfg = TrainConfig.from_dict(manifest["config"])
    p_meta = json.loads(files["params.json"])
    shape = ModelShape(**p_meta["shape"])
    params = _unpack(p_meta["index"], files["params.bin"])
    check_params(params, shape)
    vocab = ExecutableVocab.from_json(json.loads(files["vocab.json"]))
    l_meta = json.loads(files["location.json"])
    loc = LocationEncoder.from_state(l_meta["meta"], _unpack(l_meta["index"], files["location.bin"]))
    clusters = clusters_from_json(json.loads(files["clusters.json"]), vocab)
    report_json = json.loads(files["train_report.json"])
    report = TrainReport.from_json(report_json) if report_json is not None else None
    return TrainedModel(cfg, shape, params, vocab, loc, clusters, report,
                        bundle_id=manifest["bundle_id"])


def bundle_fingerprint(directory) -> dict[str, str]:
    """sha256 of every bundle file, with the manifest's ``created_at`` removed."""
    out = {}
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        with open(path, "rb") as fh:
            data = fh.read()
        if name == MANIFEST:
            m = json.loads(data)
            m.pop("created_at", None)
            data = _dump_json(m)
        out[name] = hashlib.sha256(data).hexdigest()
    return out
