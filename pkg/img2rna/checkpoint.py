"""
Saving and loading model checkpoints.

A checkpoint is a directory with:

    manifest.json    config, parameter index (name, shape, offset, count),
                     gene ids, training metadata and a content digest
    parameters.bin   all parameters and target-transform buffers as
                     little-endian float64 values, in index order
    train_log.jsonl  per-epoch training log (written by img2rna.train)
"""
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from img2rna.autodiff import Tensor
from img2rna.exceptions import InputError
from img2rna.layers import init_scheme
from img2rna.model import GeneTargetTransform, ModelConfig

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "parameters.bin"
LOG_NAME = "train_log.jsonl"
_DTYPE = "<f8"


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict
    transform: GeneTargetTransform
    gene_ids: list
    training_meta: dict = field(default_factory=dict)
    run_config: dict = field(default_factory=dict)
    digest: str = ""


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _entries(checkpoint):
    """Ordered (name, kind, array) entries stored in the blob."""
    entries = [(name, "parameter", t.data) for name, t in checkpoint.params.items()]
    entries.append(("target.mean", "buffer", checkpoint.transform.mean))
    entries.append(("target.std", "buffer", checkpoint.transform.std))
    return entries


def _build_blob(checkpoint):
    index = []
    chunks = []
    offset = 0
    for name, kind, array in _entries(checkpoint):
        array = np.ascontiguousarray(array, dtype=np.float64)
        entry = dict(name=name, kind=kind, shape=list(array.shape), offset=offset,
                     count=int(array.size))
        if kind == "parameter":
            entry["init"] = init_scheme(name)
        index.append(entry)
        chunks.append(array.astype(_DTYPE).tobytes())
        offset += array.size
    return index, b"".join(chunks)


def compute_digest(config_dict, index, gene_ids, training_meta, blob):
    h = hashlib.sha256()
    h.update(_canonical(dict(config=config_dict, index=index, gene_ids=list(gene_ids),
                             training_meta=training_meta)).encode("utf-8"))
    h.update(blob)
    return h.hexdigest()


def save_checkpoint(checkpoint, directory):
    """
    Write ``checkpoint`` into ``directory`` and return its content digest.

    The digest covers the config, the parameter index, gene ids, training
    metadata and the parameter bytes, so two runs that produce identical
    parameters produce identical digests.
    """
    os.makedirs(directory, exist_ok=True)
    index, blob = _build_blob(checkpoint)
    config_dict = checkpoint.config.to_dict()
    digest = compute_digest(config_dict, index, checkpoint.gene_ids,
                            checkpoint.training_meta, blob)

    manifest = dict(config=config_dict,
                    index=index,
                    gene_ids=list(checkpoint.gene_ids),
                    training_meta=checkpoint.training_meta,
                    run_config=checkpoint.run_config,
                    byte_order="little",
                    dtype="float64",
                    digest=digest)

    with open(os.path.join(directory, BLOB_NAME), "wb") as f:
        f.write(blob)
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    checkpoint.digest = digest
    return digest


def load_checkpoint(directory, verify=True):
    """
    Read a checkpoint directory written by :func:`save_checkpoint`.

    Raises
    ------
    InputError
        When files are missing or the content digest does not match.
    """
    manifest_fp = os.path.join(directory, MANIFEST_NAME)
    blob_fp = os.path.join(directory, BLOB_NAME)
    for fp in (manifest_fp, blob_fp):
        if not os.path.isfile(fp):
            raise InputError("Checkpoint file '%s' does not exist." % fp)

    with open(manifest_fp, encoding="utf-8") as f:
        manifest = json.load(f)
    with open(blob_fp, "rb") as f:
        blob = f.read()

    if verify:
        digest = compute_digest(manifest["config"], manifest["index"], manifest["gene_ids"],
                                manifest["training_meta"], blob)
        if digest != manifest["digest"]:
            raise InputError("Checkpoint '%s' is corrupted: digest mismatch." % directory)

    values = np.frombuffer(blob, dtype=_DTYPE).astype(np.float64)
    params = {}
    buffers = {}
    for entry in manifest["index"]:
        start = entry["offset"]
        array = values[start:start + entry["count"]].reshape(entry["shape"]).copy()
        if entry["kind"] == "parameter":
            params[entry["name"]] = Tensor(array, requires_grad=True, name=entry["name"])
        else:
            buffers[entry["name"]] = array

    return ModelCheckpoint(config=ModelConfig.from_dict(manifest["config"]),
                           params=params,
                           transform=GeneTargetTransform(mean=buffers["target.mean"],
                                                         std=buffers["target.std"]),
                           gene_ids=list(manifest["gene_ids"]),
                           training_meta=manifest["training_meta"],
                           run_config=manifest.get("run_config", {}),
                           digest=manifest["digest"])
