# -*- coding: utf-8 -*-
"""
Cohort assembly.

Pairs imaging with expression data, preprocesses every patient, filters
genes and assigns each patient to the train/validation/test split. The result
is a list of :class:`PatientRecord` plus a manifest (plain dict, stored as
JSON) that lists patients, split assignment, slice counts, gene ids,
exclusions, digests and the resolved run configuration.
"""
import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass
from time import time as timeit

import numpy as np

from img2rna.dataio import (ExpressionMatrix, get_image_paths, raw_input_files, file_digest,
                            read_expression_matrix, read_mask, read_volume, EXPRESSION_NAME)
from img2rna.distribute import run_parallel
from img2rna.exceptions import DimensionError, InputError
from img2rna.preprocessing import filter_median_zero, preprocess_patient
from img2rna.rng import substream

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"
RECORD_DIR = "records"


@dataclass
class PatientRecord:
    """Selected normalized slices and the target expression of one patient."""
    patient_id: str
    slices: list
    target: np.ndarray

    def __post_init__(self):
        if len(self.slices) < 1:
            raise InputError("Patient '%s' has no slices." % self.patient_id)
        self.target = np.asarray(self.target, dtype=np.float64)


def _preprocess_worker(parallel):
    """Preprocess a batch of patients (runs inside a worker process)."""
    opts = parallel.options
    results = []
    for idx, (patient_id, paths) in enumerate(parallel.items):
        logger.info("[%s / %s] Preprocessing patient: %s", idx + 1, len(parallel.items), patient_id)
        try:
            volume = read_volume(paths["volume"])
            mask = read_mask(paths["mask"])
            slices = preprocess_patient(volume, mask, opts["slice_size"],
                                        min_tumor_voxels=opts["min_tumor_voxels"],
                                        max_slices=opts["max_slices"])
        except (InputError, DimensionError) as e:
            # One unusable patient is excluded, the rest of the cohort goes on
            results.append((patient_id, None, str(e)))
            continue
        if slices is None:
            results.append((patient_id, None, "no slice with >= %s tumour voxels"
                            % opts["min_tumor_voxels"]))
        else:
            results.append((patient_id, slices, None))
    return results


def assign_splits(patient_ids, fractions, seed):
    """
    Assign patients to 'train', 'val' and 'test'.

    Sizes are round(f * n) for train and validation, the rest is test. The
    assignment is a seeded permutation of the sorted patient ids.
    """
    ids = sorted(patient_ids)
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    order = substream(seed, "split").permutation(n)
    splits = {}
    for rank, i in enumerate(order):
        if rank < n_train:
            splits[ids[i]] = "train"
        elif rank < n_train + n_val:
            splits[ids[i]] = "val"
        else:
            splits[ids[i]] = "test"
    return splits


def records_digest(records, gene_ids, splits, input_digest):
    """Content digest over records (ids, slices, targets), genes and splits."""
    h = hashlib.sha256()
    h.update(json.dumps(dict(gene_ids=list(gene_ids), splits=splits, input_digest=input_digest),
                        sort_keys=True).encode("utf-8"))
    for record in sorted(records, key=lambda r: r.patient_id):
        h.update(record.patient_id.encode("utf-8"))
        for s in record.slices:
            h.update(np.ascontiguousarray(s, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(record.target, dtype="<f8").tobytes())
    return h.hexdigest()


def build_cohort(image_paths, em, config, worker_cnt=1, input_digest=""):
    """
    Build patient records and the cohort manifest.

    Parameters
    ----------
    image_paths : dict
        patient_id -> {'volume': header path, 'mask': header path}, see
        :func:`img2rna.dataio.get_image_paths`.
    em : ExpressionMatrix
        Raw expression matrix (genes x patients).
    config : dict
        Resolved run configuration.
    worker_cnt : int
        Number of worker processes for per-patient preprocessing.
    input_digest : str
        Digest of the raw input files, stored in the manifest.

    Returns
    -------
    (list of PatientRecord, dict)
        Records in patient-id order and the manifest.

    Raises
    ------
    InputError
        When no patient survives pairing and preprocessing.
    """
    start_t = timeit()
    data_cfg = config["data"]
    excluded = []

    def exclude(patient_id, reason):
        warnings.warn("Excluding patient '%s': %s" % (patient_id, reason), UserWarning,
                      stacklevel=3)
        excluded.append(dict(patient_id=patient_id, reason=reason))

    # Pair imaging and expression data
    imaging_ids = set(image_paths)
    expression_ids = set(em.patient_ids)
    for patient_id in sorted(imaging_ids - expression_ids):
        exclude(patient_id, "no expression column")
    for patient_id in sorted(expression_ids - imaging_ids):
        exclude(patient_id, "no imaging data")

    candidates = []
    for patient_id in sorted(imaging_ids & expression_ids):
        if image_paths[patient_id].get("mask") is None or image_paths[patient_id].get("volume") is None:
            exclude(patient_id, "volume or tumour mask missing")
            continue
        candidates.append((patient_id, image_paths[patient_id]))

    logger.info("Preprocessing %s patients ..", len(candidates))
    processed = run_parallel(_preprocess_worker, candidates, worker_cnt=worker_cnt,
                             slice_size=data_cfg["slice_size"],
                             min_tumor_voxels=data_cfg["min_tumor_voxels"],
                             max_slices=data_cfg["max_slices"])

    slices_by_patient = {}
    for patient_id, slices, reason in processed:
        if slices is None:
            exclude(patient_id, reason)
        else:
            slices_by_patient[patient_id] = slices

    retained = sorted(slices_by_patient)
    if len(retained) == 0:
        raise InputError("The cohort is empty after pairing and preprocessing.")

    # Gene filtering on the retained patients
    filtered = filter_median_zero(em.select_patients(retained))
    gene_ids = filtered.gene_ids
    targets = filtered.frame

    records = [PatientRecord(patient_id=pid, slices=slices_by_patient[pid],
                             target=targets[pid].to_numpy(dtype=np.float64))
               for pid in retained]

    splits = assign_splits(retained, config["train"]["split_fractions"], config["seed"])
    digest = records_digest(records, gene_ids, splits, input_digest)

    manifest = dict(
        project=data_cfg["project"],
        patients=[dict(patient_id=r.patient_id, split=splits[r.patient_id],
                       slice_count=len(r.slices)) for r in records],
        splits={name: [pid for pid in retained if splits[pid] == name] for name in SPLITS},
        gene_ids=list(gene_ids),
        gene_count=len(gene_ids),
        slice_size=data_cfg["slice_size"],
        excluded=sorted(excluded, key=lambda e: e["patient_id"]),
        notes=dict(resampling="trilinear onto an isotropic 1 mm grid, borders clamped",
                   normalization="per-volume z-score; CT is not HU-windowed",
                   slice_plane="axial",
                   skull_stripping="not performed; inputs assumed pre-stripped"),
        input_digest=input_digest,
        digest=digest,
        config=config,
    )

    duration = (timeit() - start_t) / 60
    logger.info("Cohort: %s patients, %s genes, %s excluded. It took %s minutes.",
                len(records), len(gene_ids), len(excluded), round(duration, 1))
    return records, manifest


def build_cohort_from_dir(raw_dir, config, worker_cnt=1):
    """Read ``raw_dir`` (layout of :mod:`img2rna.dataio`) and build the cohort."""
    image_paths = get_image_paths(raw_dir)
    em = read_expression_matrix(os.path.join(raw_dir, EXPRESSION_NAME))
    input_digest = file_digest(raw_input_files(raw_dir), root=raw_dir)
    return build_cohort(image_paths, em, config, worker_cnt=worker_cnt, input_digest=input_digest)


# Storage
# =======

def save_cohort(records, manifest, out_dir):
    """Write one .npz per patient plus manifest.json into ``out_dir``."""
    record_dir = os.path.join(out_dir, RECORD_DIR)
    os.makedirs(record_dir, exist_ok=True)
    for record in records:
        np.savez(os.path.join(record_dir, record.patient_id + ".npz"),
                 slices=np.stack(record.slices).astype(np.float64),
                 target=record.target)
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return os.path.join(out_dir, MANIFEST_NAME)


def read_manifest(cohort_dir):
    fp = os.path.join(cohort_dir, MANIFEST_NAME)
    if not os.path.isfile(fp):
        raise InputError("Cohort manifest '%s' does not exist." % fp)
    with open(fp, encoding="utf-8") as f:
        return json.load(f)


def load_cohort(cohort_dir, verify=True):
    """
    Load records and manifest written by :func:`save_cohort`.

    Returns
    -------
    (dict, dict)
        patient_id -> PatientRecord, and the manifest.
    """
    manifest = read_manifest(cohort_dir)
    records = {}
    for entry in manifest["patients"]:
        fp = os.path.join(cohort_dir, RECORD_DIR, entry["patient_id"] + ".npz")
        if not os.path.isfile(fp):
            raise InputError("Record file '%s' does not exist." % fp)
        with np.load(fp) as data:
            records[entry["patient_id"]] = PatientRecord(
                patient_id=entry["patient_id"], slices=list(data["slices"]),
                target=data["target"])
        if len(records[entry["patient_id"]].target) != manifest["gene_count"]:
            raise InputError("Target length of '%s' does not match the manifest gene count."
                             % entry["patient_id"])

    if verify:
        splits = {p["patient_id"]: p["split"] for p in manifest["patients"]}
        digest = records_digest(records.values(), manifest["gene_ids"], splits,
                                manifest["input_digest"])
        if digest != manifest["digest"]:
            raise InputError("Cohort '%s' does not match its manifest digest." % cohort_dir)
    return records, manifest


def split_records(records, manifest, split):
    """Records of one split, in manifest order."""
    return [records[pid] for pid in manifest["splits"][split]]


def check_no_leakage(manifest, eval_split="test"):
    """Raise InputError when a patient appears in both train and ``eval_split``."""
    overlap = set(manifest["splits"]["train"]) & set(manifest["splits"][eval_split])
    if overlap:
        raise InputError("%s patient(s) appear in both train and %s splits: %s"
                         % (len(overlap), eval_split, sorted(overlap)[:10]))
