"""
Reading and writing the raw input formats.

Raw directory layout (as written by :mod:`img2rna.synth`)::

    raw_dir/
        images/<patient_id>.vol.json    volume header
        images/<patient_id>.vol.raw     little-endian float32 voxels, X fastest
        images/<patient_id>.mask.json   mask header
        images/<patient_id>.mask.raw    uint8 labels, X fastest
        expression.tsv                  gene_id column + one column per patient
"""
import glob
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from img2rna.exceptions import DimensionError, InputError

MODALITIES = ("CT", "MRI")
IMAGE_DIR = "images"
EXPRESSION_NAME = "expression.tsv"
_VOLUME_SUFFIX = ".vol.json"
_MASK_SUFFIX = ".mask.json"


@dataclass
class Volume:
    """
    3D image.

    ``voxels`` is indexed [z, y, x] (so the C-order memory layout is X
    fastest, like the file). ``spacing`` is (sx, sy, sz) in mm.
    """
    voxels: np.ndarray
    spacing: tuple
    modality: str = "MRI"
    patient_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise DimensionError("Volume needs 3 non-empty axes, got %s." % (self.voxels.shape,))
        if len(self.spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in self.spacing):
            raise InputError("Spacing should be 3 finite positive values, got %s."
                             % (self.spacing,))
        if self.modality not in MODALITIES:
            raise InputError("Unknown modality '%s'." % self.modality)

    @property
    def dims(self):
        z, y, x = self.voxels.shape
        return (x, y, z)


@dataclass
class TumorMask:
    """Binary tumour labels on the grid of the paired Volume, indexed [z, y, x]."""
    labels: np.ndarray
    patient_id: str = ""

    def __post_init__(self):
        self.labels = (np.asarray(self.labels) > 0).astype(np.uint8)

    @property
    def dims(self):
        z, y, x = self.labels.shape
        return (x, y, z)


def check_pair(volume, mask):
    """Raise DimensionError if ``mask`` is not on the grid of ``volume``."""
    if volume.dims != mask.dims:
        raise DimensionError("Mask dims %s do not match volume dims %s for patient '%s'."
                             % (mask.dims, volume.dims, volume.patient_id))


@dataclass
class ExpressionMatrix:
    """Genes x patients matrix of non-negative expression values."""
    frame: pd.DataFrame

    def __post_init__(self):
        if self.frame.index.has_duplicates:
            dup = self.frame.index[self.frame.index.duplicated()].unique().tolist()
            raise InputError("Duplicate gene ids: %s" % dup[:10])
        if self.frame.columns.has_duplicates:
            dup = self.frame.columns[self.frame.columns.duplicated()].unique().tolist()
            raise InputError("Duplicate patient ids in expression matrix: %s" % dup[:10])
        values = self.frame.to_numpy(dtype=np.float64)
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise InputError("Expression values should be finite and non-negative.")

    @classmethod
    def from_arrays(cls, values, gene_ids, patient_ids):
        frame = pd.DataFrame(np.asarray(values, dtype=np.float64),
                             index=pd.Index([str(g) for g in gene_ids], name="gene_id"),
                             columns=[str(p) for p in patient_ids])
        return cls(frame)

    @property
    def gene_ids(self):
        return self.frame.index.tolist()

    @property
    def patient_ids(self):
        return self.frame.columns.tolist()

    @property
    def values(self):
        return self.frame.to_numpy(dtype=np.float64)

    def select_patients(self, patient_ids):
        return ExpressionMatrix(self.frame[list(patient_ids)].copy())


# Volumes and masks
# =================

def _write_raw(array, header, directory, stem, suffix, dtype):
    os.makedirs(directory, exist_ok=True)
    data_file = "%s%s" % (stem, suffix.replace(".json", ".raw"))
    header = dict(header, data_file=data_file, dtype=np.dtype(dtype).name, byte_order="little")
    np.ascontiguousarray(array).astype(dtype).tofile(os.path.join(directory, data_file))
    header_fp = os.path.join(directory, stem + suffix)
    with open(header_fp, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2, sort_keys=True)
    return header_fp


def _read_header(header_fp):
    with open(header_fp, encoding="utf-8") as f:
        header = json.load(f)
    for key in ("patient_id", "dims", "data_file"):
        if key not in header:
            raise InputError("Header '%s' is missing the '%s' field." % (header_fp, key))
    return header


def _read_raw(header_fp, header, dtype):
    x, y, z = header["dims"]
    data_fp = os.path.join(os.path.dirname(header_fp), header["data_file"])
    data = np.fromfile(data_fp, dtype=dtype)
    if data.size != x * y * z:
        raise InputError("'%s' holds %s values, expected %s." % (data_fp, data.size, x * y * z))
    return data.reshape(z, y, x)


def write_volume(volume, directory):
    """Write header + float32 voxel blob; return the header path."""
    header = dict(patient_id=volume.patient_id, dims=list(volume.dims),
                  spacing=list(volume.spacing), modality=volume.modality)
    return _write_raw(volume.voxels, header, directory, volume.patient_id, _VOLUME_SUFFIX, "<f4")


def read_volume(header_fp):
    """Read a volume written by :func:`write_volume`."""
    header = _read_header(header_fp)
    voxels = _read_raw(header_fp, header, "<f4")
    return Volume(voxels=voxels, spacing=header["spacing"], modality=header.get("modality", "MRI"),
                  patient_id=header["patient_id"])


def write_mask(mask, directory):
    """Write header + uint8 label blob; return the header path."""
    header = dict(patient_id=mask.patient_id, dims=list(mask.dims))
    return _write_raw(mask.labels, header, directory, mask.patient_id, _MASK_SUFFIX, "u1")


def read_mask(header_fp):
    """Read a mask written by :func:`write_mask`."""
    header = _read_header(header_fp)
    return TumorMask(labels=_read_raw(header_fp, header, "u1"), patient_id=header["patient_id"])


def get_image_paths(raw_dir):
    """
    Find volume and mask headers under ``raw_dir/images``.

    Returns
    -------
    dict
        patient_id -> {'volume': header path, 'mask': header path or None}

    Raises
    ------
    InputError
        When two volumes (or two masks) claim the same patient id.
    """
    image_dir = os.path.join(raw_dir, IMAGE_DIR)
    if not os.path.isdir(image_dir):
        raise InputError("Image directory '%s' does not exist." % image_dir)

    paths = {}
    for kind, suffix in (("volume", _VOLUME_SUFFIX), ("mask", _MASK_SUFFIX)):
        for header_fp in sorted(glob.glob(os.path.join(image_dir, "*" + suffix))):
            patient_id = _read_header(header_fp)["patient_id"]
            entry = paths.setdefault(patient_id, dict(volume=None, mask=None))
            if entry[kind] is not None:
                raise InputError("Duplicate %s for patient '%s': '%s' and '%s'."
                                 % (kind, patient_id, entry[kind], header_fp))
            entry[kind] = header_fp
    return paths


# Expression matrix
# =================

def _separator(fp):
    return "," if fp.lower().endswith(".csv") else "\t"


def read_expression_matrix(fp):
    """
    Read a delimiter-separated expression matrix.

    The first column holds gene ids, the header row holds patient ids.
    Tab separated unless the file ends with '.csv'.
    """
    if not os.path.isfile(fp):
        raise InputError("Expression matrix '%s' does not exist." % fp)
    # Read without a header so that duplicate patient ids are not renamed
    raw = pd.read_csv(fp, sep=_separator(fp), header=None, dtype=str)
    header = raw.iloc[0].tolist()
    body = raw.iloc[1:]
    frame = pd.DataFrame(body.iloc[:, 1:].to_numpy(dtype=np.float64),
                         index=pd.Index(body.iloc[:, 0].tolist(), name="gene_id"),
                         columns=header[1:])
    if len(frame.columns) < 1:
        raise InputError("Expression matrix '%s' has no patient columns." % fp)
    return ExpressionMatrix(frame)


def write_expression_matrix(em, fp):
    em.frame.to_csv(fp, sep=_separator(fp), index=True, index_label="gene_id",
                    float_format="%.17g")
    return fp


# Digests
# =======

def file_digest(filepaths, root=None):
    """sha256 over the relative names and bytes of ``filepaths`` (sorted)."""
    h = hashlib.sha256()
    for fp in sorted(filepaths):
        name = os.path.relpath(fp, root) if root is not None else os.path.basename(fp)
        h.update(name.replace(os.sep, "/").encode("utf-8"))
        with open(fp, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def raw_input_files(raw_dir):
    """All files under ``raw_dir`` that feed preprocessing."""
    files = glob.glob(os.path.join(raw_dir, IMAGE_DIR, "*"))
    expression_fp = os.path.join(raw_dir, EXPRESSION_NAME)
    if os.path.isfile(expression_fp):
        files.append(expression_fp)
    return sorted(files)
