# -*- coding: utf-8 -*-
"""
Image and expression preprocessing.

- resampling to an isotropic 1 mm grid (trilinear, clamped at the borders)
- per-volume z-score intensity normalization
- selection of axial slices that contain tumour
- removal of genes whose median expression across patients is zero
- center crop / zero pad of slices to the model input size
"""
import logging
import warnings

import numpy as np
from scipy import ndimage

from img2rna.dataio import ExpressionMatrix, TumorMask, Volume, check_pair
from img2rna.exceptions import InputError

logger = logging.getLogger(__name__)

TARGET_SPACING = 1.0


def _axis_coordinates(n, spacing, axis_name, patient_id):
    """Sample positions (in input index units) of the 1 mm grid along one axis."""
    if n == 1:
        count = max(1, int(round(spacing / TARGET_SPACING)))
        if spacing != TARGET_SPACING:
            warnings.warn("Patient '%s': single-voxel %s axis with spacing %s mm is "
                          "extended as a constant to %s voxel(s)."
                          % (patient_id, axis_name, spacing, count),
                          UserWarning, stacklevel=3)
        return np.zeros(count)
    extent = (n - 1) * spacing
    count = int(np.floor(extent / TARGET_SPACING + 1e-9)) + 1
    return np.arange(count) * (TARGET_SPACING / spacing)


def _resample_array(array, spacing, order, patient_id):
    sx, sy, sz = spacing
    nz, ny, nx = array.shape
    cz = _axis_coordinates(nz, sz, "z", patient_id)
    cy = _axis_coordinates(ny, sy, "y", patient_id)
    cx = _axis_coordinates(nx, sx, "x", patient_id)
    grid = np.meshgrid(cz, cy, cx, indexing="ij")
    return ndimage.map_coordinates(array, grid, order=order, mode="nearest")


def resample_to_1mm(volume):
    """
    Resample ``volume`` onto a 1 mm isotropic grid covering the same extent.

    The output grid starts at the first voxel center and has
    floor((n - 1) * s) + 1 samples along an axis with n voxels of spacing s.
    A single-voxel axis with spacing other than 1 mm is extended as a constant
    (with a warning).
    """
    if volume.spacing == (TARGET_SPACING,) * 3:
        return Volume(voxels=volume.voxels.copy(), spacing=volume.spacing,
                      modality=volume.modality, patient_id=volume.patient_id)
    voxels = _resample_array(volume.voxels, volume.spacing, 1, volume.patient_id)
    return Volume(voxels=voxels, spacing=(TARGET_SPACING,) * 3, modality=volume.modality,
                  patient_id=volume.patient_id)


def resample_mask_to_1mm(mask, spacing):
    """Nearest-neighbour resampling of a mask onto the grid of :func:`resample_to_1mm`."""
    spacing = tuple(float(s) for s in spacing)
    if spacing == (TARGET_SPACING,) * 3:
        return TumorMask(labels=mask.labels.copy(), patient_id=mask.patient_id)
    labels = _resample_array(mask.labels.astype(np.float64), spacing, 0, mask.patient_id)
    return TumorMask(labels=labels, patient_id=mask.patient_id)


def normalize_intensity(volume):
    """
    Z-score all voxels (mean 0, population standard deviation 1).

    CT volumes are not HU-windowed before standardization.

    Raises
    ------
    InputError
        When the volume is constant (zero variance).
    """
    voxels = volume.voxels
    if np.ptp(voxels) == 0:
        raise InputError("Cannot normalize volume of patient '%s': all voxels equal %s "
                         "(zero variance)." % (volume.patient_id, voxels.flat[0]))
    mean = voxels.mean()
    std = voxels.std()
    return Volume(voxels=(voxels - mean) / std, spacing=volume.spacing,
                  modality=volume.modality, patient_id=volume.patient_id)


def select_tumor_slices(volume, mask, min_tumor_voxels=10):
    """
    Ascending indices of axial slices with at least ``min_tumor_voxels`` tumour voxels.
    """
    check_pair(volume, mask)
    counts = mask.labels.reshape(mask.labels.shape[0], -1).sum(axis=1)
    return [int(i) for i in np.flatnonzero(counts >= min_tumor_voxels)]


def filter_median_zero(em):
    """
    Keep the genes whose median across patients is greater than zero.

    The median of an even number of values is the mean of the two middle
    values. Gene order is preserved.
    """
    if len(em.patient_ids) < 1:
        raise InputError("Median filtering needs at least one patient column.")
    medians = np.median(em.values, axis=1)
    keep = medians > 0
    logger.info("Median-zero filter kept %s / %s genes.", int(keep.sum()), len(keep))
    return ExpressionMatrix(em.frame.loc[keep].copy())


def crop_or_pad(image, size):
    """Center-crop or zero-pad a 2D array to ``size`` x ``size``."""
    out = image
    for axis in (0, 1):
        n = out.shape[axis]
        if n > size:
            start = (n - size) // 2
            out = np.take(out, np.arange(start, start + size), axis=axis)
        elif n < size:
            before = (size - n) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, size - n - before)
            out = np.pad(out, pad)
    return np.ascontiguousarray(out)


def cap_slices(indices, max_slices):
    """Evenly spaced subset of at most ``max_slices`` indices (0 keeps all)."""
    if max_slices is None or max_slices <= 0 or len(indices) <= max_slices:
        return list(indices)
    picks = np.unique(np.round(np.linspace(0, len(indices) - 1, max_slices)).astype(int))
    return [indices[i] for i in picks]


def preprocess_patient(volume, mask, slice_size, min_tumor_voxels=10, max_slices=0):
    """
    Run the full image preprocessing for one patient.

    Returns
    -------
    list of numpy.ndarray or None
        The selected normalized slices (slice_size x slice_size), or None when
        the patient has no slice with enough tumour voxels.
    """
    check_pair(volume, mask)
    resampled = resample_to_1mm(volume)
    resampled_mask = resample_mask_to_1mm(mask, volume.spacing)
    normalized = normalize_intensity(resampled)

    indices = select_tumor_slices(normalized, resampled_mask, min_tumor_voxels)
    if len(indices) == 0:
        return None
    indices = cap_slices(indices, max_slices)
    return [crop_or_pad(normalized.voxels[i], slice_size) for i in indices]
