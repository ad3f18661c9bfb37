# -*- coding: utf-8 -*-
"""
Synthetic cohorts with planted image -> gene associations.

Every patient gets a latent vector z ~ N(0, I_L). The latent drives a single
spherical lesion rendered into a noisy volume:

    z[0]      -> lesion radius (through the normal CDF onto radius_range)
    z[1]      -> lesion intensity (normal CDF onto intensity_range)
    z[2:5]    -> deterministic shift of the lesion center (x, y, z)

Planted genes follow log1p(g) = baseline + w_g . z + eps_g, null genes
log1p(g) = baseline + eps_g, with eps_g ~ N(0, noise_std_g**2). Expression is
expm1 of that, clamped at zero. The ground truth (latents, planted flags and
weights) is written next to the cohort and is never read by the model.
"""
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from img2rna.dataio import (ExpressionMatrix, IMAGE_DIR, EXPRESSION_NAME, TumorMask, Volume,
                            file_digest, raw_input_files, write_expression_matrix, write_mask,
                            write_volume)
from img2rna.exceptions import ConfigError, InputError
from img2rna.rng import substream

logger = logging.getLogger(__name__)

GROUND_TRUTH_NAME = "ground_truth.json"
GENERATION_MANIFEST_NAME = "generation_manifest.json"


@dataclass
class PlantSpec:
    """Parameters of a synthetic cohort."""
    latent_dim: int = 2
    planted_gene_count: int = 50
    null_gene_count: int = 450
    noise_std: object = 0.5
    weights: object = None
    baseline_log_expression: float = 3.0
    volume_size: int = 64
    spacing: tuple = (1.0, 1.0, 1.0)
    modality: str = "MRI"
    radius_range: tuple = (4.0, 12.0)
    intensity_range: tuple = (1.0, 4.0)
    background_std: float = 0.25
    position_jitter: float = 4.0
    max_retries: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim should be >= 1, got %s." % self.latent_dim)
        if self.planted_gene_count < 0 or self.null_gene_count < 0 or self.gene_count < 1:
            raise ConfigError("Gene counts should be non-negative with at least one gene.")
        noise = np.asarray(self.noise_std, dtype=np.float64)
        if noise.ndim == 1 and noise.size != self.gene_count:
            raise ConfigError("noise_std has %s values for %s genes." % (noise.size, self.gene_count))
        if np.any(noise < 0):
            raise ConfigError("noise_std should be >= 0.")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (self.planted_gene_count, self.latent_dim):
                raise ConfigError("weights should have shape (%s, %s), got %s."
                                  % (self.planted_gene_count, self.latent_dim, w.shape))
        if self.radius_range[0] <= 0 or self.radius_range[1] < self.radius_range[0]:
            raise ConfigError("Invalid radius_range %s." % (self.radius_range,))

    @property
    def gene_count(self):
        return self.planted_gene_count + self.null_gene_count

    def gene_noise(self):
        return np.broadcast_to(np.asarray(self.noise_std, dtype=np.float64),
                               (self.gene_count,)).copy()

    def to_dict(self):
        return dict(latent_dim=self.latent_dim, planted_gene_count=self.planted_gene_count,
                    null_gene_count=self.null_gene_count,
                    noise_std=np.asarray(self.noise_std).tolist(),
                    weights=None if self.weights is None else np.asarray(self.weights).tolist(),
                    baseline_log_expression=self.baseline_log_expression,
                    volume_size=self.volume_size, spacing=list(self.spacing),
                    modality=self.modality, radius_range=list(self.radius_range),
                    intensity_range=list(self.intensity_range),
                    background_std=self.background_std, position_jitter=self.position_jitter,
                    max_retries=self.max_retries, seed=self.seed)


def plant_spec_from_config(config):
    s = config["synth"]
    return PlantSpec(latent_dim=s["latent_dim"], planted_gene_count=s["planted_genes"],
                     null_gene_count=s["null_genes"], noise_std=s["noise_std"],
                     baseline_log_expression=s["baseline_log_expression"],
                     volume_size=s["volume_size"], spacing=tuple(s["spacing"]),
                     modality=s["modality"], radius_range=tuple(s["radius_range"]),
                     intensity_range=tuple(s["intensity_range"]),
                     background_std=s["background_std"], position_jitter=s["position_jitter"],
                     max_retries=s["max_retries"], seed=config["seed"])


@dataclass
class GroundTruth:
    """Latents per patient, planted/null flag per gene and the weights used."""
    gene_ids: list
    planted: np.ndarray
    weights: np.ndarray
    latents: dict = field(default_factory=dict)

    @property
    def planted_ids(self):
        return [g for g, p in zip(self.gene_ids, self.planted) if p]

    @property
    def null_ids(self):
        return [g for g, p in zip(self.gene_ids, self.planted) if not p]

    def to_dict(self):
        return dict(gene_ids=list(self.gene_ids), planted=[bool(p) for p in self.planted],
                    weights=self.weights.tolist(), latent_dim=int(self.weights.shape[1]),
                    latents={pid: np.asarray(z).tolist() for pid, z in self.latents.items()})

    @classmethod
    def from_dict(cls, values):
        return cls(gene_ids=values["gene_ids"], planted=np.asarray(values["planted"], dtype=bool),
                   weights=np.asarray(values["weights"], dtype=np.float64).reshape(
                       -1, values["latent_dim"]),
                   latents={pid: np.asarray(z) for pid, z in values["latents"].items()})


def plan_genes(spec):
    """
    Draw the gene-level part of the cohort: which genes are planted and their weights.

    Weight rows are unit vectors (w . w = 1) unless ``spec.weights`` is given.
    """
    rng = substream(spec.seed, "synth", 0)
    order = rng.permutation(spec.gene_count)
    planted = np.zeros(spec.gene_count, dtype=bool)
    planted[order[:spec.planted_gene_count]] = True

    if spec.weights is not None:
        weights = np.asarray(spec.weights, dtype=np.float64)
    else:
        weights = rng.standard_normal((spec.planted_gene_count, spec.latent_dim))
        norms = np.linalg.norm(weights, axis=1, keepdims=True)
        weights = weights / np.where(norms == 0, 1.0, norms)

    gene_ids = ["G%04d" % (i + 1) for i in range(spec.gene_count)]
    return GroundTruth(gene_ids=gene_ids, planted=planted, weights=weights)


def _render_lesion(spec, z, rng, patient_id):
    n = spec.volume_size
    spacing = np.asarray(spec.spacing, dtype=np.float64)
    extent = (n - 1) * spacing

    r_lo, r_hi = spec.radius_range
    radius = r_lo + (r_hi - r_lo) * ndtr(z[0])
    i_lo, i_hi = spec.intensity_range
    intensity = i_lo + (i_hi - i_lo) * (ndtr(z[1]) if spec.latent_dim > 1 else 0.5)

    shift = np.zeros(3)
    for axis in range(3):
        if spec.latent_dim > 2 + axis:
            shift[axis] = spec.position_jitter * np.tanh(z[2 + axis])

    for attempt in range(spec.max_retries + 1):
        center = extent / 2.0 + shift + rng.uniform(-spec.position_jitter,
                                                   spec.position_jitter, 3)
        if np.all(center - radius >= 0) and np.all(center + radius <= extent):
            return radius, intensity, center
    raise InputError("Lesion of radius %.2f mm does not fit into the volume of patient '%s' "
                     "after %s retries." % (radius, patient_id, spec.max_retries))


def sample_patient(spec, rng, patient_id="P0001", truth=None):
    """
    Sample one synthetic patient.

    Parameters
    ----------
    spec : PlantSpec
    rng : numpy.random.Generator
        The patient's own random stream.
    patient_id : str
    truth : GroundTruth, optional
        Gene plan from :func:`plan_genes` (drawn from ``spec`` when omitted).

    Returns
    -------
    (Volume, TumorMask, numpy.ndarray, numpy.ndarray)
        Volume, mask, expression vector over all genes, and the latent z.
    """
    if truth is None:
        truth = plan_genes(spec)

    z = rng.standard_normal(spec.latent_dim)

    # Expression
    log_expr = spec.baseline_log_expression + rng.standard_normal(spec.gene_count) * spec.gene_noise()
    log_expr[truth.planted] += truth.weights @ z
    expression = np.maximum(np.expm1(log_expr), 0.0)

    # Image
    n = spec.volume_size
    voxels = rng.normal(0.0, spec.background_std, size=(n, n, n))
    radius, intensity, center = _render_lesion(spec, z, rng, patient_id)
    sx, sy, sz = spec.spacing
    zz, yy, xx = np.meshgrid(np.arange(n) * sz, np.arange(n) * sy, np.arange(n) * sx,
                             indexing="ij")
    inside = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2 <= radius ** 2
    voxels = voxels + intensity * inside

    volume = Volume(voxels=voxels, spacing=spec.spacing, modality=spec.modality,
                    patient_id=patient_id)
    mask = TumorMask(labels=inside, patient_id=patient_id)
    return volume, mask, expression, z


def generate_cohort(spec, n_patients, out_dir, overwrite=False, run_config=None):
    """
    Write a synthetic cohort in the raw input layout of :mod:`img2rna.dataio`.

    Also writes ``ground_truth.json`` and ``generation_manifest.json`` (which
    echoes ``run_config`` when given).

    Returns
    -------
    dict
        The generation manifest (includes the digest of all written inputs).

    Raises
    ------
    InputError
        When n_patients < 3, ``out_dir`` is non-empty without ``overwrite``,
        or it cannot be written.
    """
    if n_patients < 3:
        raise InputError("A synthetic cohort needs at least 3 patients, got %s." % n_patients)
    if os.path.isdir(out_dir) and len(os.listdir(out_dir)) > 0 and not overwrite:
        raise InputError("Output directory '%s' is not empty (use overwrite)." % out_dir)

    truth = plan_genes(spec)
    patient_ids = ["P%04d" % (i + 1) for i in range(n_patients)]
    columns = []

    try:
        os.makedirs(os.path.join(out_dir, IMAGE_DIR), exist_ok=True)
        for idx, patient_id in enumerate(patient_ids):
            if idx != 0 and idx % 20 == 0:
                logger.info("Generated %s / %s patients.", idx, n_patients)
            rng = substream(spec.seed, "synth", 1, idx)
            volume, mask, expression, z = sample_patient(spec, rng, patient_id, truth)
            write_volume(volume, os.path.join(out_dir, IMAGE_DIR))
            write_mask(mask, os.path.join(out_dir, IMAGE_DIR))
            columns.append(expression)
            truth.latents[patient_id] = z

        em = ExpressionMatrix.from_arrays(np.column_stack(columns), truth.gene_ids, patient_ids)
        write_expression_matrix(em, os.path.join(out_dir, EXPRESSION_NAME))

        with open(os.path.join(out_dir, GROUND_TRUTH_NAME), "w", encoding="utf-8") as f:
            json.dump(truth.to_dict(), f, indent=2, sort_keys=True)

        manifest = dict(spec=spec.to_dict(), n_patients=n_patients,
                        gene_count=spec.gene_count,
                        digest=file_digest(raw_input_files(out_dir) +
                                           [os.path.join(out_dir, GROUND_TRUTH_NAME)],
                                           root=out_dir),
                        config=run_config)
        with open(os.path.join(out_dir, GENERATION_MANIFEST_NAME), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as e:
        raise InputError("Could not write the synthetic cohort to '%s': %s" % (out_dir, e))

    logger.info("Synthetic cohort of %s patients and %s genes written to '%s'.",
                n_patients, spec.gene_count, out_dir)
    return manifest


def read_ground_truth(data_dir):
    with open(os.path.join(data_dir, GROUND_TRUTH_NAME), encoding="utf-8") as f:
        return GroundTruth.from_dict(json.load(f))
