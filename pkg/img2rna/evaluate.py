# -*- coding: utf-8 -*-
"""
Evaluation of a trained model on held-out patients.

For every gene, predicted and true expression (log1p-standardized space) are
correlated across the test patients, tested for significance and corrected
for multiple testing with the Holm-Sidak step-down procedure. Genes whose
prediction or target vector is constant are not evaluable and do not count
towards the number of tests.

A report directory contains:

    summary.json     alpha, counts, r_max/r_min/r_mean, digests, config
    genes.tsv        gene_id, r, n, p, p_adjusted, hs_significant, evaluable, method
                     (t, exact for |r| = 1, permutation, or none if not evaluable)
    histogram.tsv    counts of r in 40 bins of width 0.05 over [-1, 1]
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from time import time as timeit

import numpy as np
import pandas as pd

from img2rna.autodiff import no_grad
from img2rna.cohort import check_no_leakage, split_records
from img2rna.dataio import file_digest
from img2rna.distribute import run_parallel
from img2rna.exceptions import InputError, UndefinedCorrelationError
from img2rna.model import forward_patient
from img2rna.rng import substream
from img2rna.stats import (holm_sidak, holm_sidak_adjust, pearson, pearson_pvalue,
                           permutation_pvalue)

logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"
GENES_NAME = "genes.tsv"
HISTOGRAM_NAME = "histogram.tsv"
HISTOGRAM_EDGES = np.round(np.linspace(-1.0, 1.0, 41), 2)
SPACE = "log1p-standardized"
MIN_TEST_PATIENTS = 3


@dataclass
class GeneAssociation:
    gene_id: str
    r: object = None
    n: int = 0
    p: object = None
    p_adjusted: object = None
    hs_significant: bool = False
    evaluable: bool = True
    method: str = "t"


@dataclass
class GeneSignificanceReport:
    genes: list
    alpha: float
    significant_count: int = 0
    evaluable_count: int = 0
    r_max: object = None
    r_min: object = None
    r_mean: object = None
    metadata: dict = field(default_factory=dict)

    @property
    def significant_ids(self):
        return [g.gene_id for g in self.genes if g.hs_significant]

    @property
    def gene_ids(self):
        return [g.gene_id for g in self.genes]

    def histogram(self):
        """Counts of evaluable r values per bin (right edge of the last bin included)."""
        values = [g.r for g in self.genes if g.evaluable]
        counts, _ = np.histogram(values, bins=HISTOGRAM_EDGES)
        return pd.DataFrame(dict(bin_start=HISTOGRAM_EDGES[:-1], bin_end=HISTOGRAM_EDGES[1:],
                                 count=counts))


def _gene_worker(parallel):
    """Correlation and p-value for a batch of genes (runs inside a worker process)."""
    opts = parallel.options
    results = []
    for j, gene_id, pred, target in parallel.items:
        n = len(pred)
        try:
            r = pearson(pred, target, gene_id=gene_id)
        except UndefinedCorrelationError:
            results.append(GeneAssociation(gene_id=gene_id, n=n, evaluable=False, method="none"))
            continue
        if n < opts["permutation_threshold"]:
            p = permutation_pvalue(pred, target, opts["permutations"],
                                   substream(opts["seed"], "permutation", j))
            method = "permutation"
        else:
            p = pearson_pvalue(r, n)
            method = "exact" if abs(r) >= 1.0 else "t"
        results.append(GeneAssociation(gene_id=gene_id, r=r, n=n, p=p, method=method))
    return results


def evaluate_predictions(predictions, targets, gene_ids, alpha=0.05, permutation_threshold=8,
                         permutations=10000, seed=0, worker_cnt=1, metadata=None):
    """
    Per-gene significance of predictions against targets.

    Parameters
    ----------
    predictions, targets : numpy.ndarray
        Arrays of shape (patients, genes).
    gene_ids : list of str
    alpha : float
        Family-wise error rate of the Holm-Sidak procedure.
    permutation_threshold : int
        Below this many patients, p-values come from ``permutations`` seeded
        permutations instead of the t distribution.
    worker_cnt : int
        Worker processes for the per-gene statistics (results do not depend on it).

    Returns
    -------
    GeneSignificanceReport
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 2:
        raise InputError("Predictions %s and targets %s should be equal (patients, genes) arrays."
                         % (predictions.shape, targets.shape))
    if predictions.shape[1] != len(gene_ids):
        raise InputError("%s gene ids for %s gene columns." % (len(gene_ids), predictions.shape[1]))
    if predictions.shape[0] < MIN_TEST_PATIENTS:
        raise InputError("Evaluation needs at least %s patients, got %s."
                         % (MIN_TEST_PATIENTS, predictions.shape[0]))

    items = [(j, gene_id, predictions[:, j], targets[:, j]) for j, gene_id in enumerate(gene_ids)]
    genes = run_parallel(_gene_worker, items, worker_cnt=worker_cnt,
                         permutation_threshold=permutation_threshold,
                         permutations=permutations, seed=seed)

    evaluable = [g for g in genes if g.evaluable]
    if len(evaluable) > 0:
        pvalues = [g.p for g in evaluable]
        for g, reject, adjusted in zip(evaluable, holm_sidak(pvalues, alpha),
                                       holm_sidak_adjust(pvalues)):
            g.hs_significant = bool(reject)
            g.p_adjusted = float(adjusted)
    else:
        logger.warning("No evaluable gene: every prediction or target vector is constant.")

    rs = np.array([g.r for g in evaluable])
    report = GeneSignificanceReport(
        genes=genes, alpha=alpha,
        significant_count=sum(g.hs_significant for g in genes),
        evaluable_count=len(evaluable),
        r_max=float(rs.max()) if rs.size else None,
        r_min=float(rs.min()) if rs.size else None,
        r_mean=float(rs.mean()) if rs.size else None,
        metadata=dict(metadata or {}, space=SPACE, n_patients=int(predictions.shape[0])))
    return report


def _predict_worker(parallel):
    opts = parallel.options
    with no_grad():
        return [forward_patient(record.slices, opts["params"], opts["config"], mode="eval").data
                for record in parallel.items]


def predict(checkpoint, records, worker_cnt=1):
    """Eval-mode predictions (patients, genes) in standardized space."""
    preds = run_parallel(_predict_worker, records, worker_cnt=worker_cnt,
                         params=checkpoint.params, config=checkpoint.config)
    return np.stack(preds)


def evaluate(checkpoint, records, manifest, config, split="test", predictions=None,
             worker_cnt=1):
    """
    Evaluate ``checkpoint`` on one split of a cohort.

    Parameters
    ----------
    checkpoint : ModelCheckpoint
    records : dict
        patient_id -> PatientRecord (see :func:`img2rna.cohort.load_cohort`).
    manifest : dict
        Cohort manifest.
    config : dict
        Resolved run configuration (section ``eval`` and ``seed``).
    split : str
        Split to evaluate on (never the training split).
    predictions : numpy.ndarray or 'oracle', optional
        Replace model predictions. 'oracle' uses the true targets.

    Raises
    ------
    InputError
        On train/evaluation overlap, fewer than 3 patients or a gene set that
        differs from the checkpoint's.
    """
    start_t = timeit()
    if split == "train":
        raise InputError("Refusing to evaluate on the training split.")
    check_no_leakage(manifest, split)
    if list(manifest["gene_ids"]) != list(checkpoint.gene_ids):
        raise InputError("Checkpoint has %s genes, cohort has %s; gene sets differ."
                         % (len(checkpoint.gene_ids), len(manifest["gene_ids"])))

    test = split_records(records, manifest, split)
    if len(test) < MIN_TEST_PATIENTS:
        raise InputError("The %s split has %s patient(s); evaluation needs at least %s."
                         % (split, len(test), MIN_TEST_PATIENTS))

    targets = checkpoint.transform.transform(np.stack([r.target for r in test]))
    if isinstance(predictions, str):
        if predictions != "oracle":
            raise InputError("Unknown prediction source '%s'." % predictions)
        predictions = targets.copy()
    elif predictions is None:
        logger.info("Predicting %s patients ..", len(test))
        predictions = predict(checkpoint, test, worker_cnt=worker_cnt)

    eval_cfg = config["eval"]
    metadata = dict(checkpoint_digest=checkpoint.digest, cohort_digest=manifest["digest"],
                    split=split, project=manifest.get("project"), config=config)
    report = evaluate_predictions(predictions, targets, checkpoint.gene_ids,
                                  alpha=eval_cfg["alpha"],
                                  permutation_threshold=eval_cfg["permutation_threshold"],
                                  permutations=eval_cfg["permutations"],
                                  seed=config["seed"], worker_cnt=worker_cnt,
                                  metadata=metadata)

    duration = (timeit() - start_t) / 60
    logger.info("%s / %s evaluable genes significant. It took %s minutes.",
                report.significant_count, report.evaluable_count, round(duration, 1))
    return report


# Report files
# ============

def write_report(report, out_dir):
    """
    Write summary.json, genes.tsv and histogram.tsv into ``out_dir``.

    Returns the digest of the per-gene table and histogram (also stored in
    the summary).
    """
    os.makedirs(out_dir, exist_ok=True)
    genes = pd.DataFrame([asdict(g) for g in report.genes],
                         columns=["gene_id", "r", "n", "p", "p_adjusted", "hs_significant",
                                  "evaluable", "method"])
    genes.to_csv(os.path.join(out_dir, GENES_NAME), sep="\t", index=False)
    report.histogram().to_csv(os.path.join(out_dir, HISTOGRAM_NAME), sep="\t", index=False)
    digest = file_digest([os.path.join(out_dir, GENES_NAME),
                          os.path.join(out_dir, HISTOGRAM_NAME)], root=out_dir)

    summary = dict(alpha=report.alpha, significant_count=report.significant_count,
                   evaluable_count=report.evaluable_count, gene_count=len(report.genes),
                   r_max=report.r_max, r_min=report.r_min, r_mean=report.r_mean,
                   metadata=report.metadata, digest=digest)
    with open(os.path.join(out_dir, SUMMARY_NAME), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return digest


def _optional(value):
    return None if pd.isna(value) else float(value)


def read_report(report_dir):
    """Read a report directory written by :func:`write_report`."""
    summary_fp = os.path.join(report_dir, SUMMARY_NAME)
    genes_fp = os.path.join(report_dir, GENES_NAME)
    for fp in (summary_fp, genes_fp):
        if not os.path.isfile(fp):
            raise InputError("Report file '%s' does not exist." % fp)
    with open(summary_fp, encoding="utf-8") as f:
        summary = json.load(f)
    table = pd.read_csv(genes_fp, sep="\t", dtype={"gene_id": str}, float_precision="round_trip")

    genes = [GeneAssociation(gene_id=row.gene_id, r=_optional(row.r), n=int(row.n),
                             p=_optional(row.p), p_adjusted=_optional(row.p_adjusted),
                             hs_significant=bool(row.hs_significant),
                             evaluable=bool(row.evaluable), method=row.method)
             for row in table.itertuples(index=False)]
    return GeneSignificanceReport(genes=genes, alpha=summary["alpha"],
                                  significant_count=summary["significant_count"],
                                  evaluable_count=summary["evaluable_count"],
                                  r_max=summary["r_max"], r_min=summary["r_min"],
                                  r_mean=summary["r_mean"], metadata=summary["metadata"])


def compare_reports(a, b):
    """
    Compare two reports over the same genes.

    Returns
    -------
    dict
        Count deltas (b - a), significant-set intersection and differences,
        and per-gene r deltas (None where a gene is not evaluable in both).

    Raises
    ------
    InputError
        When the gene sets differ (message holds the symmetric difference size).
    """
    ids_a, ids_b = set(a.gene_ids), set(b.gene_ids)
    if ids_a != ids_b:
        diff = ids_a ^ ids_b
        raise InputError("Gene sets differ: %s gene(s) in the symmetric difference, e.g. %s."
                         % (len(diff), sorted(diff)[:5]))

    r_b = {g.gene_id: g.r for g in b.genes if g.evaluable}
    deltas = []
    for g in a.genes:
        delta = None
        if g.evaluable and g.gene_id in r_b:
            delta = r_b[g.gene_id] - g.r
        deltas.append(dict(gene_id=g.gene_id, delta=delta))

    sig_a, sig_b = set(a.significant_ids), set(b.significant_ids)
    known = [d["delta"] for d in deltas if d["delta"] is not None]
    return dict(project_a=a.metadata.get("project"), project_b=b.metadata.get("project"),
                significant_a=a.significant_count, significant_b=b.significant_count,
                count_delta=b.significant_count - a.significant_count,
                evaluable_delta=b.evaluable_count - a.evaluable_count,
                intersection=len(sig_a & sig_b), union=len(sig_a | sig_b),
                only_a=sorted(sig_a - sig_b), only_b=sorted(sig_b - sig_a),
                max_abs_r_delta=max((abs(d) for d in known), default=0.0),
                r_deltas=deltas)
