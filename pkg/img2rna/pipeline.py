# -*- coding: utf-8 -*-
"""
Pipeline commands: synth -> preprocess -> train -> eval, plus compare.

Each command takes the resolved run configuration, reads its inputs without
modifying them, writes its outputs (echoing the configuration) and returns a
flat summary dictionary that the command line prints as ``key=value`` pairs.
"""
import logging
import os
from time import time as timeit

from img2rna.checkpoint import LOG_NAME, load_checkpoint, save_checkpoint
from img2rna.cohort import build_cohort_from_dir, load_cohort, save_cohort, split_records
from img2rna.evaluate import compare_reports, evaluate, read_report, write_report
from img2rna.exceptions import InputError
from img2rna.synth import generate_cohort, plant_spec_from_config
from img2rna.train import train

logger = logging.getLogger(__name__)


def _check_out_dir(out_dir, overwrite):
    if os.path.isdir(out_dir) and len(os.listdir(out_dir)) > 0 and not overwrite:
        raise InputError("Output directory '%s' is not empty (use --overwrite)." % out_dir)
    os.makedirs(out_dir, exist_ok=True)


def _report_time(start_t):
    logger.info("It took %s minutes in total.", round((timeit() - start_t) / 60, 1))


def cmd_synth(config, out_dir, overwrite=False):
    """Generate a synthetic cohort with planted associations into ``out_dir``."""
    start_t = timeit()
    spec = plant_spec_from_config(config)
    manifest = generate_cohort(spec, config["synth"]["n_patients"], out_dir,
                               overwrite=overwrite, run_config=config)
    _report_time(start_t)
    return dict(command="synth", patients=manifest["n_patients"], genes=manifest["gene_count"],
                planted=spec.planted_gene_count, digest=manifest["digest"])


def cmd_preprocess(config, raw_dir, out_dir, overwrite=False, worker_cnt=1):
    """Build the cohort (records, splits, manifest) from ``raw_dir``."""
    start_t = timeit()
    if not os.path.isdir(raw_dir):
        raise InputError("Raw data directory '%s' does not exist." % raw_dir)
    _check_out_dir(out_dir, overwrite)

    records, manifest = build_cohort_from_dir(raw_dir, config, worker_cnt=worker_cnt)
    save_cohort(records, manifest, out_dir)
    _report_time(start_t)
    splits = manifest["splits"]
    return dict(command="preprocess", patients=len(records), genes=manifest["gene_count"],
                train=len(splits["train"]), val=len(splits["val"]), test=len(splits["test"]),
                excluded=len(manifest["excluded"]), digest=manifest["digest"])


def cmd_train(config, cohort_dir, out_dir, overwrite=False):
    """Train on the cohort in ``cohort_dir`` and write a checkpoint directory."""
    start_t = timeit()
    records, manifest = load_cohort(cohort_dir)
    _check_out_dir(out_dir, overwrite)

    checkpoint = train(split_records(records, manifest, "train"),
                       split_records(records, manifest, "val"),
                       config, manifest["gene_ids"], data_digest=manifest["digest"],
                       log_fp=os.path.join(out_dir, LOG_NAME))
    digest = save_checkpoint(checkpoint, out_dir)
    _report_time(start_t)
    meta = checkpoint.training_meta
    return dict(command="train", epochs=meta["epochs"], best_epoch=meta["best_epoch"],
                initial_train_loss=meta["initial_train_loss"],
                final_train_loss=meta["final_train_loss"],
                initial_val_loss=meta["initial_val_loss"],
                final_val_loss=meta["final_val_loss"], digest=digest)


def cmd_eval(config, checkpoint_dir, cohort_dir, out_dir, overwrite=False, oracle=False,
             worker_cnt=1):
    """Evaluate a checkpoint on the test split and write the report files."""
    start_t = timeit()
    checkpoint = load_checkpoint(checkpoint_dir)
    records, manifest = load_cohort(cohort_dir)
    _check_out_dir(out_dir, overwrite)

    report = evaluate(checkpoint, records, manifest, config,
                      predictions="oracle" if oracle else None, worker_cnt=worker_cnt)
    digest = write_report(report, out_dir)
    _report_time(start_t)
    return dict(command="eval", alpha=report.alpha, significant_count=report.significant_count,
                evaluable_count=report.evaluable_count, genes=len(report.genes),
                r_max=report.r_max, r_min=report.r_min, r_mean=report.r_mean, digest=digest)


def cmd_compare(report_a, report_b):
    """Compare two report directories over the same gene set."""
    comparison = compare_reports(read_report(report_a), read_report(report_b))
    return dict(command="compare", project_a=comparison["project_a"],
                project_b=comparison["project_b"],
                significant_a=comparison["significant_a"],
                significant_b=comparison["significant_b"],
                count_delta="%+d" % comparison["count_delta"],
                evaluable_delta="%+d" % comparison["evaluable_delta"],
                intersection=comparison["intersection"], union=comparison["union"],
                only_a=len(comparison["only_a"]), only_b=len(comparison["only_b"]),
                max_abs_r_delta=comparison["max_abs_r_delta"])
