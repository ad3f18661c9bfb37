# -*- coding: utf-8 -*-
"""
Training loop.

Adam over minibatches of patients, MSE on log1p-standardized targets. The
target transform is fitted on the training split only. The checkpoint holds
the parameters with the lowest validation loss seen (the initial parameters
count as epoch 0).
"""
import json
import logging
from time import time as timeit

import numpy as np

from img2rna.autodiff import Tensor, backward, no_grad
from img2rna.checkpoint import ModelCheckpoint
from img2rna.config import model_config
from img2rna.exceptions import InputError, NumericError
from img2rna.model import GeneTargetTransform, forward_batch, init_params, mse_loss
from img2rna.optim import AdamState, adam_step
from img2rna.rng import substream

logger = logging.getLogger(__name__)


def _batches(n, batch_size, order):
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def dataset_loss(records, targets, params, mcfg, batch_size=8):
    """
    Eval-mode MSE over all patients and genes of ``records``.

    ``targets`` are the standardized targets, one row per record.
    """
    total = 0.0
    with no_grad():
        for idx in _batches(len(records), batch_size, np.arange(len(records))):
            pred = forward_batch([records[i].slices for i in idx], params, mcfg, mode="eval")
            diff = pred.data - targets[idx]
            total += float(np.sum(diff * diff))
    return total / targets.size


def _snapshot(params):
    return {name: p.data.copy() for name, p in params.items()}


def train(train_records, val_records, config, gene_ids, data_digest="", log_fp=None):
    """
    Train the encoder and prediction head.

    Parameters
    ----------
    train_records, val_records : list of PatientRecord
        Patients of the training and validation splits (raw expression targets).
    config : dict
        Resolved run configuration (sections ``model`` and ``train`` and ``seed``).
    gene_ids : list of str
        Gene order of the targets.
    data_digest : str
        Cohort digest, stored in the training metadata.
    log_fp : str, optional
        JSON-lines file receiving one line per epoch.

    Returns
    -------
    ModelCheckpoint
        Best-validation parameters, target transform and training metadata.

    Raises
    ------
    InputError
        When the training or validation split is empty.
    NumericError
        When a minibatch loss is not finite (names epoch and batch).
    """
    if len(train_records) == 0:
        raise InputError("The training split is empty.")
    if len(val_records) == 0:
        raise InputError("The validation split is empty.")

    train_cfg = config["train"]
    seed = config["seed"]
    epochs = train_cfg["epochs"]
    batch_size = train_cfg["batch_size"]
    lr = train_cfg["lr"]
    betas = tuple(train_cfg["betas"])

    mcfg = model_config(config, gene_count=len(gene_ids))
    transform = GeneTargetTransform.fit(np.stack([r.target for r in train_records]), gene_ids)
    y_train = transform.transform(np.stack([r.target for r in train_records]))
    y_val = transform.transform(np.stack([r.target for r in val_records]))

    params = init_params(mcfg, substream(seed, "init"))
    state = AdamState()

    initial_train = dataset_loss(train_records, y_train, params, mcfg, batch_size)
    initial_val = dataset_loss(val_records, y_val, params, mcfg, batch_size)
    logger.info("Initial loss: train %.6f, validation %.6f", initial_train, initial_val)

    best = _snapshot(params)
    best_val = initial_val
    best_epoch = 0

    log_file = open(log_fp, "w", encoding="utf-8") if log_fp is not None else None
    try:
        for epoch in range(1, epochs + 1):
            start_t = timeit()
            order = substream(seed, "shuffle", epoch).permutation(len(train_records))
            loss_sum = 0.0

            for b, idx in enumerate(_batches(len(train_records), batch_size, order)):
                for p in params.values():
                    p.zero_grad()
                rng = substream(seed, "dropout", epoch, b)
                pred = forward_batch([train_records[i].slices for i in idx], params, mcfg,
                                     mode="train", rng=rng)
                loss = mse_loss(pred, Tensor(y_train[idx]))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError("Non-finite loss (%s) at epoch %s, batch %s." % (value, epoch, b))
                backward(loss)
                grads = {name: p.grad for name, p in params.items() if p.grad is not None}
                adam_step(params, grads, state, lr, betas=betas, eps=train_cfg["eps"])
                loss_sum += value * len(idx)

            train_loss = loss_sum / len(train_records)
            val_loss = dataset_loss(val_records, y_val, params, mcfg, batch_size)
            if not np.isfinite(val_loss):
                raise NumericError("Non-finite validation loss at epoch %s." % epoch)
            if val_loss < best_val:
                best, best_val, best_epoch = _snapshot(params), val_loss, epoch

            wall_time = timeit() - start_t
            logger.info("[%s / %s] train loss %.6f, validation loss %.6f. It took %s seconds.",
                        epoch, epochs, train_loss, val_loss, round(wall_time, 1))
            if log_file is not None:
                log_file.write(json.dumps(dict(epoch=epoch, train_loss=train_loss,
                                               val_loss=val_loss, wall_time=wall_time)) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    final_train = dataset_loss(train_records, y_train, params, mcfg, batch_size)
    final_val = dataset_loss(val_records, y_val, params, mcfg, batch_size)

    best_params = {name: Tensor(data, requires_grad=True, name=name) for name, data in best.items()}
    meta = dict(epochs=epochs, best_epoch=best_epoch, best_val_loss=best_val,
                initial_train_loss=initial_train, initial_val_loss=initial_val,
                final_train_loss=final_train, final_val_loss=final_val,
                train_patients=len(train_records), val_patients=len(val_records),
                lr=lr, batch_size=batch_size, seed=seed, data_digest=data_digest)
    return ModelCheckpoint(config=mcfg, params=best_params, transform=transform,
                           gene_ids=list(gene_ids), training_meta=meta, run_config=config)
