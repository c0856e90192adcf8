"""Training loop, evaluation and metrics output."""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import RunConfig, ensure_output_dir
from .data import Dataset, augment, load_mnist
from .errors import NumericFault
from .learning import OptimizerState, apply_batch
from .network import Network
from .rng import AUGMENT, DATA, INIT, substream

log = logging.getLogger(__name__)


def write_csv(path, header, rows, config_hash: str):
    """CSV with a ``# config-hash`` comment line, then the header row."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path):
    """Header and data rows of a CSV written by :func:`write_csv` (comments skipped)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    return rows[0], rows[1:]


def evaluate(network: Network, data: Dataset, batch_size: int = 1000):
    """Accuracy and mean per-trial loss on ``data`` (no plasticity)."""
    correct, loss = 0, 0.0
    for i in range(0, len(data), batch_size):
        res = network.simulate(data.images[i:i + batch_size], data.labels[i:i + batch_size])
        correct += int((res.prediction == data.labels[i:i + batch_size]).sum())
        loss += float(res.loss.sum())
    return correct / len(data), loss / len(data)


def _format(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def train(cfg: RunConfig, train_data: Dataset | None = None, test_data: Dataset | None = None,
          on_step=None) -> list[dict]:
    """Run ``cfg.train.epochs`` epochs; writes metrics.csv, summary.json and checkpoints.

    ``on_step(network, step)`` is called after every optimizer step (used by
    property tests). On a numeric fault the weights are rolled back to the
    last good checkpoint before the fault is re-raised.
    """
    out = ensure_output_dir(cfg)
    tc = cfg.train
    train_data = train_data if train_data is not None else load_mnist("train", cfg.data_dir)
    test_data = test_data if test_data is not None else load_mnist("test", cfg.data_dir)
    if tc.train_limit:
        train_data = train_data.subset(tc.train_limit)
    if tc.test_limit:
        test_data = test_data.subset(tc.test_limit)

    network = Network.build(cfg.network, substream(cfg.seed, INIT))
    opt = OptimizerState()
    cfg_hash = cfg.hash()
    ckpt_path = out / "last.ckpt"
    checkpoint.save(ckpt_path, network, 0, opt, config=cfg.to_dict())
    n_angles = len(network.angles())
    header = ["epoch", "train_acc", "train_loss", "test_acc", "test_loss"] + [f"angle_{i}" for i in range(n_angles)]
    history = []
    rows = []

    def record(epoch, tr_acc, tr_loss):
        te_acc, te_loss = evaluate(network, test_data, tc.eval_batch)
        row = {"epoch": epoch, "train_acc": tr_acc, "train_loss": tr_loss, "test_acc": te_acc, "test_loss": te_loss}
        for i, a in enumerate(network.angles()):
            row[f"angle_{i}"] = a
        history.append(row)
        rows.append([_format(row[h]) for h in header])
        write_csv(out / "metrics.csv", header, rows, cfg_hash)
        log.info("epoch %d test_acc %.4f test_loss %.4f", epoch, te_acc, te_loss)

    record(0, float("nan"), float("nan"))
    aug_rng = substream(cfg.seed, AUGMENT)
    step = 0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        order = substream(cfg.seed, DATA, epoch).permutation(len(train_data))
        correct, loss_sum = 0, 0.0
        try:
            for i in range(0, len(order), tc.batch_size):
                idx = order[i:i + tc.batch_size]
                x = augment(train_data.images[idx], aug_rng, cfg.augment)
                res = apply_batch(network, x, train_data.labels[idx], idx, opt, cfg.optimizer)
                correct += int((res.prediction == train_data.labels[idx]).sum())
                loss_sum += float(res.loss.sum())
                step += 1
                if on_step is not None:
                    on_step(network, step)
        except NumericFault:
            checkpoint.restore(network, checkpoint.load(ckpt_path))
            log.error("numeric fault in epoch %d; weights rolled back to %s", epoch, ckpt_path)
            raise
        record(epoch, correct / len(order), loss_sum / len(order))
        if epoch % tc.checkpoint_every == 0 or epoch == tc.epochs:
            checkpoint.save(ckpt_path, network, epoch, opt, config=cfg.to_dict())
        log.info("epoch %d took %.1fs", epoch, time.perf_counter() - t0)

    summary = {"config_hash": cfg_hash, "final": history[-1], "best_test_acc": max(h["test_acc"] for h in history)}
    Path(out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    return history
