"""Render a training run directory into figures and a summary table.

Reads the per-seed metrics and timing files the train command wrote and
produces loss/accuracy curves, the KL weight schedule, a step-time plot,
and report.tsv next to them. Figures use the Agg backend so the command
works headless.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

import numpy as np  # noqa: E402

from . import metrics as mt  # noqa: E402
from .errors import DataValidationError  # noqa: E402


def _series(records, split, field):
    pairs = [(r.step, getattr(r, field)) for r in records
             if r.split == split and getattr(r, field) is not None]
    if not pairs:
        return np.array([]), np.array([])
    steps, values = zip(*pairs)
    return np.asarray(steps), np.asarray(values)


def _seed_of(path, prefix):
    return int(path.stem[len(prefix):])


def render(run_dir):
    run_dir = Path(run_dir)
    metric_files = sorted(run_dir.glob("metrics-seed*.jsonl"),
                          key=lambda p: _seed_of(p, "metrics-seed"))
    if not metric_files:
        raise DataValidationError(f"no metrics-seed*.jsonl files in {run_dir}")
    per_seed = {_seed_of(p, "metrics-seed"): mt.read_records(p)
                for p in metric_files}
    timing = {}
    for path in run_dir.glob("timing-seed*.jsonl"):
        timing[_seed_of(path, "timing-seed")] = mt.read_records(path)

    written = []

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for seed, records in per_seed.items():
        steps, total = _series(records, "train", "total")
        ax1.plot(steps, total, label=f"seed {seed}", linewidth=1)
        steps, val = _series(records, "val", "total")
        ax2.plot(steps, val, label=f"seed {seed}", linewidth=1)
    ax1.set_title("training objective")
    ax2.set_title("validation loss")
    for ax in (ax1, ax2):
        ax.set_xlabel("step")
        ax.legend(fontsize=7)
    fig.tight_layout()
    path = run_dir / "loss-curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for seed, records in per_seed.items():
        steps, acc = _series(records, "val", "accuracy")
        ax.plot(steps, acc, label=f"seed {seed}", linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("validation accuracy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = run_dir / "accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    any_seed = next(iter(per_seed))
    steps, weight = _series(per_seed[any_seed], "train", "kl_weight")
    ax.plot(steps, weight, color="tab:purple")
    ax.set_xlabel("step")
    ax.set_ylabel("kl weight")
    ax.set_ylim(0.0, 1.05)
    fig.tight_layout()
    path = run_dir / "kl-weight.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if timing:
        fig, ax = plt.subplots(figsize=(6, 4))
        for seed, records in sorted(timing.items()):
            steps, wall = _series(records, "train", "wall_ms")
            ax.plot(steps, wall, label=f"seed {seed}", linewidth=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("wall ms per step")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = run_dir / "timing.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    table = run_dir / "report.tsv"
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("seed\tsteps\tbest_val_accuracy\ttest_accuracy\ttest_pavpu"
                 "\tmedian_wall_ms\n")
        for seed, records in per_seed.items():
            steps, val_acc = _series(records, "val", "accuracy")
            _, test_acc = _series(records, "test", "accuracy")
            _, test_pavpu = _series(records, "test", "pavpu")
            _, wall = (_series(timing[seed], "train", "wall_ms")
                       if seed in timing else (None, np.array([])))
            n_steps = len(_series(records, "train", "total")[0])
            fh.write("\t".join([
                str(seed), str(n_steps),
                repr(float(val_acc.max())) if val_acc.size else "",
                repr(float(test_acc[-1])) if test_acc.size else "",
                repr(float(test_pavpu[-1])) if test_pavpu.size else "",
                repr(float(np.median(wall))) if wall.size else "",
            ]) + "\n")
    written.append(table)
    return written
