"""Command-line entry point.

Subcommands: train, eval, verify, dump-attention, report. Outputs land
under the config's output_dir; setting STOCHATTN_OUTPUT_ROOT relocates
that directory under a new root without editing configs. Training writes
per-seed metrics (deterministic bytes for a fixed config), a separate
per-seed timing file, the best parameter snapshot, and a cross-seed
summary table. The report subcommand turns those files into figures plus
a delimited summary.
"""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cf
from . import data as gd
from . import metrics as mt
from . import models as md
from . import objective as obj
from . import params_io as pio
from . import uncertainty as unc
from . import verify as vf
from .errors import DivergenceError, StochAttnError

OUTPUT_ROOT_ENV = "STOCHATTN_OUTPUT_ROOT"


def output_dir(config):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / config.output_dir.lstrip("/")
    return Path(config.output_dir)


def _load_task_data(config):
    if config.task == "graph":
        return gd.load_graph(config.dataset)
    return md.generate_synthetic(config.synthetic_task, config.data_seed)


def _history_records(record, seed):
    """Train-loop record dict -> metrics rows (no wall time: bytes must be
    reproducible; timing goes to its own file)."""
    rows = [mt.MetricsRecord(step=record["step"], split="train", seed=seed,
                             nll=record["train_nll"], kl=record["train_kl"],
                             l2=record["train_l2"], total=record["train_total"],
                             kl_weight=record["kl_weight"])]
    if "val_loss" in record:
        rows.append(mt.MetricsRecord(step=record["step"], split="val", seed=seed,
                                     total=record["val_loss"],
                                     accuracy=record["val_accuracy"]))
    return rows


def _evaluate_test(model, config, seed):
    test = model.metrics("test")
    rng = np.random.default_rng(seed + 1_000_003)
    if config.task == "graph":
        idx = model.data.splits["test"]
        labels = model.data.labels[idx]
        preds = unc.posterior_sample(
            lambda r: model.sample_probabilities(r)[idx], config.m_samples, rng)
    else:
        labels = model.data.test.labels
        preds = unc.posterior_sample(
            lambda r: model.sample_probabilities(r, "test"), config.m_samples, rng)
    certain = unc.certainty(preds, config.p_threshold)
    accurate = preds.predictions() == labels
    value, counts = unc.pavpu(accurate, certain)
    return test, value, counts, preds, accurate, certain, labels


def cmd_train(args):
    config = cf.load_config(args.config)
    out = output_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_task_data(config)
    rows = []
    for seed in config.seeds:
        model = cf.build_model(config, dataset, seed)
        metrics_path = out / f"metrics-seed{seed}.jsonl"
        timing_path = out / f"timing-seed{seed}.jsonl"
        metrics_path.write_text("")
        timing_path.write_text("")
        last = [time.perf_counter()]

        def on_record(record, seed=seed, metrics_path=metrics_path,
                      timing_path=timing_path, last=last):
            now = time.perf_counter()
            for row in _history_records(record, seed):
                mt.append_record(metrics_path, row)
            mt.append_record(timing_path, mt.MetricsRecord(
                step=record["step"], split="train", seed=seed,
                wall_ms=(now - last[0]) * 1000.0))
            last[0] = now

        try:
            result = obj.train(model, config.train, seed, on_record=on_record)
        except DivergenceError as err:
            print(f"seed {seed}: diverged: {err}", file=sys.stderr)
            print(f"partial metrics kept at {metrics_path}", file=sys.stderr)
            return 3
        model.load(result.params)
        pio.save_params(out / f"params-seed{seed}.bin",
                        {k: v for k, v in result.params.items()})
        test, pavpu_value, _, _, _, _, _ = _evaluate_test(model, config, seed)
        mt.append_record(metrics_path, mt.MetricsRecord(
            step=result.best_epoch, split="test", seed=seed, total=test["loss"],
            accuracy=test["accuracy"], pavpu=pavpu_value))
        rows.append((seed, test["accuracy"], test["loss"], pavpu_value))
        print(f"seed {seed}: epochs={len(result.history)} "
              f"best_val_accuracy={result.best_val_accuracy:.4f} "
              f"test_accuracy={test['accuracy']:.4f} pavpu={pavpu_value:.4f}")

    summary_path = out / "summary.tsv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("seed\ttest_accuracy\ttest_loss\tpavpu\n")
        for seed, acc, loss_v, pv in rows:
            fh.write(f"{seed}\t{acc!r}\t{loss_v!r}\t{pv!r}\n")
        cols = np.array([[r[1], r[2], r[3]] for r in rows])
        mean, std = cols.mean(axis=0), cols.std(axis=0)
        fh.write("mean\t" + "\t".join(repr(float(v)) for v in mean) + "\n")
        fh.write("std\t" + "\t".join(repr(float(v)) for v in std) + "\n")
    accs = [r[1] for r in rows]
    print(f"test_accuracy mean={np.mean(accs):.4f} std={np.std(accs):.4f} "
          f"over {len(accs)} seeds -> {summary_path}")
    return 0


def _params_path(args, config, out):
    if args.params:
        return Path(args.params)
    seed = args.seed if args.seed is not None else config.seeds[0]
    return out / f"params-seed{seed}.bin"


def cmd_eval(args):
    config = cf.load_config(args.config)
    out = output_dir(config)
    dataset = _load_task_data(config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    model = cf.build_model(config, dataset, seed)
    path = _params_path(args, config, out)
    model.load(pio.load_params(path))
    test, pavpu_value, counts, preds, accurate, certain, labels = _evaluate_test(
        model, config, seed)
    print(f"test_loss={test['loss']:.6f}")
    print(f"test_accuracy={test['accuracy']:.6f}")
    print(f"pavpu={pavpu_value:.6f} (ac={counts.accurate_certain} "
          f"au={counts.accurate_uncertain} ic={counts.inaccurate_certain} "
          f"iu={counts.inaccurate_uncertain})")
    flags_path = out / f"eval-certainty-seed{seed}.tsv"
    predictions = preds.predictions()
    if config.task == "graph":
        ids = model.data.splits["test"]
    else:
        ids = np.arange(labels.size)
    with open(flags_path, "w", encoding="utf-8") as fh:
        fh.write("instance\tlabel\tprediction\taccurate\tcertain\n")
        for i in range(labels.size):
            fh.write(f"{ids[i]}\t{labels[i]}\t{predictions[i]}\t"
                     f"{int(accurate[i])}\t{int(certain[i])}\n")
    print(f"certainty flags -> {flags_path}")
    return 0


def cmd_verify(args):
    results = vf.run_suite(args.suite)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_dump_attention(args):
    config = cf.load_config(args.config)
    out = output_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_task_data(config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    model = cf.build_model(config, dataset, seed)
    path = _params_path(args, config, out)
    if path.exists():
        model.load(pio.load_params(path))
    else:
        print(f"no parameters at {path}; dumping the initialized model",
              file=sys.stderr)
    rng = np.random.default_rng(seed)
    if config.task == "graph":
        maps = model.attention_maps(args.layer, args.head, rng)
        tag = f"l{args.layer}-h{args.head}"
    else:
        maps = model.attention_maps(rng)
        tag = "l1-h0"
    weights_path = out / f"attention-{tag}-seed{seed}.tsv"
    with open(weights_path, "w", encoding="utf-8") as fh:
        header = "row\tcol\texpected"
        if maps["sampled"] is not None:
            header += "\tsampled"
        if maps["psi"] is not None and config.task == "synthetic":
            header += "\tprior"
        fh.write(header + "\n")
        for i in range(maps["rows"].size):
            cells = [str(maps["rows"][i]), str(maps["cols"][i]),
                     repr(float(maps["expected"][i]))]
            if maps["sampled"] is not None:
                cells.append(repr(float(maps["sampled"][i])))
            if maps["psi"] is not None and config.task == "synthetic":
                cells.append(repr(float(maps["psi"][i])))
            fh.write("\t".join(cells) + "\n")
    print(f"attention weights -> {weights_path}")
    if maps["psi"] is not None and config.task == "graph":
        psi_path = out / f"prior-{tag}-seed{seed}.tsv"
        with open(psi_path, "w", encoding="utf-8") as fh:
            fh.write("node\tprior\n")
            for i, value in enumerate(maps["psi"]):
                fh.write(f"{i}\t{float(value)!r}\n")
        print(f"prior field -> {psi_path}")
    return 0


def cmd_report(args):
    from . import report
    run_dir = Path(args.run_dir)
    written = report.render(run_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stochattn",
        description="Train and inspect attention models with simplex-"
                    "constrained stochastic weights.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train across the configured seeds")
    p.add_argument("config", help="experiment YAML path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved parameter snapshot")
    p.add_argument("config")
    p.add_argument("--params", help="parameter container path")
    p.add_argument("--seed", type=int, help="seed whose snapshot to load")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run semi-analytic verification checks")
    p.add_argument("suite", choices=vf.SUITES)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("dump-attention", help="write attention matrices as TSV")
    p.add_argument("config")
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--params")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_dump_attention)

    p = sub.add_parser("report", help="render figures and a summary table "
                                      "from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StochAttnError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
