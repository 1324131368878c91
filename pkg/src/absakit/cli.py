"""Command-line interface.

Subcommands: train, eval, probe, curves, synth, ingest. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import sys
from pathlib import Path

from . import data as data_mod
from . import harness, report, synth
from .encoder import Vocab
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .harness import RunConfig, coerce_config_values, parse_config_file
from .metrics import RunReport, SeedRun

_RUN_FLAGS = (
    # (field, flag kwargs)
    ("task", dict(choices=("ae", "asc"))),
    ("data", dict(metavar="PATH")),
    ("dataset", dict(metavar="NAME", help="label used in CSV rows")),
    ("mode", dict(choices=("vanilla", "psum", "hsum"))),
    ("epochs", dict(type=int)),
    ("batch_size", dict(type=int)),
    ("lr", dict(type=float)),
    ("seeds", dict(metavar="A,B,...", help="comma-separated seed list")),
    ("validation_n", dict(type=int)),
    ("infer_branch", dict(choices=("mean", "deepest"))),
    ("num_layers", dict(type=int)),
    ("hidden_size", dict(type=int)),
    ("num_heads", dict(type=int)),
    ("ff_size", dict(type=int)),
    ("max_len", dict(type=int)),
    ("min_freq", dict(type=int)),
    ("dropout", dict(type=float)),
    ("single_segment", dict(action=argparse.BooleanOptionalAction)),
)


def _add_run_flags(parser):
    for name, kwargs in _RUN_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **kwargs)
    parser.add_argument("--config", metavar="FILE", help="flat key = value config file")


def build_run_config(args):
    base = RunConfig().to_dict()
    if args.config:
        base.update(coerce_config_values(parse_config_file(args.config)))
    for name, _ in _RUN_FLAGS:
        given = getattr(args, name)
        if given is None:
            continue
        if name == "seeds":
            base.update(coerce_config_values({name: given}))
        else:
            base[name] = given
    return RunConfig.from_dict(base).validate()


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train(args):
    config = build_run_config(args)
    if not config.data:
        raise ConfigError("train needs --data")
    out = _out_dir(args.out)
    result = harness.train(config)
    result.vocab.save(out / "vocab.txt")
    for seed, model in result.models.items():
        harness.save_checkpoint(
            out / f"seed{seed}.ckpt",
            model,
            config,
            optimizer=result.optimizers[seed],
            epoch=config.epochs,
            seed=seed,
            rng=result.rngs[seed],
        )
    report.save_report_json(result.report, out / "report.json")
    report.write_curves_csv(result.report, out / "curves.csv")
    report.plot_curves(result.report, out / "curves.png")
    report.write_metrics_csv(result.report, out / "metrics.csv")
    for metric, (mean, sd) in result.report.aggregates().items():
        print(f"{config.task} {result.report.dataset} {metric}: mean {mean:.4f} sd {sd:.4f}")
    print(f"wrote checkpoints, report.json, curves.csv/png, metrics.csv to {out}")
    return 0


def _load_vocab_for(args, checkpoint_path):
    if args.vocab:
        return Vocab.load(args.vocab)
    sibling = Path(checkpoint_path).parent / "vocab.txt"
    if not sibling.exists():
        raise ConfigError(f"no vocabulary file: pass --vocab or keep vocab.txt next to {checkpoint_path}")
    return Vocab.load(sibling)


def _cmd_eval(args):
    ck = harness.load_checkpoint(args.checkpoint)
    if args.task and args.task != ck.config.task:
        raise ConfigError(
            f"checkpoint was trained for task {ck.config.task!r}, not {args.task!r}"
        )
    vocab = _load_vocab_for(args, args.checkpoint)
    if len(vocab) != ck.vocab_size:
        raise ConfigError(f"vocabulary size {len(vocab)} does not match checkpoint {ck.vocab_size}")
    examples = harness.load_examples(ck.config.task, args.data)
    metrics, predictions = harness.evaluate(ck.model, examples, vocab, ck.config)
    out = _out_dir(args.out)
    run_report = RunReport(task=ck.config.task, dataset=args.dataset or Path(args.data).stem)
    run_report.runs.append(SeedRun(ck.seed, [], [], metrics))
    report.write_metrics_csv(run_report, out / "metrics.csv")
    report.write_predictions_jsonl(predictions, out / "predictions.jsonl")
    for metric, value in metrics.items():
        print(f"{metric}: {value:.4f}")
    print(f"wrote metrics.csv and predictions.jsonl to {out}")
    return 0


def _cmd_probe(args):
    ck = harness.load_checkpoint(args.checkpoint)
    vocab = _load_vocab_for(args, args.checkpoint)
    examples = harness.load_examples(ck.config.task, args.data)
    rows = harness.probe_layers(
        ck.model,
        examples,
        vocab,
        ck.config,
        probe_epochs=args.probe_epochs,
        probe_lr=args.probe_lr,
    )
    metric_name = "span_f1" if ck.config.task == "ae" else "accuracy"
    out = _out_dir(args.out)
    report.write_probe_csv(rows, out / "probe.csv", metric_name)
    report.plot_probe(rows, out / "probe.png", metric_name)
    for layer, score in rows:
        print(f"layer {layer}: {metric_name} {score:.4f}")
    print(f"wrote probe.csv and probe.png to {out}")
    return 0


def _cmd_curves(args):
    run_report = report.load_report_json(args.report)
    out = _out_dir(args.out)
    report.write_curves_csv(run_report, out / "curves.csv")
    report.plot_curves(run_report, out / "curves.png")
    print(f"wrote curves.csv and curves.png to {out}")
    return 0


def _cmd_synth(args):
    out = _out_dir(args.out)
    written = []
    if args.task in ("ae", "both"):
        examples = synth.generate_ae_corpus(args.n, args.seed)
        data_mod.write_jsonl(examples, out / "synth_ae.jsonl")
        written.append(f"synth_ae.jsonl ({len(examples)} sentences)")
    if args.task in ("asc", "both"):
        examples = synth.generate_asc_corpus(args.n, args.seed)
        data_mod.write_jsonl(examples, out / "synth_asc.jsonl")
        written.append(f"synth_asc.jsonl ({len(examples)} pairs)")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def _cmd_ingest(args):
    examples = harness.load_examples(args.task, args.data)
    if args.task == "ae":
        sentences, aspects = data_mod.count_ae(examples)
        print(f"{args.data}: {sentences} sentences, {aspects} aspects")
        counts, table = (sentences, aspects), data_mod.AE_COUNTS
    else:
        pos, neg, neu = data_mod.count_asc(examples)
        print(f"{args.data}: {pos} positive, {neg} negative, {neu} neutral")
        counts, table = (pos, neg, neu), data_mod.ASC_COUNTS
    if args.out:
        out = _out_dir(args.out)
        name = Path(args.data).stem + ".jsonl"
        data_mod.write_jsonl(examples, out / name)
        print(f"wrote normalized examples to {out / name}")
    if args.expect:
        try:
            dataset, split = args.expect.split("-")
            expected = table[(dataset, split)]
        except (ValueError, KeyError):
            known = ", ".join(f"{d}-{s}" for d, s in sorted(table))
            raise ConfigError(f"unknown --expect {args.expect!r}; known: {known}") from None
        if counts != expected:
            raise DataError(
                f"{args.data}: counts {counts} do not match {args.expect} expected {expected}"
            )
        print(f"counts match {args.expect}: {expected}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="absakit",
        description="Aspect extraction and aspect sentiment classification at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model per seed")
    _add_run_flags(p_train)
    p_train.add_argument("--out", required=True, metavar="DIR")
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--vocab", default=None)
    p_eval.add_argument("--task", choices=("ae", "asc"), default=None)
    p_eval.add_argument("--dataset", default=None)
    p_eval.set_defaults(fn=_cmd_eval)

    p_probe = sub.add_parser("probe", help="score a fresh linear head per encoder layer")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--data", required=True)
    p_probe.add_argument("--out", required=True)
    p_probe.add_argument("--vocab", default=None)
    p_probe.add_argument("--probe-epochs", type=int, default=30)
    p_probe.add_argument("--probe-lr", type=float, default=0.02)
    p_probe.set_defaults(fn=_cmd_probe)

    p_curves = sub.add_parser("curves", help="render loss curves from report.json")
    p_curves.add_argument("--report", required=True)
    p_curves.add_argument("--out", required=True)
    p_curves.set_defaults(fn=_cmd_curves)

    p_synth = sub.add_parser("synth", help="generate the synthetic corpus")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--task", choices=("ae", "asc", "both"), default="both")
    p_synth.add_argument("--n", type=int, default=synth.DEFAULT_SIZE)
    p_synth.add_argument("--seed", type=int, default=synth.DEFAULT_SEED)
    p_synth.set_defaults(fn=_cmd_synth)

    p_ingest = sub.add_parser("ingest", help="parse a dataset and check its statistics")
    p_ingest.add_argument("--task", choices=("ae", "asc"), required=True)
    p_ingest.add_argument("--data", required=True)
    p_ingest.add_argument("--out", default=None)
    p_ingest.add_argument(
        "--expect", default=None, metavar="NAME-SPLIT", help="e.g. lpt14-train, rst16-test"
    )
    p_ingest.set_defaults(fn=_cmd_ingest)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
