"""Command-line entry point: ``hmeqa <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
Diagnostics go to stderr; results go to files or stdout.
"""

import argparse
import logging
import sys

from . import tensor as T
from .config import VARIANTS, ModelConfig
from .data import dumps_jsonl, generate_synthetic, read_jsonl, write_jsonl
from .errors import HmeqaError
from .gradcheck import gradient_errors
from .trace import build_trace, write_trace

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text):
    return [x for x in text.split(",") if x]


def _add_common(p, data=False, checkpoint=False, out=False):
    p.add_argument("--config", help="JSON file with ModelConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--strict-eq", action="store_true", default=None,
                   help="ignore slot contents in memory addressing (uniform slot weights)")
    if data:
        p.add_argument("--data", required=True, help="JSON Lines dataset")
    if checkpoint:
        p.add_argument("--checkpoint", required=True)
    if out:
        p.add_argument("--out")


def build_parser():
    parser = _Parser(prog="hmeqa", description="Memory-augmented video question answering.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic flagged-slot recall dataset")
    _add_common(p, out=True)
    p.add_argument("--family", choices=("open", "mc"), help="task family (default: the config task)")
    p.add_argument("--count", type=int, default=512)

    p = sub.add_parser("train", help="train a model and write its best checkpoint")
    _add_common(p, data=True, checkpoint=True, out=True)

    p = sub.add_parser("eval", help="report loss and accuracy of a checkpoint on a dataset")
    _add_common(p, data=True, checkpoint=True)

    p = sub.add_parser("ablate", help="train several variants under one budget, emit CSV")
    _add_common(p, data=True, out=True)
    p.add_argument("--variants", type=_str_list, default=list(VARIANTS))
    p.add_argument("--reasoning-steps", type=_int_list)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    _add_common(p)
    p.add_argument("--samples", type=int, default=3)

    p = sub.add_parser("trace", help="export attention weights for one sample")
    _add_common(p, data=True, checkpoint=True, out=True)
    p.add_argument("--sample", required=True, help="sample id")
    p.add_argument("--no-svg", action="store_true")
    return parser


def resolve_config(args, base=None):
    """Config file values, then command-line overrides."""
    cfg = ModelConfig.load(args.config) if getattr(args, "config", None) else (base or ModelConfig())
    changes = {}
    for flag, name in (("seed", "seed"), ("variant", "variant"), ("epochs", "epochs"), ("strict_eq", "strict_eq")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[name] = value
    return cfg.replace(**changes) if changes else cfg


def _emit(text, out=None):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen_data(args):
    cfg = resolve_config(args)
    family = args.family or cfg.task
    records = generate_synthetic(family, args.count, cfg.seed, n_frames=cfg.frames,
                                 n_symbols=cfg.num_classes, num_choices=cfg.num_choices)
    if args.out:
        write_jsonl(records, args.out)
    else:
        sys.stdout.write(dumps_jsonl(records))
    return 0


def cmd_train(args):
    from .train import train
    cfg = resolve_config(args)
    records = read_jsonl(args.data, cfg.vocab_size)
    result = train(cfg, records, checkpoint_path=args.checkpoint, log_path=args.out)
    print(f"best_epoch {result.best_epoch} val_accuracy {result.best_val_accuracy:.6f} "
          f"epochs_run {result.epochs_run}")
    return 0


def cmd_eval(args):
    from .train import evaluate, load_model
    config = ModelConfig.load(args.config) if args.config else None
    model = load_model(args.checkpoint, config)
    records = read_jsonl(args.data, model.cfg.vocab_size)
    with T.default_dtype(model.cfg.precision):
        loss, acc = evaluate(model, records)
    print(f"samples {len(records)} loss {loss:.9f} accuracy {acc:.6f}")
    return 0


def cmd_ablate(args):
    from .train import ablate, ablation_csv
    cfg = resolve_config(args)
    records = read_jsonl(args.data, cfg.vocab_size)
    rows = ablate(cfg, records, args.variants, args.reasoning_steps)
    _emit(ablation_csv(rows), args.out)
    return 0


def model_gradient_errors(cfg, samples=3, h=1e-5, order=2):
    """Per-parameter ``(analytic, numeric, rel_err)`` for the full model's loss at ``cfg``."""
    from .data import collate
    from .model import HMEModel
    with T.default_dtype("float64"):
        model = HMEModel(cfg.replace(precision="float64"))
        records = generate_synthetic(cfg.task, samples, cfg.seed, n_frames=cfg.frames,
                                     n_symbols=cfg.num_classes, num_choices=cfg.num_choices)
        batch = collate(records)
        return gradient_errors(lambda: model.loss(batch)[0], model.params, h, order)


def gradcheck_model(cfg, samples=3, h=1e-5, order=2):
    """Max relative gradient error of the full model's loss at ``cfg``."""
    errs = model_gradient_errors(cfg, samples, h, order)
    return max(float(rel.max()) for _, _, rel in errs.values() if rel.size)


def cmd_gradcheck(args):
    cfg = resolve_config(args)
    err = gradcheck_model(cfg, args.samples)
    print(f"max_relative_error {err:.3e}")
    return 0 if err < GRADCHECK_TOL else 2


def cmd_trace(args):
    from .train import load_model
    config = ModelConfig.load(args.config) if args.config else None
    model = load_model(args.checkpoint, config)
    records = {r.id: r for r in read_jsonl(args.data, model.cfg.vocab_size)}
    if args.sample not in records:
        raise HmeqaError(f"sample {args.sample!r} not found in {args.data}")
    with T.default_dtype(model.cfg.precision):
        doc = build_trace(model, records[args.sample])
    out = args.out or f"trace_{args.sample}"
    for path in write_trace(doc, out, svg=not args.no_svg):
        print(path)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "trace": cmd_trace,
}


def run(argv=None):
    """Parse ``argv`` and dispatch; returns the exit code."""
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given")
    except UsageError as e:
        print(e, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except HmeqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
