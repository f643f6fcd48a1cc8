"""Command-line interface: ``lipsort <command> [options]``.

Results go to stdout as one JSON object; series go to CSV files. Exit codes
are 0 on success, 2 for malformed flags and 3 when a run fails. Any option
may also come from a TOML file given with ``--config`` (flags win).
"""
import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import constraints as C
from .activations import parse_activation
from .attacks import AttackConfig, fgs_attack, pgd_attack
from .lattice import constraint_bounds_hold, lattice_combine
from .linalg import singular_spectrum
from .network import (
    activation_statistics,
    build_net,
    forward,
    input_jacobian_spectral_norm,
    load_net,
    save_net,
)
from .objectives import certify
from .tasks import Dataset, find_mnist, load_mnist_idx, load_sample_csv, parse_task
from .trainer import TrainConfig, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class CliError(Exception):
    pass


# -- argument types ---------------------------------------------------------------

def _arg_type(fn, what):
    def convert(text):
        try:
            return fn(text)
        except (ValueError, TypeError) as exc:
            raise argparse.ArgumentTypeError(f"invalid {what} {text!r}: {exc}") from None
    convert.__name__ = what
    return convert


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise ValueError("must be at least 1")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise ValueError("must be non-negative")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise ValueError("must be a positive number")
    return value


def _non_negative_float(text):
    value = float(text)
    if not value >= 0 or not math.isfinite(value):
        raise ValueError("must be a non-negative number")
    return value


def _float_list(text):
    values = [float(v) for v in str(text).split(",") if v.strip()]
    if not values or any(v < 0 for v in values):
        raise ValueError("need a comma-separated list of non-negative numbers")
    return values


POS_INT = _arg_type(_positive_int, "count")
NONNEG_INT = _arg_type(_non_negative_int, "count")
POS_FLOAT = _arg_type(_positive_float, "number")
NONNEG_FLOAT = _arg_type(_non_negative_float, "number")
FLOATS = _arg_type(_float_list, "list")
ACTIVATION = _arg_type(parse_activation, "activation")
CONSTRAINT = _arg_type(C.parse_constraint, "constraint")


# -- data helpers --------------------------------------------------------------------

def _load_points(path, split, limit):
    """MNIST split from a directory, or samples from a CSV file."""
    path = Path(path)
    if path.is_dir():
        data = load_mnist_idx(*find_mnist(path, split))
        return data.head(limit) if limit else data
    x = load_sample_csv(path)[:limit]
    return Dataset(x, np.zeros(len(x), np.int64))


def _hidden_rows(act, width):
    return width * act.group_size if act.kind == "maxout" else width


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands ----------------------------------------------------------------------

def cmd_train_wasserstein(args):
    task = parse_task(args.task, seed=args.seed)
    rows = _hidden_rows(args.activation, args.width)
    widths = [task.input_dim] + [rows] * args.depth + [1]
    net = build_net(widths, args.activation, args.constraint, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                      eval_every=args.eval_every, dtype=args.dtype,
                      final_enforce_iters=args.final_iters, record_time=args.record_time)
    net, log = train(net, task, cfg, log_path=args.out)
    ckpt = args.ckpt or str(Path(args.out).with_suffix(".lipn"))
    save_net(net, ckpt)
    _emit({"objective": log[-1]["objective"], "lipschitz_check": log[-1]["lipschitz_check"],
           "checkpoint": ckpt, "metrics": args.out})


def cmd_train_classify(args):
    train_data = load_mnist_idx(*find_mnist(args.data, "train"))
    test_data = load_mnist_idx(*find_mnist(args.data, "t10k"))
    if args.train_size > len(train_data):
        raise CliError(f"--train-size {args.train_size} exceeds the {len(train_data)} available examples")
    train_data = train_data.head(args.train_size)
    rows = _hidden_rows(args.activation, args.width)
    widths = [train_data.x.shape[1]] + [rows] * args.depth + [10]
    net = build_net(widths, args.activation, args.constraint, K=args.lipschitz, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                      objective=args.objective, kappa=args.kappa * args.lipschitz,
                      lambda_specjac=args.lambda_specjac, eval_every=args.eval_every,
                      dtype=args.dtype, final_enforce_iters=args.final_iters)
    net, log = train(net, train_data, cfg, log_path=args.metrics)
    save_net(net, args.out)
    report = certify(net, test_data.x, test_data.y)
    _emit({"test_error": float(1.0 - np.mean(report.correct)),
           "train_error": float(1.0 - log[-1]["objective"]),
           "lipschitz": net.declared_K, "checkpoint": args.out})


def cmd_certify(args):
    net = load_net(args.ckpt)
    data = _load_points(args.data, args.split, args.limit)
    rule = {"sound": "sound_2K", "paper": "paper_K_half"}[args.rule]
    report = certify(net, data.x, data.y, rule)
    eps = sorted(args.epsilons)
    curve = [(e, report.accuracy_at(e)) for e in eps]
    _write_csv(args.out, ("epsilon", "certified_accuracy"), [(repr(e), repr(a)) for e, a in curve])
    _emit({"rule": rule, "clean_accuracy": float(np.mean(report.correct)),
           "certified_accuracy": {repr(e): a for e, a in curve}, "report": args.out})


def cmd_attack(args):
    net = load_net(args.ckpt)
    data = _load_points(args.data, args.split, args.limit)
    cfg = AttackConfig(epsilon=args.epsilon, steps=args.steps, restarts=args.restarts,
                       loss=args.loss, seed=args.seed, step_size=args.step_size)
    clean = forward(net, data.x)[0].argmax(axis=1)
    if args.method == "fgs":
        x_adv = fgs_attack(net, data.x, data.y, cfg)
    else:
        x_adv, _ = pgd_attack(net, data.x, data.y, cfg)
    adv = forward(net, x_adv)[0].argmax(axis=1)
    success = adv != data.y
    _write_csv(args.out, ("index", "label", "clean_pred", "adv_pred", "success"),
               [(i, int(t), int(c), int(a), int(s))
                for i, (t, c, a, s) in enumerate(zip(data.y, clean, adv, success))])
    _emit({"method": args.method, "epsilon": args.epsilon,
           "clean_error": float(np.mean(clean != data.y)),
           "error_rate": float(np.mean(success)), "report": args.out})


def cmd_diagnose(args):
    net = load_net(args.ckpt)
    if args.report == "orthonormality":
        rows, worst = [], 0.0
        for i, layer in enumerate(net.layers):
            w, _ = layer.effective_weight("final")
            sv = singular_spectrum(w)
            worst = max(worst, float(np.max(np.abs(sv - 1.0))))
            rows.extend((i, j, repr(float(s))) for j, s in enumerate(sv))
        _write_csv(args.out, ("layer", "index", "singular_value"), rows)
        _emit({"report": args.report, "max_deviation": worst, "out": args.out})
        return
    if args.data is None:
        raise CliError(f"--data is required for the {args.report} report")
    data = _load_points(args.data, args.split, args.limit)
    if args.report == "activation-stats":
        taus = np.linspace(0.0, 1.0, args.bins + 1)
        stats = activation_statistics(net, data.x, taus)
        _write_csv(args.out, ("threshold", "ratio"), [(repr(t), repr(r)) for t, r in stats.items()])
        _emit({"report": args.report, "out": args.out})
        return
    radii = np.array([input_jacobian_spectral_norm(net, x, iters=args.power_iters, seed=args.seed)
                      for x in data.x])
    counts, edges = np.histogram(radii, bins=args.bins)
    _write_csv(args.out, ("bin_left", "bin_right", "count"),
               [(repr(float(a)), repr(float(b)), int(c)) for a, b, c in zip(edges, edges[1:], counts)])
    _emit({"report": args.report, "max": float(radii.max()), "mean": float(radii.mean()),
           "declared_K": net.declared_K, "out": args.out})


def cmd_lattice_demo(args):
    f, g = load_net(args.f), load_net(args.g)
    h = lattice_combine(f, g, args.op)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-args.box, args.box, (args.probe, f.in_width))
    ref = (np.maximum if args.op == "max" else np.minimum)(forward(f, x)[0], forward(g, x)[0])
    deviation = float(np.max(np.abs(forward(h, x)[0] - ref)))
    if args.out:
        save_net(h, args.out)
    _emit({"op": args.op, "probes": args.probe, "max_deviation": deviation,
           "norm_bounds_preserved": bool(constraint_bounds_hold(h))})


# -- parser -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="lipsort", description="Lipschitz networks with sorting activations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="TOML file with option defaults")
        p.add_argument("--seed", type=int, default=0)
        return p

    def training_options(p, steps, lr_help):
        p.add_argument("--activation", type=ACTIVATION, default=parse_activation("maxmin"))
        p.add_argument("--steps", type=NONNEG_INT, default=steps)
        p.add_argument("--lr", type=POS_FLOAT, default=None, help=lr_help)
        p.add_argument("--batch-size", type=POS_INT, default=64)
        p.add_argument("--eval-every", type=POS_INT, default=500)
        p.add_argument("--final-iters", type=NONNEG_INT, default=20,
                       help="Bjorck iterations for the final enforcement")
        p.add_argument("--dtype", choices=("float64", "float32"), default="float64",
                       help="precision of training steps (final weights are always float64)")

    lr_help = "learning rate (default 0.01 with bjorck, 0.001 otherwise)"
    p = command("train-wasserstein", cmd_train_wasserstein,
                "Train a 1-Lipschitz dual critic and report the Wasserstein lower bound.")
    p.add_argument("--task", required=True, help="abs, cones3, shell:<dim> or pair:<csv1>,<csv2>")
    p.add_argument("--constraint", type=CONSTRAINT, default=C.Bjorck())
    p.add_argument("--depth", type=POS_INT, default=3, help="number of hidden layers")
    p.add_argument("--width", type=POS_INT, default=128)
    p.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    p.add_argument("--ckpt", default=None, help="checkpoint path (default: next to --out)")
    p.add_argument("--record-time", action="store_true", help="fill the wall_ms column")
    training_options(p, 2000, lr_help)

    p = command("train-classify", cmd_train_classify,
                "Train a K-Lipschitz margin classifier on MNIST IDX files.")
    p.add_argument("--data", required=True, help="directory holding train-* and t10k-* IDX files")
    p.add_argument("--train-size", type=POS_INT, default=5000)
    p.add_argument("--lipschitz", type=POS_FLOAT, default=1.0, help="global Lipschitz constant K")
    p.add_argument("--constraint", type=CONSTRAINT, default=C.Bjorck())
    p.add_argument("--kappa", type=NONNEG_FLOAT, default=0.1, help="margin as a fraction of K")
    p.add_argument("--objective", choices=("hinge", "cross_entropy"), default="hinge")
    p.add_argument("--lambda-specjac", type=NONNEG_FLOAT, default=0.0)
    p.add_argument("--depth", type=POS_INT, default=2)
    p.add_argument("--width", type=POS_INT, default=256)
    p.add_argument("--out", default="classifier.lipn", help="checkpoint path")
    p.add_argument("--metrics", default=None, help="optional metrics CSV path")
    training_options(p, 3000, lr_help)

    def eval_options(p, default_out):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True, help="MNIST directory or a sample CSV")
        p.add_argument("--split", choices=("train", "t10k"), default="t10k")
        p.add_argument("--limit", type=POS_INT, default=None, help="use the first N examples")
        p.add_argument("--out", default=default_out)

    p = command("certify", cmd_certify, "Certified accuracy of a classifier against l-inf perturbations.")
    eval_options(p, "certify.csv")
    p.add_argument("--epsilons", type=FLOATS, default=[0.0, 0.05, 0.1, 0.2, 0.3])
    p.add_argument("--rule", choices=("sound", "paper"), default="sound")

    p = command("attack", cmd_attack, "Run FGS or PGD against a classifier.")
    eval_options(p, "attack.csv")
    p.add_argument("--method", choices=("fgs", "pgd"), default="pgd")
    p.add_argument("--epsilon", type=NONNEG_FLOAT, required=True)
    p.add_argument("--steps", type=POS_INT, default=200)
    p.add_argument("--restarts", type=POS_INT, default=10)
    p.add_argument("--step-size", type=POS_FLOAT, default=None, help="default epsilon/10")
    p.add_argument("--loss", choices=("cw_f6", "cross_entropy"), default="cw_f6")

    p = command("diagnose", cmd_diagnose, "Jacobian spectra, ReLU activation statistics or weight spectra.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None, help="MNIST directory or a sample CSV")
    p.add_argument("--split", choices=("train", "t10k"), default="t10k")
    p.add_argument("--limit", type=POS_INT, default=None)
    p.add_argument("--report", required=True,
                   choices=("jacobian-spectrum", "activation-stats", "orthonormality"))
    p.add_argument("--bins", type=POS_INT, default=20)
    p.add_argument("--power-iters", type=POS_INT, default=50)
    p.add_argument("--out", default="diagnose.csv")

    p = command("lattice-demo", cmd_lattice_demo, "Combine two l-inf nets into their max or min.")
    p.add_argument("--f", required=True, help="first checkpoint")
    p.add_argument("--g", required=True, help="second checkpoint")
    p.add_argument("--op", choices=("max", "min"), default="max")
    p.add_argument("--probe", type=POS_INT, default=1000)
    p.add_argument("--box", type=POS_FLOAT, default=1.0, help="probe inputs drawn from [-box, box]")
    p.add_argument("--out", default=None, help="optional checkpoint for the combined net")
    return parser


def _config_defaults(parser, argv):
    """Re-parse with defaults taken from the TOML file named by --config."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, "rb") as fh:
            table = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    command = next((a for a in argv if not a.startswith("-")), None)
    section = table.get(command, {}) if isinstance(table.get(command), dict) else {}
    flat = {k: v for k, v in table.items() if not isinstance(v, dict)}
    flat.update(section)
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None:
        return
    actions = {a.dest: a for a in sub._actions}
    values = {}
    for key, value in flat.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            parser.error(f"unknown option {key!r} in {known.config}")
        actions[dest].required = False
        values[dest] = value if isinstance(value, bool) else (
            ",".join(map(str, value)) if isinstance(value, list) else str(value))
    sub.set_defaults(**values)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _config_defaults(parser, argv)
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, ValueError, TypeError, OSError, RuntimeError, KeyError) as exc:
        print(f"lipsort {args.command}: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
