"""Command-line experiment runner.

Subcommands: generate, corrupt, train, eval, sweep. Every subcommand
accepts ``--config FILE`` with ``key = value`` lines (keys are flag names
with or without leading dashes); flags on the command line win.

Exit status: 0 success, 1 runtime or I/O error, 2 usage error.
Log verbosity comes from the ``BSPML_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embed as nn
from .data import (
    Dataset,
    NoiseMask,
    SyntheticSpec,
    generate_synthetic,
    inject_label_noise,
    load_dataset,
    load_mask,
    write_dataset,
    write_mask,
)
from .driver import AgeSchedule, TrainConfig, bspml_train, ms_baseline_train
from .errors import BSPMLError, ConfigError
from .metrics import evaluate_retrieval, weight_separation, weight_stats
from .msloss import MSHyperParams
from .weights import StepSchedule

log = logging.getLogger("bspml")

LOG_ENV = "BSPML_LOG_LEVEL"
DEFAULT_KS = (1, 2, 4, 8)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """A training run: data source, optional noise and held-out data, and
    the training hyperparameters."""

    train: TrainConfig
    out_dir: Path
    data_path: Path | None = None
    synthetic: SyntheticSpec | None = None
    noise: float = 0.0
    test_path: Path | None = None
    mask_path: Path | None = None
    ks: tuple = DEFAULT_KS
    seed: int = 0

    def __post_init__(self):
        if (self.data_path is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of --data or a synthetic spec (--classes ...)")
        if not 0 <= self.noise < 1:
            raise ConfigError(f"noise ratio must lie in [0, 1), got {self.noise}")
        if self.data_path is not None and self.noise:
            raise ConfigError("--noise applies to synthetic data only; use 'corrupt' for files")

    def echo(self) -> dict:
        out = {
            "data": None if self.data_path is None else str(self.data_path),
            "synthetic": None if self.synthetic is None else dataclasses.asdict(self.synthetic),
            "noise": self.noise,
            "test": None if self.test_path is None else str(self.test_path),
            "mask": None if self.mask_path is None else str(self.mask_path),
            "ks": list(self.ks),
            "seed": self.seed,
            "out": str(self.out_dir),
        }
        out["train"] = dataclasses.asdict(self.train)
        return out


# ---------------------------------------------------------------- parsing

def _csv_list(kind):
    def parse(text):
        try:
            items = [kind(s) for s in str(text).split(",") if s.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
        return items
    return parse


def _ratio(text):
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(f"ratio must lie in [0, 1), got {value}")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_synthetic(p):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--classes", type=int)
    g.add_argument("--per-class", type=int)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--sep", type=float, default=4.0)
    g.add_argument("--sd", type=float, default=1.0)


def _add_training(p):
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--data", help="training CSV (alternative to a synthetic spec)")
    g.add_argument("--noise", type=_ratio, default=0.0, help="label noise for synthetic data")
    g.add_argument("--test", help="held-out CSV for Recall@K and NMI")
    g.add_argument("--mask", help="noise mask CSV for the weight-separation gap")
    g.add_argument("--ks", type=_csv_list(int), default=list(DEFAULT_KS))
    g.add_argument("--lambda0", type=float, default=d.age.lam0)
    g.add_argument("--lambda-max", type=float, default=d.age.lam_max)
    g.add_argument("--mult", type=float, default=d.age.mult)
    g.add_argument("--mu", type=float, default=d.mu)
    g.add_argument("--alpha", type=float, default=d.hp.alpha)
    g.add_argument("--beta", type=float, default=d.hp.beta)
    g.add_argument("--rho", type=float, default=d.hp.rho)
    g.add_argument("--eps", type=float, default=d.hp.eps)
    g.add_argument("--p", type=int, default=d.P)
    g.add_argument("--k", type=int, default=d.K)
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--outer-iters", type=int, default=d.outer_iters)
    g.add_argument("--theta-epochs", type=int, default=d.theta_epochs)
    g.add_argument("--w-iters", type=int, default=None)
    g.add_argument("--w-sampled", action="store_true",
                   help="stochastic weight gradients from P classes and K samples")
    g.add_argument("--w-growth", type=float, default=d.w_growth)
    g.add_argument("--embed-dim", type=int, default=d.embed_dim)
    g.add_argument("--hidden", type=int, default=d.hidden)
    g.add_argument("--activation", choices=nn.ACTIVATIONS, default=d.activation)
    g.add_argument("--seed", type=int, default=0)
    _add_synthetic(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bspml", description="Balanced self-paced metric learning experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic Gaussian-cluster dataset")
    p.add_argument("--config")
    _add_synthetic(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("corrupt", help="flip a fraction of labels in every class")
    p.add_argument("--config")
    p.add_argument("--in", dest="input")
    p.add_argument("--ratio", type=_ratio)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--mask")

    p = sub.add_parser("train", help="train with sample weights (bspml) or without (ms)")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("bspml", "ms"), default="bspml")
    p.add_argument("--out")
    p.add_argument("--weight-trace", action="store_true",
                   help="also write the last weight step to weight_trace.csv")
    p.add_argument("--trace-stride", type=int, default=100)
    _add_training(p)

    p = sub.add_parser("eval", help="Recall@K and NMI of a checkpoint on a dataset")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--ks", type=_csv_list(int), default=list(DEFAULT_KS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the report to this JSON file")

    p = sub.add_parser("sweep", help="final MAW/SDAW over a grid of mu or lambda_max")
    p.add_argument("--config")
    p.add_argument("--param", choices=("mu", "lambda_max"))
    p.add_argument("--grid", type=_csv_list(float))
    p.add_argument("--out")
    _add_training(p)
    return parser


def _read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict, path) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        dest = "input" if key == "in" else key
        action = actions.get(dest)
        if action is None:
            raise UsageError(f"{path}: unknown key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}: {key} must be true or false")
            defaults[dest] = raw.lower() in ("true", "1", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{path}: bad value for {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {list(action.choices)}")
        defaults[dest] = value
    sub.set_defaults(**defaults)


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("bspml: a subcommand is required (generate, corrupt, train, eval, sweep)")
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, _read_config_file(args.config), args.config)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n.lstrip("-").replace("-", "_"), None) is None]
    if missing:
        flags = ", ".join("--in" if n == "input" else f"--{n}" for n in missing)
        raise UsageError(f"bspml {args.command}: missing required option(s): {flags}")


def _synthetic_spec(args) -> SyntheticSpec | None:
    if args.classes is None and args.per_class is None:
        return None
    if args.classes is None or args.per_class is None:
        raise UsageError("a synthetic spec needs both --classes and --per-class")
    return SyntheticSpec(args.classes, args.per_class, args.dim, args.sep, args.sd)


def train_config_from(args, **overrides) -> TrainConfig:
    kw = dict(
        outer_iters=args.outer_iters,
        theta_epochs=args.theta_epochs,
        w_iters=args.w_iters,
        P=args.p,
        K=args.k,
        lr=args.lr,
        hp=MSHyperParams(args.alpha, args.beta, args.rho, args.eps),
        mu=args.mu,
        age=AgeSchedule(args.lambda0, args.mult, args.lambda_max),
        w_exhaustive=not args.w_sampled,
        w_growth=args.w_growth,
        w_schedule=StepSchedule(),
        embed_dim=args.embed_dim,
        hidden=args.hidden,
        activation=args.activation,
        seed=args.seed,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def run_config_from(args, out_dir) -> RunConfig:
    return RunConfig(
        train=train_config_from(args),
        out_dir=Path(out_dir),
        data_path=None if args.data is None else Path(args.data),
        synthetic=_synthetic_spec(args),
        noise=args.noise,
        test_path=None if args.test is None else Path(args.test),
        mask_path=None if args.mask is None else Path(args.mask),
        ks=tuple(args.ks),
        seed=args.seed,
    )


# ------------------------------------------------------------- pipeline

def _synthetic_seeds(seed):
    data, noise, test = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(s.generate_state(1)[0]) for s in (data, noise, test))


def load_run_data(rc: RunConfig) -> tuple[Dataset, Dataset | None, NoiseMask | None]:
    """Training set, optional held-out set and optional noise mask.

    Synthetic runs draw a clean held-out set from the same class centers
    with its own seed, so retrieval is always scored against true labels.
    """
    if rc.synthetic is not None:
        data_seed, noise_seed, test_seed = _synthetic_seeds(rc.seed)
        clean = generate_synthetic(rc.synthetic, data_seed)
        train, mask = inject_label_noise(clean, rc.noise, noise_seed)
        test = generate_synthetic(rc.synthetic, test_seed)
        if rc.test_path is not None:
            test = load_dataset(rc.test_path)
        if rc.mask_path is not None:
            mask = load_mask(rc.mask_path, train)
        return train, test, mask
    train = load_dataset(rc.data_path)
    test = None if rc.test_path is None else load_dataset(rc.test_path)
    mask = None if rc.mask_path is None else load_mask(rc.mask_path, train)
    return train, test, mask


def _write_weights(path, ds: Dataset, w):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "weight"])
        for i in range(ds.n_samples):
            writer.writerow([i, ds.label_map[int(ds.labels[i])], repr(float(w[i]))])


def _write_weight_trace(path, rows):
    cols = ["iter", "coordinate", "G", "gamma", "objective", "proj_grad_norm"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in cols])


def run_training(rc: RunConfig, mode: str = "bspml", weight_trace: bool = False,
                 trace_stride: int = 100) -> dict:
    """Train, write the artifacts into ``rc.out_dir`` and return the report."""
    t0 = time.perf_counter()
    train, test, mask = load_run_data(rc)
    out = rc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = [] if weight_trace and mode == "bspml" else None
    if mode == "bspml":
        model, state, trace = bspml_train(train, rc.train, weight_trace=rows,
                                          trace_stride=trace_stride)
    else:
        model, state, trace = ms_baseline_train(train, rc.train, return_trace=True)

    nn.save_checkpoint(model, out / "model.ckpt")
    trace.to_csv(out / "trace.csv")
    reasons = {}
    metrics = {"recall": None, "nmi": None, "maw": None, "sdaw": None, "weight_gap": None}
    if mode == "bspml":
        _write_weights(out / "weights.csv", train, state.w)
        stats = weight_stats(state)
        metrics["maw"], metrics["sdaw"] = stats.maw, stats.sdaw
        if mask is None:
            reasons["weight_gap"] = "no noise mask available"
        elif not mask.flipped.any():
            reasons["weight_gap"] = "no noisy samples"
        else:
            metrics["weight_gap"] = weight_separation(state.w, mask)[2]
    else:
        for key in ("maw", "sdaw", "weight_gap"):
            reasons[key] = "ms mode keeps every weight at 1"
    if rows is not None:
        _write_weight_trace(out / "weight_trace.csv", rows)

    if test is None:
        reasons["recall"] = reasons["nmi"] = "no test set given"
    else:
        ks = [k for k in rc.ks if k < test.n_samples]
        if len(ks) < len(rc.ks):
            log.warning("dropping ks >= test size %d", test.n_samples)
        report = evaluate_retrieval(nn.embed(model, test.features), test.labels, ks or [1],
                                    seed=rc.seed)
        metrics["recall"] = {str(k): v for k, v in report.recall.items()}
        metrics["nmi"] = report.nmi
    if reasons:
        metrics["null_reasons"] = reasons

    config = rc.echo()
    config["mode"] = mode
    result = {
        "config": config,
        "label_map": {str(k): v for k, v in train.label_map.items()},
        "metrics": metrics,
        "trace_file": str(out / "trace.csv"),
        "runtime_sec": time.perf_counter() - t0,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def run_sweep(rc: RunConfig, param: str, grid) -> list[dict]:
    """Final MAW and SDAW for each grid value of ``mu`` or ``lambda_max``."""
    train, _, _ = load_run_data(rc)
    rows = []
    for value in grid:
        if param == "mu":
            cfg = dataclasses.replace(rc.train, mu=value)
        else:
            cfg = dataclasses.replace(rc.train, age=dataclasses.replace(rc.train.age, lam_max=value))
        _, state, _ = bspml_train(train, cfg)
        stats = weight_stats(state)
        log.info("%s=%g maw=%.4f sdaw=%.4f", param, value, stats.maw, stats.sdaw)
        rows.append({param: value, "maw": stats.maw, "sdaw": stats.sdaw})
    return rows


# ------------------------------------------------------------- commands

def cmd_generate(args):
    _require(args, "out")
    spec = _synthetic_spec(args)
    if spec is None:
        raise UsageError("generate needs --classes and --per-class")
    write_dataset(generate_synthetic(spec, args.seed), args.out)


def cmd_corrupt(args):
    _require(args, "input", "ratio", "out", "mask")
    ds = load_dataset(args.input)
    noisy, mask = inject_label_noise(ds, args.ratio, args.seed)
    write_dataset(noisy, args.out)
    write_mask(mask, noisy, args.mask)


def cmd_train(args):
    _require(args, "out")
    rc = run_config_from(args, args.out)
    result = run_training(rc, args.mode, args.weight_trace, args.trace_stride)
    json.dump(result["metrics"], sys.stdout, indent=2, sort_keys=True)
    print()


def cmd_eval(args):
    _require(args, "model", "data")
    model = nn.load_checkpoint(args.model)
    ds = load_dataset(args.data)
    report = evaluate_retrieval(nn.embed(model, ds.features), ds.labels, args.ks, seed=args.seed)
    text = json.dumps(report.as_dict(), indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


def cmd_sweep(args):
    _require(args, "param", "out")
    if not args.grid:
        raise UsageError("bspml sweep: --grid must list at least one value")
    rc = run_config_from(args, Path(args.out).parent)
    rows = run_sweep(rc, args.param, args.grid)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.param, "maw", "sdaw"])
        for r in rows:
            writer.writerow([repr(float(r[args.param])), repr(r["maw"]), repr(r["sdaw"])])


COMMANDS = {
    "generate": cmd_generate,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (BSPMLError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
