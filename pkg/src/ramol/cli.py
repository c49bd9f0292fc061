"""``ramol`` command line: run, ablate, bench, gen, tune and rerun.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .evaluation import (
    ABLATIONS,
    DEFAULT_WINDOW,
    ablation_suite,
    bench,
    prequential_run,
    regret_run,
    run_seeds,
    aggregate,
    write_ablation_csv,
    write_bench_csv,
    write_main_csv,
)
from .learner import VARIANTS, LearnerConfig, load_config
from .stream import (
    CsvSchema,
    StreamError,
    bayes_predict,
    file_sha256,
    gen_piecewise_stream,
    load_stream_spec,
    open_csv_stream,
    regime_schedule,
)

log = logging.getLogger("ramol")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _horizon(text: str):
    if text.lower() in ("none", "off"):
        return None
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("horizon must be an integer or 'none'") from None


def _tau(text: str):
    if text == "adaptive":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("tau must be a number or 'adaptive'") from None


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="PATH", help="CSV stream with a header row")
    src.add_argument("--synthetic", metavar="SPEC", help="TOML regime spec")
    p.add_argument("--label", help="label column (default: last column)")
    p.add_argument("--features", help="comma-separated feature columns (default: all but label)")
    p.add_argument("--labels", help="comma-separated label values in class order")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--classes", type=int, help="number of classes (default: from --labels, else 2)")
    p.add_argument("--stream-seed", type=int, help="seed for synthetic stream generation")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="final-accuracy window W")
    p.add_argument("--out", default="runs", help="output root directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_learner_args(p: argparse.ArgumentParser, with_variant: bool) -> None:
    p.add_argument("--config", metavar="TOML", help="learner config file")
    if with_variant:
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--ablation", help="comma list of no_time,no_sim,no_decay (ram_gated only)")
    p.add_argument("--buffer", type=int, dest="B")
    p.add_argument("--k", type=int, dest="K")
    p.add_argument("--horizon", type=_horizon, dest="H", default=argparse.SUPPRESS)
    p.add_argument("--tau", type=_tau)
    p.add_argument("--rho", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", action="store_true", default=None, dest="lr_decay")
    p.add_argument("--hidden", type=int, dest="hidden_dim")
    p.add_argument("--activation", choices=("relu", "tanh"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ramol", description="Retrieval-augmented online learning experiments")
    parser.add_argument("--version", action="version", version=f"ramol {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="prequential run over one or more seeds")
    _add_data_args(p)
    _add_learner_args(p, with_variant=True)
    p.add_argument("--seeds", type=_int_list, default=[0])

    p = sub.add_parser("ablate", help="six-variant ablation under one seed")
    _add_data_args(p)
    _add_learner_args(p, with_variant=False)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("bench", help="seed variability and runtime factor vs baseline")
    _add_data_args(p)
    _add_learner_args(p, with_variant=False)
    p.add_argument("--variants", default="baseline,ram_naive,ram_gated")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    p.add_argument("--repeats", type=int, default=3, help="timing repeats per run (median)")

    p = sub.add_parser("gen", help="materialise a synthetic stream to CSV")
    p.add_argument("spec", help="TOML regime spec")
    p.add_argument("--seed", type=int, help="stream seed (default: spec seed, else 0)")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("tune", help="grid search on a validation prefix")
    _add_data_args(p)
    _add_learner_args(p, with_variant=True)
    p.add_argument("--prefix", type=int, default=5000, help="number of leading examples")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="config field and candidate values; repeatable")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("rerun", help="reproduce a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="runs")
    return parser


# --------------------------------------------------------------------------
# Inputs
# --------------------------------------------------------------------------


@dataclass
class Dataset:
    examples: list
    n_classes: int
    ident: str
    sha256: str
    source: dict
    regimes: list | None = None
    stream_seed: int | None = None


def load_dataset(args) -> Dataset:
    if args.synthetic:
        regimes, spec_seed = load_stream_spec(args.synthetic)
        seed = args.stream_seed if args.stream_seed is not None else (spec_seed or 0)
        examples = list(gen_piecewise_stream(regimes, seed))
        return Dataset(
            examples, regimes[0].generator.n_classes, os.path.basename(args.synthetic),
            file_sha256(args.synthetic),
            {"synthetic": os.path.abspath(args.synthetic), "stream_seed": seed},
            regimes, seed,
        )
    path = args.data
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such data file: {path}")
    label = args.label
    if label is None:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh, delimiter=args.delimiter), None)
        if not header:
            raise StreamError(f"{path}: missing header row")
        label = header[-1].strip()
    schema = CsvSchema(
        label=label,
        features=tuple(args.features.split(",")) if args.features else None,
        labels=tuple(args.labels.split(",")) if args.labels else None,
        delimiter=args.delimiter,
    )
    stream = open_csv_stream(path, schema)
    examples = list(stream)
    n_classes = args.classes or (len(schema.labels) if schema.labels else 2)
    bad = [ex.step for ex in examples if ex.label >= n_classes]
    if bad:
        raise StreamError(f"row {bad[0]}: label index exceeds --classes {n_classes}")
    source = {
        "data": os.path.abspath(path), "label": label, "features": list(stream.feature_names),
        "label_map": stream.label_map, "delimiter": args.delimiter,
    }
    return Dataset(examples, n_classes, os.path.basename(path), file_sha256(path), source)


_LEARNER_KEYS = ("variant", "B", "K", "H", "tau", "rho", "alpha", "beta", "lr", "lr_decay",
                 "hidden_dim", "activation")


def resolve_config(args) -> LearnerConfig:
    over = {k: getattr(args, k) for k in _LEARNER_KEYS if hasattr(args, k) and getattr(args, k) is not None}
    if hasattr(args, "H"):
        over["H"] = args.H
    if getattr(args, "ablation", None):
        flags = [f.strip() for f in args.ablation.split(",") if f.strip()]
        unknown = set(flags) - {"no_time", "no_sim", "no_decay"}
        if unknown:
            raise UsageError(f"unknown ablation flags: {sorted(unknown)}")
        over.update({f: True for f in flags})
    try:
        if args.config:
            base = load_config(args.config)
            return base.replace(**over)
        return LearnerConfig(**over)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# Outputs
# --------------------------------------------------------------------------


def _manifest(command: str, cfg: LearnerConfig, ds: Dataset, seeds: list[int], window: int, extra=None) -> dict:
    m = {
        "command": command,
        "code_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "argv": sys.argv[1:],
        "config": cfg.to_dict(),
        "dataset": {"id": ds.ident, "sha256": ds.sha256, "n_examples": len(ds.examples),
                    "n_classes": ds.n_classes, **ds.source},
        "seeds": seeds,
        "window": window,
        "outputs": [],
    }
    if extra:
        m.update(extra)
    return m


class RunDir:
    """Output directory whose manifest is written before anything else.

    If the body raises, the directory is removed.
    """

    def __init__(self, root: str, manifest: dict):
        key = json.dumps({k: manifest[k] for k in ("command", "config", "dataset", "seeds", "window")},
                         sort_keys=True)
        digest = hashlib.sha256(key.encode()).hexdigest()[:8]
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        self.path = os.path.join(root, f"{stamp}-{digest}")
        n = 1
        while os.path.exists(self.path):
            self.path = os.path.join(root, f"{stamp}-{digest}-{n}")
            n += 1
        self.manifest = manifest

    def __enter__(self):
        os.makedirs(self.path)
        self._write_manifest()
        return self

    def _write_manifest(self):
        with open(os.path.join(self.path, "manifest.json"), "w") as fh:
            json.dump(self.manifest, fh, indent=2, default=str)

    def file(self, name: str) -> str:
        self.manifest["outputs"].append(name)
        self._write_manifest()
        return os.path.join(self.path, name)

    def write_json(self, name: str, obj) -> None:
        with open(self.file(name), "w") as fh:
            json.dump(obj, fh, indent=2, default=str)

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.path, ignore_errors=True)
        return False


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _check_finite(metrics) -> None:
    if not np.all(np.isfinite(metrics.per_step_loss)):
        raise FloatingPointError("non-finite loss encountered")


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args)
    return _execute_run(cfg, ds, args.seeds, args.window, args.out, args.workers, args.command)


def _execute_run(cfg, ds, seeds, window, out, workers, command="run") -> int:
    manifest = _manifest(command, cfg, ds, seeds, window)
    with RunDir(out, manifest) as rd:
        runs = run_seeds(cfg, ds.examples, ds.n_classes, seeds, window, workers, dataset=ds.ident)
        for r in runs:
            _check_finite(r)
            rd.write_json(f"metrics-seed{r.seed}.json", r.summary())
            r.write_curve(rd.file(f"curve-seed{r.seed}.csv"))
            if ds.regimes is not None:
                rec = regret_run(cfg.replace(seed=r.seed), ds.regimes, ds.stream_seed, window,
                                 examples=ds.examples)
                rd.write_json(f"regret-seed{r.seed}.json", rec.summary())
        agg = aggregate(runs)
        rd.write_json("aggregate.json", agg.summary())
        for r in runs:
            log.info("seed %d: final=%.4f avg=%.4f", r.seed, r.final_acc, r.avg_acc)
        print(rd.path)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args)
    manifest = _manifest("ablate", cfg.replace(seed=args.seed), ds, [args.seed], args.window,
                         {"variants": {k: v for k, v in ABLATIONS.items()}})
    with RunDir(args.out, manifest) as rd:
        results = ablation_suite(ds.examples, ds.n_classes, args.seed, cfg, args.window, args.workers, ds.ident)
        for name, r in results.items():
            _check_finite(r)
            rd.write_json(f"metrics-{name}.json", r.summary())
        write_ablation_csv(results, rd.file("ablation.csv"))
        print(rd.path)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = set(variants) - set(VARIANTS)
    if bad:
        raise UsageError(f"unknown variants: {sorted(bad)}")
    ds = load_dataset(args)
    manifest = _manifest("bench", cfg, ds, args.seeds, args.window,
                         {"variants": variants, "timing_repeats": args.repeats})
    with RunDir(args.out, manifest) as rd:
        results = bench(ds.examples, ds.n_classes, variants, args.seeds, cfg, args.window, args.repeats, ds.ident)
        for name, agg in results.items():
            rd.write_json(f"aggregate-{name}.json", agg.summary())
        write_bench_csv(ds.ident, results, rd.file("bench.csv"))
        write_main_csv(ds.ident, results, rd.file("main.csv"))
        print(rd.path)
    return EXIT_OK


def cmd_gen(args) -> int:
    regimes, spec_seed = load_stream_spec(args.spec)
    seed = args.seed if args.seed is not None else (spec_seed or 0)
    schedule = regime_schedule(regimes)
    d = regimes[0].generator.dim
    base, _ = os.path.splitext(args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    sidecar = base + ".regimes.csv"
    try:
        with open(args.out, "w", newline="") as fh, open(sidecar, "w", newline="") as sc:
            w = csv.writer(fh)
            s = csv.writer(sc)
            w.writerow([f"x{i}" for i in range(d)] + ["label"])
            s.writerow(["step", "segment", "regime", "bayes_label"])
            for ex in gen_piecewise_stream(regimes, seed):
                seg = int(schedule[ex.step])
                w.writerow([repr(float(v)) for v in ex.features] + [ex.label])
                s.writerow([ex.step, seg, regimes[seg].id, bayes_predict(regimes[seg], ex.features)])
        bounds = np.cumsum([0] + [r.length for r in regimes]).tolist()
        with open(base + ".regimes.json", "w") as fh:
            json.dump({"seed": seed, "spec": os.path.abspath(args.spec),
                       "segments": [{"regime": r.id, "start": bounds[i], "end": bounds[i + 1]}
                                    for i, r in enumerate(regimes)]}, fh, indent=2)
    except BaseException:
        for f in (args.out, sidecar, base + ".regimes.json"):
            if os.path.exists(f):
                os.remove(f)
        raise
    print(args.out)
    return EXIT_OK


def _parse_grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items:
        key, _, values = item.partition("=")
        if not values:
            raise UsageError(f"grid entry {item!r} must look like KEY=V1,V2")
        parsed = []
        for v in values.split(","):
            try:
                parsed.append(json.loads(v))
            except json.JSONDecodeError:
                parsed.append(v)
        grid[key.strip()] = parsed
    return grid


def cmd_tune(args) -> int:
    import itertools

    cfg = resolve_config(args).replace(seed=args.seed)
    grid = _parse_grid(args.grid) or {"lr": [0.001, 0.003, 0.01, 0.03]}
    try:
        candidates = [cfg.replace(**dict(zip(grid, combo))) for combo in itertools.product(*grid.values())]
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    ds = load_dataset(args)
    prefix = ds.examples[: args.prefix]
    manifest = _manifest("tune", cfg, ds, [args.seed], args.window, {"grid": grid, "prefix": args.prefix})
    with RunDir(args.out, manifest) as rd:
        rows = []
        for c in candidates:
            m = prequential_run(c, prefix, ds.n_classes, args.window)
            rows.append({**{k: getattr(c, k) for k in grid}, "avg_acc": m.avg_acc, "final_acc": m.final_acc})
        best = max(rows, key=lambda r: r["avg_acc"])
        rd.write_json("tune.json", {"results": rows, "best": best})
        print(json.dumps(best))
    return EXIT_OK


def cmd_rerun(args) -> int:
    with open(args.manifest) as fh:
        m = json.load(fh)
    if m.get("command") != "run":
        raise UsageError("only manifests written by 'run' can be replayed")
    cfg = LearnerConfig.from_dict(m["config"])
    src = m["dataset"]
    ns = argparse.Namespace(
        synthetic=src.get("synthetic"), data=src.get("data"), label=src.get("label"),
        features=",".join(src["features"]) if src.get("features") else None,
        labels=None, delimiter=src.get("delimiter", ","), classes=src["n_classes"],
        stream_seed=src.get("stream_seed"),
    )
    ds = load_dataset(ns)
    if ds.sha256 != src["sha256"]:
        raise StreamError("dataset content changed since the manifest was written")
    if src.get("label_map") and ds.source.get("label_map") != src["label_map"]:
        raise StreamError("label mapping differs from the manifest")
    return _execute_run(cfg, ds, m["seeds"], m["window"], args.out, 1)


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "bench": cmd_bench, "gen": cmd_gen,
            "tune": cmd_tune, "rerun": cmd_rerun}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ramol {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, StreamError) as exc:
        print(f"ramol {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"ramol {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
