"""Command-line entry point: gen | train | eval | gradcheck | theory-check | reproduce.

Settings come from an optional ``key=value`` file (``--config``), then
``--set section.key=value`` overrides, then explicit flags. Keys are dotted:
``gen.*`` (dataset generation), ``train.*`` (training) and ``model.*``
(backbone). Exit codes: 0 success, 1 runtime failure, 2 usage or validation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import statistics
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import scm
from .graph import BALANCED, decode_jsonl, encode_jsonl
from .gradcheck import run_gradcheck
from .models import GNN, GnnConfig
from .plot import report_chart
from .synth import MARKER, GenSpec, gen_marker_dataset, gen_motif_dataset
from .training import TrainConfig, TrainingError, default_gnn_config, dump_embeddings, evaluate, train

log = logging.getLogger("dcsgl")

SECTIONS = {"gen": GenSpec, "train": TrainConfig, "model": GnnConfig}
MODEL_DERIVED = ("feature_dim", "num_classes", "task")
ALIASES = {"train.lambda": "train.lam"}
ENUM_KEYS = {"gen.family", "gen.task", "train.mode", "train.optimizer", "train.domain", "train.schedule", "model.backbone"}


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ config


def _fields(section: str) -> dict:
    fields = {f.name: f for f in dataclasses.fields(SECTIONS[section])}
    if section == "model":
        fields = {k: v for k, v in fields.items() if k not in MODEL_DERIVED}
    return fields


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return None


def coerce(key: str, raw: str):
    """Parse ``raw`` into the type of the field named by dotted ``key``."""
    section, name = key.split(".", 1)
    f = _fields(section)[name]
    default = _default(f)
    raw = raw.strip()
    try:
        if key in ENUM_KEYS:
            return raw.lower().replace("-", "_")
        if key == "gen.bias":
            return BALANCED if raw.lower() == BALANCED else float(raw)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v) for v in raw.replace(" ", "").split(","))
        return raw
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def canonical_key(key: str) -> str:
    key = ALIASES.get(key.strip(), key.strip())
    if "." not in key:
        raise UsageError(f"unknown key {key!r} (expected section.name)")
    section, name = key.split(".", 1)
    if section not in SECTIONS or name not in _fields(section):
        raise UsageError(f"unknown key {key!r}")
    return key


@dataclasses.dataclass
class RunConfig:
    values: dict = dataclasses.field(default_factory=dict)

    def set(self, key: str, raw) -> None:
        key = canonical_key(key)
        self.values[key] = coerce(key, raw) if isinstance(raw, str) else raw

    def load_file(self, path) -> None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            self.set(k, v)

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre) :]: v for k, v in self.values.items() if k.startswith(pre)}

    def gen_spec(self) -> GenSpec:
        return GenSpec(**self.section("gen"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"))

    def resolved(self, sections=("gen", "train", "model")) -> list:
        lines = []
        for s in sections:
            cls = SECTIONS[s]
            obj = cls(**self.section(s)) if s != "model" else None
            for name, f in _fields(s).items():
                v = getattr(obj, name) if obj is not None else self.section(s).get(name, _default(f))
                lines.append(f"{s}.{name}={v}")
        return lines


def build_config(args, flag_map: dict) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg.load_file(args.config)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k, v)
    for dest, key in flag_map.items():
        v = getattr(args, dest, None)
        if v is not None:
            cfg.set(key, str(v))
    return cfg


def _log_config(cfg: RunConfig, sections) -> None:
    for line in cfg.resolved(sections):
        log.info("config %s", line)


# ---------------------------------------------------------------- commands

GEN_FLAGS = {
    "family": "gen.family",
    "bias": "gen.bias",
    "count": "gen.count",
    "seed": "gen.seed",
    "task": "gen.task",
    "feature_dim": "gen.feature_dim",
}
TRAIN_FLAGS = {
    "mode": "train.mode",
    "seed": "train.seed",
    "epochs": "train.epochs",
    "max_epochs": "train.max_epochs",
    "patience": "train.patience",
    "lr": "train.lr",
    "lam": "train.lam",
    "m": "train.m",
    "K": "train.K",
    "batch_size": "train.batch_size",
    "backbone": "model.backbone",
}


def _make_dataset(spec: GenSpec):
    if spec.family == MARKER:
        return gen_marker_dataset(spec), None
    return gen_motif_dataset(spec, return_base_classes=True)


def cmd_gen(args) -> int:
    cfg = build_config(args, GEN_FLAGS)
    spec = cfg.gen_spec()
    spec.validate()
    _log_config(cfg, ("gen",))
    ds, bases = _make_dataset(spec)
    encode_jsonl(ds, args.out)
    sizes = {k: len(v) for k, v in ds.splits.items()}
    print(f"wrote {args.out}: {len(ds.graphs)} graphs, splits {sizes}")
    print(f"avg nodes {np.mean([g.num_nodes for g in ds.graphs]):.2f}, "
          f"avg edges {np.mean([len(g.edges) for g in ds.graphs]):.2f}")
    if bases is not None:
        train = ds.splits["train"]
        paired = np.mean([bases[i] == ds.graphs[i].y for i in train]) if train else float("nan")
        print(f"bias target {spec.bias}, empirical P(paired base | motif) on train {paired:.4f}")
    return 0


def _load_data(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return decode_jsonl(path)


def _gnn_config(cfg: RunConfig, ds) -> GnnConfig:
    return default_gnn_config(ds, **cfg.section("model"))


def cmd_train(args) -> int:
    cfg = build_config(args, TRAIN_FLAGS)
    ds = _load_data(args.data)
    tcfg = cfg.train_config()
    gcfg = _gnn_config(cfg, ds)
    tcfg.validate(gcfg.num_layers)
    _log_config(cfg, ("train", "model"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    model, report = train(tcfg, ds, gcfg)
    report.write_csv(args.csv or out / "metrics.csv")
    model.save(args.checkpoint or out / "model.json", extra={"train": dataclasses.asdict(tcfg), "data": ds.name})
    if args.svg:
        Path(args.svg).write_text(report_chart(report.rows, title=f"{tcfg.mode} seed {tcfg.seed}"), encoding="utf-8")
    if args.features:
        dump_embeddings(model, ds.split("test"), args.features)
    log.info("trained in %.1fs", time.perf_counter() - t0)
    print(f"best epoch {report.best_epoch}, test accuracy {report.test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model = GNN.load(args.checkpoint)
    ds = _load_data(args.data)
    acc = evaluate(model, ds, args.split)
    print(f"{args.split} accuracy {acc:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    report = run_gradcheck(seed=args.seed, eps=args.eps)
    print(report.table())
    print(f"max relative error {report.max_error:.3e} ({time.perf_counter() - t0:.1f}s)")
    return 0 if report.ok(1e-4) else 1


def cmd_theory_check(args) -> int:
    t0 = time.perf_counter()
    seeds = range(args.seed, args.seed + args.scms)
    t1 = scm.fuzz_theorem1(seeds, args.max_alphabet)
    mins = {k: min(r.slacks[k] for r in t1) for k in t1[0].slacks}
    print(f"theorem 1 over {len(t1)} random models")
    print("  slack  min")
    for k, v in mins.items():
        print(f"  {k:<5}  {v: .3e}")
    print(f"  step (b) equality gap, max {max(r.b_equality_gap for r in t1):.3e} (informative only)")
    t1_ok = all(r.ok(1e-9) for r in t1)
    t2 = scm.fuzz_theorem2(range(args.seed, args.seed + args.premise_scms), args.max_alphabet, args.alternatives)
    unmet = sum(not r.premise_met for r in t2)
    met = [r for r in t2 if r.premise_met]
    eq = max((r.equality_gap for r in met), default=0.0)
    excess = max((r.max_excess for r in met if r.max_excess is not None), default=float("-inf"))
    print(f"theorem 2 over {len(t2)} premise models ({unmet} premise unmet)")
    print(f"  max |I(S;T) - I(S;T~)| {eq:.3e}")
    print(f"  max alternative excess over bound {excess:.3e}")
    t2_ok = unmet == 0 and all(r.ok(1e-10) for r in met)
    print(f"{'OK' if t1_ok and t2_ok else 'VIOLATION'} ({time.perf_counter() - t0:.1f}s)")
    return 0 if t1_ok and t2_ok else 1


def cmd_reproduce(args) -> int:
    cfg = build_config(args, {**GEN_FLAGS, **{k: v for k, v in TRAIN_FLAGS.items() if k != "seed"}})
    if args.data:
        ds = _load_data(args.data)
    else:
        spec = cfg.gen_spec()
        spec.validate()
        ds, _ = _make_dataset(spec)
    modes = [m.strip().lower().replace("-", "_") for m in args.modes.split(",")]
    base = cfg.train_config()
    gcfg = _gnn_config(cfg, ds)
    _log_config(cfg, ("gen", "train", "model"))
    results = {}
    for mode in modes:
        accs = []
        for seed in range(args.seeds):
            tcfg = dataclasses.replace(base, mode=mode, seed=seed)
            tcfg.validate(gcfg.num_layers)
            _, report = train(tcfg, ds, gcfg)
            accs.append(100.0 * report.test_accuracy)
            log.info("%s seed %d test %.2f", mode, seed, accs[-1])
        results[mode] = accs
    rows = []
    for mode, accs in results.items():
        sd = statistics.stdev(accs) if len(accs) > 1 else 0.0
        rows.append([mode, f"{statistics.fmean(accs):.2f}", f"{sd:.2f}", len(accs)] + [f"{a:.2f}" for a in accs])
    header = ["mode", "mean", "std", "n"] + [f"seed{s}" for s in range(args.seeds)]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"dataset {ds.name}")
    for r in rows:
        print(f"  {r[0]:<14} {r[1]:>6} +- {r[2]}")
    return 0


# ------------------------------------------------------------------ parser


def _common(p, flags: dict, types: Optional[dict] = None):
    types = types or {}
    for dest in flags:
        p.add_argument("--" + dest.replace("_", "-"), dest=dest, default=None, type=types.get(dest, str))
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted setting")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcsgl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset as JSONL")
    _common(p, GEN_FLAGS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    _common(p, TRAIN_FLAGS)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--csv")
    p.add_argument("--checkpoint")
    p.add_argument("--svg")
    p.add_argument("--features")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("theory-check", help="exact checks of the information bounds")
    p.add_argument("--scms", type=int, default=1000)
    p.add_argument("--premise-scms", type=int, default=100)
    p.add_argument("--alternatives", type=int, default=100)
    p.add_argument("--max-alphabet", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("reproduce", help="backbone vs method vs ablations over seeds")
    _common(p, {**GEN_FLAGS, **{k: v for k, v in TRAIN_FLAGS.items() if k != "seed"}})
    p.add_argument("--data")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--modes", default="backbone_only,dcsgl,dcsgl_t,dcsgl_a")
    p.add_argument("--out", default="reproduce.csv")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # validation failures of configs and inputs
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
