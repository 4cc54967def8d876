"""Command-line entry point.

Subcommands: synth, train, eval, benchmark, ablate, predict. Options come
from defaults, then a JSON config file (--config or $LANEPAVE_CONFIG),
then flags, in increasing precedence. The resolved effective config is
written beside every command's outputs, and re-running from it reproduces
the outputs byte for byte.

Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric divergence,
5 partial failure (some benchmark/ablation cells failed).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import data as data_mod
from . import evaluate as eval_mod
from . import model as model_mod
from . import train as train_mod
from .errors import ConfigError, DataError, DivergenceError
from .seeding import derive_seed

log = logging.getLogger("lanepave")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_PARTIAL = 5

SCENARIOS = ("2lane", "3lane", "4lane")
INDICES = ("pci", "pqi", "rqi")
VARIANTS = model_mod.VARIANTS


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# Option schema per command: name -> (type, default). Types are applied to
# config-file values so a bad file fails fast as a usage error.
_COMMON = {"seed": (int, 0), "out_dir": (str, None)}

OPTIONS = {
    "synth": {**_COMMON, "scenario": (str, "4lane"), "segments": (int, None)},
    "train": {**_COMMON, "data": (str, None), "index": (str, "pci"),
              "variant": (str, "full"), "epochs": (int, 200),
              "batch_size": (int, 32), "learning_rate": (float, 0.001),
              "optimizer": (str, "adam"), "clip_norm": (float, None),
              "ratio": (float, 0.7), "epsilon_rise": (float, 2.0),
              "track_val": (bool, False), "arch_overrides": (dict, {})},
    "eval": {**_COMMON, "data": (str, None), "checkpoint": (str, None),
             "ratio": (float, 0.7), "epsilon_rise": (float, 2.0)},
    "benchmark": {**_COMMON, "scenarios": (str, "2lane,3lane,4lane"),
                  "indices": (str, "pci,pqi,rqi"), "seeds": (str, "0,1,2"),
                  "segments": (int, None), "epochs": (int, 200),
                  "batch_size": (int, 32), "learning_rate": (float, 0.001),
                  "baseline_aux": (bool, True), "arch_overrides": (dict, {})},
    "ablate": {**_COMMON, "scenario": (str, "4lane"),
               "indices": (str, "pci,pqi,rqi"), "seeds": (str, "0,1,2"),
               "segments": (int, None), "epochs": (int, 200),
               "batch_size": (int, 32), "learning_rate": (float, 0.001),
               "arch_overrides": (dict, {})},
    "predict": {**_COMMON, "data": (str, None), "checkpoint": (str, None),
                "encoder": (str, None)},
}


def _resolve(command: str, args) -> dict:
    """Merge defaults, config file, and flags; type-check file values."""
    spec = OPTIONS[command]
    cfg = {name: default for name, (_, default) in spec.items()}
    path = getattr(args, "config", None) or os.environ.get("LANEPAVE_CONFIG")
    if path:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"bad JSON in config {path}: {err}") from err
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key == "command":
                continue
            if key not in spec:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            typ = spec[key][0]
            if value is not None:
                if typ is bool and not isinstance(value, bool):
                    raise ConfigError(f"config key {key!r} must be a boolean")
                if typ is dict and not isinstance(value, dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                if typ in (int, float, str):
                    try:
                        value = typ(value)
                    except (TypeError, ValueError) as err:
                        raise ConfigError(
                            f"config key {key!r} must be {typ.__name__}") from err
            cfg[key] = value
    for name in spec:
        flag = getattr(args, name, None)
        if flag is not None:
            cfg[name] = flag
    if not cfg.get("out_dir"):
        raise ConfigError("--out-dir is required")
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_resolved(out: Path, command: str, cfg: dict) -> None:
    _write_json(out / "resolved_config.json", {"command": command, **cfg})


def _parse_list(raw: str, allowed, what: str):
    items = [s.strip().lower() for s in str(raw).split(",") if s.strip()]
    if not items:
        raise ConfigError(f"no {what} given")
    for it in items:
        if it not in allowed:
            raise ConfigError(f"unknown {what} {it!r}; choose from {allowed}")
    return items


def _parse_seeds(raw: str):
    try:
        return tuple(int(s) for s in str(raw).split(",") if s.strip())
    except ValueError as err:
        raise ConfigError(f"bad seed list {raw!r}") from err


def cmd_synth(args) -> int:
    cfg = _resolve("synth", args)
    out = _out_dir(cfg)
    records, ledger = data_mod.synth_generate(
        cfg["scenario"], cfg["segments"],
        seed=derive_seed(cfg["seed"], "synth", cfg["scenario"]))
    data_mod.write_records(records, out / "records.csv")
    _write_json(out / "ledger.json", ledger)
    _emit_resolved(out, "synth", cfg)
    print(f"wrote {len(records)} records for {ledger['scenario']} "
          f"({ledger['n_segments']} segments) to {out}")
    return EXIT_OK


def _prepare_from_file(data_path, index_kind, seed, ratio, epsilon_rise,
                       exclude=()):
    if not data_path:
        raise ConfigError("--data is required")
    records, issues = data_mod.parse_records(data_path)
    if issues:
        raise DataError(
            f"{len(issues)} malformed lines in {data_path}; first: "
            f"line {issues[0].line}: {issues[0].message}")
    return data_mod.prepare_dataset(
        records, index_kind, split_seed=derive_seed(seed, "split", index_kind),
        ratio=ratio, epsilon_rise=epsilon_rise, exclude=exclude)


def cmd_train(args) -> int:
    cfg = _resolve("train", args)
    out = _out_dir(cfg)
    kind = cfg["index"].upper()
    if kind not in data_mod.INDEX_KINDS:
        raise ConfigError(f"unknown index {cfg['index']!r}")
    prep = _prepare_from_file(cfg["data"], kind, cfg["seed"], cfg["ratio"],
                              cfg["epsilon_rise"])
    arch = model_mod.ArchConfig(
        num_lanes=prep.num_lanes, aux_dim=prep.encoder.width,
        variant=cfg["variant"], **cfg["arch_overrides"])
    tcfg = train_mod.TrainConfig(
        learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
        epochs=cfg["epochs"], optimizer=cfg["optimizer"],
        clip_norm=cfg["clip_norm"], seed=derive_seed(cfg["seed"], "train", kind))
    val = prep.test if cfg["track_val"] else None
    try:
        result = train_mod.fit(prep.train, val, arch, tcfg)
    except DivergenceError as err:
        if err.log is not None and err.log.entries:
            _write_text(out / "trainlog.csv", err.log.to_table())
        raise

    meta = {"index_kind": kind, "scenario": f"{prep.num_lanes}lane"}
    model_mod.save_checkpoint(out / "checkpoint_final.ckpt", result.params,
                              arch, tcfg.seed, meta=meta)
    if result.best_params is not None:
        model_mod.save_checkpoint(
            out / "checkpoint_best.ckpt", result.best_params, arch, tcfg.seed,
            meta={**meta, "best_epoch": result.best_epoch})
    _write_text(out / "trainlog.csv", result.log.to_table())
    _write_json(out / "encoder.json",
                data_mod.encoder_to_dict(prep.encoder))
    report = eval_mod.evaluate_model(result.params, arch, prep.test,
                                     "multi_task" if arch.variant == "full"
                                     else arch.variant,
                                     f"{prep.num_lanes}lane", kind)
    _write_json(out / "eval.json", report.to_dict())
    _emit_resolved(out, "train", cfg)
    print(f"trained {cfg['epochs']} epochs on {len(prep.train)} samples; "
          f"test MAPE {report.overall:.3f}% -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve("eval", args)
    out = _out_dir(cfg)
    if not cfg["checkpoint"]:
        raise ConfigError("--checkpoint is required")
    ckpt = model_mod.load_checkpoint(cfg["checkpoint"])
    kind = ckpt.meta.get("index_kind", "PCI")
    prep = _prepare_from_file(cfg["data"], kind, cfg["seed"], cfg["ratio"],
                              cfg["epsilon_rise"])
    report = eval_mod.evaluate_model(
        ckpt.params, ckpt.config, prep.test,
        "multi_task" if ckpt.config.variant == "full" else ckpt.config.variant,
        ckpt.meta.get("scenario", f"{prep.num_lanes}lane"), kind)
    _write_json(out / "eval.json", report.to_dict())
    lines = ["lane,mape"] + [f"{i+1},{repr(m)}"
                             for i, m in enumerate(report.lane_mapes)]
    lines.append(f"overall,{repr(report.overall)}")
    _write_text(out / "eval.csv", "\n".join(lines) + "\n")
    _emit_resolved(out, "eval", cfg)
    print(f"test MAPE {report.overall:.3f}% ({kind}) -> {out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _resolve("benchmark", args)
    out = _out_dir(cfg)
    scenarios = tuple(int(s[0]) for s in
                      _parse_list(cfg["scenarios"], SCENARIOS, "scenario"))
    indices = tuple(k.upper() for k in
                    _parse_list(cfg["indices"], INDICES, "index"))
    plan = eval_mod.BenchmarkPlan(
        scenarios=scenarios, indices=indices, seeds=_parse_seeds(cfg["seeds"]),
        root_seed=cfg["seed"], n_segments=cfg["segments"],
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], baseline_aux=cfg["baseline_aux"],
        arch_overrides=cfg["arch_overrides"])
    matrix = eval_mod.run_benchmark(plan)
    _write_text(out / "benchmark.csv", matrix.to_csv())
    _write_text(out / "benchmark_long.csv", matrix.to_long_csv())
    _write_json(out / "benchmark.json", matrix.to_dict())
    _emit_resolved(out, "benchmark", cfg)
    print(f"{len(matrix.cells)} cells, {matrix.n_failed} failed -> {out}")
    return EXIT_PARTIAL if matrix.n_failed else EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve("ablate", args)
    out = _out_dir(cfg)
    indices = tuple(k.upper() for k in
                    _parse_list(cfg["indices"], INDICES, "index"))
    plan = eval_mod.AblationPlan(
        scenario=data_mod.norm_scenario(cfg["scenario"]), indices=indices,
        seeds=_parse_seeds(cfg["seeds"]), root_seed=cfg["seed"],
        n_segments=cfg["segments"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
        arch_overrides=cfg["arch_overrides"])
    report = eval_mod.run_ablation(plan)
    _write_text(out / "ablation.csv", report.to_csv())
    _write_json(out / "ablation.json", report.to_dict())
    _emit_resolved(out, "ablate", cfg)
    print(f"{len(report.rows)} ablation rows, {len(report.errors)} errors "
          f"-> {out}")
    return EXIT_PARTIAL if report.errors else EXIT_OK


def cmd_predict(args) -> int:
    cfg = _resolve("predict", args)
    out = _out_dir(cfg)
    for key in ("data", "checkpoint", "encoder"):
        if not cfg[key]:
            raise ConfigError(f"--{key} is required")
    ckpt = model_mod.load_checkpoint(cfg["checkpoint"])
    kind = ckpt.meta.get("index_kind", "PCI")
    spec = data_mod.encoder_from_dict(
        json.loads(Path(cfg["encoder"]).read_text(encoding="utf-8")))
    records, issues = data_mod.parse_records(cfg["data"])
    if issues:
        raise DataError(f"{len(issues)} malformed lines in {cfg['data']}")
    units, drops = data_mod.build_prediction_units(
        records, kind, k=ckpt.config.series_len)
    if not units:
        raise DataError(f"no prediction units for {kind} in {cfg['data']}")
    units = [replace(u, aux=data_mod.encode(u.attrs, spec)) for u in units]
    preds = eval_mod.predict(ckpt.params, ckpt.config, units)
    low, high = 0.0, 120.0
    n_out = int(((preds < low) | (preds > high)).sum())
    if n_out:
        log.warning("%d prediction(s) outside the [%g, %g] sanity band",
                    n_out, low, high)
    n_lanes = ckpt.config.num_lanes
    lines = [",".join(["segment_id", "unit_id"]
                      + [f"lane_{n+1}" for n in range(n_lanes)])]
    for u, row in zip(units, preds):
        lines.append(",".join([u.segment_id, u.unit_id]
                              + [repr(float(v)) for v in row]))
    _write_text(out / "predictions.csv", "\n".join(lines) + "\n")
    if drops:
        _write_text(out / "prediction_drops.csv",
                    "segment_id,unit_id,reason\n" + "\n".join(
                        f"{d.segment_id},{d.unit_id},{d.reason}"
                        for d in drops) + "\n")
    _emit_resolved(out, "predict", cfg)
    print(f"predicted {len(units)} units ({n_lanes} lanes) -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanepave",
        description="Lane-level pavement performance prediction pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, handler, helptext):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file "
                                        "(default: $LANEPAVE_CONFIG)")
        p.add_argument("--seed", type=int, help="root seed (default 0)")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.set_defaults(func=handler)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--segments", type=int)

    p = add("train", cmd_train, "train one model on a dataset")
    p.add_argument("--data")
    p.add_argument("--index", choices=INDICES)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--track-val", dest="track_val", action="store_true",
                   default=None, help="track validation MAPE per epoch")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset's test split")
    p.add_argument("--data")
    p.add_argument("--checkpoint")

    p = add("benchmark", cmd_benchmark, "run the model-family benchmark matrix")
    p.add_argument("--scenarios")
    p.add_argument("--indices")
    p.add_argument("--seeds")
    p.add_argument("--segments", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--no-baseline-aux", dest="baseline_aux",
                   action="store_false", default=None,
                   help="withhold road features from the baseline families")

    p = add("ablate", cmd_ablate, "run structural and feature ablations")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--indices")
    p.add_argument("--seeds")
    p.add_argument("--segments", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)

    p = add("predict", cmd_predict, "predict next-year values for new units")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--encoder")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
