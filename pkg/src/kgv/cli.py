"""Command-line entry point: ``kgv <subcommand> [--config FILE] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 validation error (bad config, missing input, bad KG),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path

import jsonschema

from . import harness as H
from .gradcheck import TOLERANCE, report, run_gradcheck
from .kg import KGError, hierarchy_closure, load_kg_files, validate_kg
from .model import KGVModel
from .synth import SynthError, build_dataset, load_dataset, load_spec

DEFAULT_COUNTS = {"A": {"train": 100, "test": 30}, "B": {"test": 100}}
DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_FRACTIONS = (0.1, 0.5, 1.0)
DEFAULT_SHOTS = 1
DEFAULT_FEWSHOT_EPOCHS = 100
TRAIN_FIELDS = {f.name for f in fields(H.TrainConfig)}


class ValidationError(Exception):
    """Bad user input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _schema(name: str) -> dict:
    return json.loads(resources.files("kgv").joinpath(f"data/{name}").read_text(encoding="utf-8"))


def load_config(path, schema_name: str, seed=None, out=None) -> dict:
    cfg = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file not found: {p}")
        try:
            cfg = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {p} is not valid JSON: {exc}") from None
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    try:
        jsonschema.validate(cfg, _schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ValidationError(f"schema error at {where}: {exc.message}") from None
    return cfg


def _require_files(cfg: dict, *keys):
    for k in keys:
        if k in cfg and not Path(cfg[k]).is_file():
            raise ValidationError(f"schema error: {k} path does not exist: {cfg[k]}")


def _train_config(cfg: dict) -> H.TrainConfig:
    return H.TrainConfig(**{k: v for k, v in cfg.items() if k in TRAIN_FIELDS})


def _seeds(cfg: dict, explicit_seed) -> tuple[int, ...]:
    if explicit_seed is not None:
        return (explicit_seed,)
    return tuple(cfg.get("seeds", DEFAULT_SEEDS))


def _inputs(cfg: dict):
    _require_files(cfg, "manifest", "kg_triples", "kg_registry", "checkpoint")
    data = load_dataset(Path(cfg["manifest"]).parent)
    kg = load_kg_files(cfg["kg_triples"], cfg["kg_registry"])
    return data, kg


def _out(cfg: dict) -> Path:
    return Path(cfg.get("out", "runs"))


def _echo(cfg: dict) -> dict:
    """Config as recorded in artifacts (output location excluded so reruns elsewhere match)."""
    return {k: v for k, v in sorted(cfg.items()) if k != "out"}


# -- subcommands ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, "gen_schema.json", args.seed, args.out)
    if "spec" in cfg and not Path(cfg["spec"]).is_file():
        raise ValidationError(f"spec file not found: {cfg['spec']}")
    bench = load_spec(cfg.get("spec"))
    out = Path(cfg.get("out", "data"))
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_dataset(bench, cfg.get("counts", DEFAULT_COUNTS), cfg.get("seed", 0), out,
                             cfg.get("per_element", 20))
    print(manifest)
    return 0


def cmd_kg(args) -> int:
    for p in (args.triples, args.registry):
        if not Path(p).is_file():
            raise ValidationError(f"file not found: {p}")
    kg = load_kg_files(args.triples, args.registry)
    if args.action == "validate":
        diag = validate_kg(kg)
        sys.stdout.write(diag.as_text())
        return 0 if diag.ok else 1
    closed = hierarchy_closure(kg)
    sys.stdout.write(closed.triples_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "triples.tsv").write_text(closed.triples_text(), encoding="utf-8")
        (out / "registry.tsv").write_text(closed.registry_text(), encoding="utf-8")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, "run_schema.json", args.seed, args.out)
    data, kg = _inputs(cfg)
    tc = _train_config(cfg)
    if cfg.get("baseline"):
        tc = tc.baseline()
    domain = cfg.get("source_domain", "A")
    model, history = H.train(tc, data, kg, domain)
    run = H.run_dir(_out(cfg), "train", _echo(cfg))
    model.save(run / "model.npz")
    test = data.select(domain=domain, split="test", provenance="real-analog")
    metrics = {"config": _echo(cfg), "train_config": tc.to_dict(), "history": history}
    if len(test):
        metrics["test"] = H.evaluate(model, test).to_dict()
    metrics["frozen_relation_zero"] = bool((model.tables.params["rel"][0] == 0).all())
    H.write_artifacts(run, metrics)
    print(run)
    return 0


def _load_model(cfg: dict) -> KGVModel:
    if "checkpoint" not in cfg:
        raise ValidationError("this subcommand needs a 'checkpoint' entry in the config")
    return KGVModel.load(cfg["checkpoint"])


def cmd_eval(args) -> int:
    cfg = load_config(args.config, "run_schema.json", args.seed, args.out)
    data, _ = _inputs(cfg)
    model = _load_model(cfg)
    split = data.select(domain=cfg.get("domain", cfg.get("source_domain", "A")), split=cfg.get("split", "test"),
                        provenance="real-analog")
    m = H.evaluate(model, split)
    run = H.run_dir(_out(cfg), "eval", _echo(cfg))
    H.write_artifacts(run, {"config": _echo(cfg), "metrics": m.to_dict()})
    print(f"accuracy {m.accuracy:.4f}")
    print(run)
    return 0


def cmd_shift_eval(args) -> int:
    cfg = load_config(args.config, "run_schema.json", args.seed, args.out)
    data, kg = _inputs(cfg)
    src, tgt = cfg.get("source_domain", "A"), cfg.get("target_domain", "B")
    run = H.run_dir(_out(cfg), "shift", _echo(cfg))
    if "checkpoint" in cfg:
        m = H.shift_eval(_load_model(cfg), data, tgt)
        H.write_artifacts(run, {"config": _echo(cfg), "target": m.to_dict()},
                          [{"model": "checkpoint", "target_acc": m.accuracy}])
        print(f"target accuracy {m.accuracy:.4f}")
        print(run)
        return 0
    rows, _ = H.shift_experiment(_train_config(cfg), data, kg, _seeds(cfg, args.seed), src, tgt)
    summary = H.summarize(rows)
    comparison = {"model": "kgv-baseline", "seed": "mean",
                  "source_acc": H.summarize(rows, value="source_acc")["kgv"][0]
                  - H.summarize(rows, value="source_acc")["baseline"][0],
                  "target_acc": summary["kgv"][0] - summary["baseline"][0], "final_loss": ""}
    H.write_artifacts(run, {"config": _echo(cfg), "runs": rows, "summary": summary}, rows + [comparison])
    print(H.rows_to_csv(rows + [comparison]), end="")
    print(run)
    return 0


def cmd_fewshot(args) -> int:
    cfg = load_config(args.config, "run_schema.json", args.seed, args.out)
    data, kg = _inputs(cfg)
    src, tgt = cfg.get("source_domain", "A"), cfg.get("target_domain", "B")
    shots = cfg.get("shots", DEFAULT_SHOTS)
    epochs = cfg.get("fewshot_epochs", DEFAULT_FEWSHOT_EPOCHS)
    freeze = cfg.get("freeze_encoder", False)
    tc = _train_config(cfg)
    shot_lr = cfg.get("fewshot_lr", tc.lr)
    rows = []
    if "checkpoint" in cfg:
        m, info = H.fewshot(_load_model(cfg), replace(tc, lr=shot_lr), data, kg, shots, tgt, epochs, freeze)
        rows.append({"model": "checkpoint", "seed": tc.seed, "shots": shots, "target_acc": m.accuracy,
                     **info})
    else:
        for seed in _seeds(cfg, args.seed):
            for name, c in (("kgv", replace(tc, seed=seed)), ("baseline", replace(tc, seed=seed).baseline())):
                model, _ = H.train(c, data, kg, src)
                m, info = H.fewshot(model, replace(c, lr=shot_lr), data, kg, shots, tgt, epochs, freeze)
                rows.append({"model": name, "seed": seed, "shots": shots, "target_acc": m.accuracy, **info})
    run = H.run_dir(_out(cfg), "fewshot", _echo(cfg))
    H.write_artifacts(run, {"config": _echo(cfg), "runs": rows, "summary": H.summarize(rows)}, rows)
    print(H.rows_to_csv(rows), end="")
    print(run)
    return 0


def cmd_lowdata(args) -> int:
    cfg = load_config(args.config, "run_schema.json", args.seed, args.out)
    data, kg = _inputs(cfg)
    rows = H.lowdata_sweep(cfg.get("fractions", DEFAULT_FRACTIONS), _train_config(cfg), data, kg,
                           _seeds(cfg, args.seed), cfg.get("source_domain", "A"), cfg.get("target_domain", "B"),
                           cfg.get("scale_epochs", False))
    run = H.run_dir(_out(cfg), "lowdata", _echo(cfg))
    H.write_artifacts(run, {"config": _echo(cfg), "runs": rows}, rows)
    print(H.rows_to_csv(rows), end="")
    print(run)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, "run_schema.json", args.seed, args.out)
    data, kg = _inputs(cfg)
    rows, summary = H.ablate(_train_config(cfg), data, kg, _seeds(cfg, args.seed),
                             tuple(cfg.get("variants", H.VARIANTS)),
                             tuple(cfg.get("exclusions", ("legends", "colors", "shapes"))),
                             cfg.get("source_domain", "A"), cfg.get("target_domain", "B"))
    run = H.run_dir(_out(cfg), "ablate", _echo(cfg))
    H.write_artifacts(run, {"config": _echo(cfg), "runs": rows, "summary": summary}, rows)
    print(H.rows_to_csv(rows), end="")
    if summary.get("flag"):
        print(f"FLAG: {summary['flag']}")
    print(run)
    return 0


def cmd_gradcheck(args) -> int:
    text, ok = report(run_gradcheck(seed=args.seed or 0), TOLERANCE)
    sys.stdout.write(text)
    print("gradcheck " + ("passed" if ok else "FAILED") + f" (tolerance {TOLERANCE:g})")
    return 0 if ok else 1


# -- parser ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file (schema-validated)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed; overrides the config seed and restricts sweeps to this one seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (all artifacts go below it)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log per-epoch losses")

    parser = _Parser(prog="kgv", parents=[common],
                     description="Knowledge-guided visual representation learning on synthetic road-sign analogs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    add("gen-data", cmd_gen_data, "render the benchmark: PNGs, manifest.jsonl, dataset.json, KG files")
    p = add("kg", cmd_kg, "validate a KG, or print its hierarchy closure")
    p.add_argument("action", choices=("validate", "close"))
    p.add_argument("triples", help="tab-separated head/relation/tail file")
    p.add_argument("registry", help="entity/relation registry file")
    add("train", cmd_train, "train one model on the source domain and write a checkpoint")
    add("eval", cmd_eval, "evaluate a checkpoint on one domain/split")
    add("shift-eval", cmd_shift_eval, "target-domain accuracy of a checkpoint, or the KGV vs baseline comparison")
    add("fewshot", cmd_fewshot, "K-shot transfer to the target domain with a fresh decoder")
    add("lowdata", cmd_lowdata, "train-fraction sweep for KGV and the baseline")
    add("ablate", cmd_ablate, "score-variant x seed grid plus knowledge-exclusion runs")
    add("gradcheck", cmd_gradcheck, "finite-difference check of every parameter group")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    for name in ("config", "seed", "out", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, KGError, SynthError, H.HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
