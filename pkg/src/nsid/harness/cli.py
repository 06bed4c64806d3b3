"""``nsid`` command-line front end.

Exit codes: 0 success, 1 gradient audit above tolerance, 2 configuration
error, 3 every experiment cell failed, 4 unreadable data or protocol error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..groundtruth import (
    DatasetFormatError,
    IngestionError,
    PopulationSpec,
    build_teacher_cnn,
    build_two_type_population,
    homogeneous_population,
    load_dataset,
    make_dataset,
    save_dataset,
    write_container,
)
from ..metrics import evaluate_predictions
from ..models import ConfigurationError, model_to_sections
from ..training import TrainConfig
from .audit import gradient_audit
from .config import ConfigError, apply_overrides, output_root, read_config
from .experiments import (
    EXPERIMENTS,
    ROSTER,
    AllCellsFailed,
    UnsupportedModelError,
    fit_roster_model,
    run_experiment,
    spec_from_config,
)
from .real import RECIPES, ProtocolError, fit_real
from .report import CurveTable, emit_report

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_ALL_FAILED, EXIT_DATA = 0, 1, 2, 3, 4

log = logging.getLogger("nsid")


def _load_config(args) -> dict:
    return apply_overrides(read_config(args.config), args.set or [])


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# -- verbs ----------------------------------------------------------------
def cmd_simulate(args) -> int:
    cfg = _load_config(args).get("simulate", {})

    def get(key, default):
        # flags win over the config file, which wins over the default
        flag = getattr(args, key, None)
        return flag if flag is not None else cfg.get(key, default)

    population = get("population", "homogeneous")
    seed = int(get("seed", 0))
    if population == "homogeneous":
        pop = homogeneous_population(int(get("n_neurons", 100)), seed=seed)
        stimulus = "white"
    elif population == "two-types":
        pop = build_two_type_population(int(get("n_neurons", 1000)) // 2, seed=seed)
        stimulus = "white"
    elif population == "teacher":
        pop = build_teacher_cnn(int(get("n_types", 4)), int(get("units_per_type", 250)), seed=seed)
        stimulus = "pink"
    else:
        raise ConfigError(f"unknown population {population!r}")
    ds, pop = make_dataset(pop, int(get("n_samples", 1024)), int(get("n_test", 1024)), seed=seed,
                           stimulus=str(get("stimulus", stimulus)), n_repeats=int(get("repeats", 0)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {out} ({ds.n_neurons} neurons, {len(ds.stimuli)} stimuli)")
    return EXIT_OK


def _population_from_meta(ds) -> PopulationSpec:
    meta = ds.meta
    if ds.locations is None or "grid" not in meta or "kind" not in meta:
        raise ProtocolError("dataset carries no population metadata (kind, grid, locations)")
    return PopulationSpec(kind=meta["kind"], n_types=int(meta.get("n_types", 1)), locations=ds.locations,
                          type_ids=ds.type_ids if ds.type_ids is not None else np.zeros(ds.n_neurons, int),
                          grid=tuple(meta["grid"]), stimulus_shape=tuple(ds.stimuli.shape[-2:]))


def cmd_fit(args) -> int:
    config = _load_config(args)
    ds = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.recipe:
        train = dict(config.get("train", {}))
        train.setdefault("loss", "poisson")
        grid = {k: v if isinstance(v, tuple) else (v,) for k, v in config.get("grid.real", {}).items()} or None
        report, metrics, search = fit_real(ds, args.recipe, grid, TrainConfig(**train))
        write_container(out / "model.bin", model_to_sections(search.model))
        (out / "metrics.csv").write_text(metrics.to_csv())
        (out / "grid.csv").write_text(search.to_csv())
        _write_json(out / "report.json", report.summary())
        print(f"{args.recipe}: mean test correlation {report.metrics['corr_mean']:.3f}")
        return EXIT_OK
    pop = _population_from_meta(ds)
    name = "nonlinear-samples" if pop.kind == "teacher" else "linear-homog"
    spec = spec_from_config(name, config, output_dir=str(out), n_workers=1)
    if args.model == "oracle_mask":
        raise UnsupportedModelError("oracle_mask needs the ground-truth kernel; use the experiment verb")
    outcome = fit_roster_model(args.model, spec, ds, pop, int(args.seed))
    test = ds.split("test")
    metrics = evaluate_predictions(outcome.prediction, ds, test, outcome.masks, outcome.feature_weights)
    write_container(out / "model.bin", outcome.sections)
    (out / "metrics.csv").write_text(metrics.to_csv())
    if outcome.grid_csv:
        (out / "grid.csv").write_text(outcome.grid_csv)
    _write_json(out / "report.json", {"model": args.model, "fit": outcome.summary, **metrics.aggregates()})
    print(f"{args.model}: " + ", ".join(f"{k} {v:.3f}" for k, v in sorted(metrics.aggregates().items())
                                        if isinstance(v, float)))
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _load_config(args)
    if args.large:
        config.setdefault("experiment", {})["large"] = True
    root = output_root(args.output_root)
    spec = spec_from_config(args.name, config, output_dir=str(root), n_workers=args.workers)
    try:
        table = run_experiment(spec)
    except AllCellsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    emit_report(table, root / spec.name / "report")
    print(f"{len(table.rows)} rows written to {root / spec.name / 'curves.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    table = CurveTable()
    for path in args.tables:
        table = table.merge(CurveTable.from_csv(Path(path).read_text()))
    written = emit_report(table, args.out)
    print("\n".join(str(p) for p in written))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = gradient_audit(n_points=args.points, seed=args.seed)
    ok = True
    for family, err in errors.items():
        passed = err < args.tolerance
        ok &= passed
        print(f"{family:20s} max relative error {err:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_AUDIT


# -- parser ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsid", description="Neural system identification toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    def with_config(p):
        p.add_argument("--config", help="INI-style config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        return p

    p = with_config(sub.add_parser("simulate", help="simulate a dataset"))
    p.add_argument("--population", choices=("homogeneous", "two-types", "teacher"))
    p.add_argument("--n-neurons", dest="n_neurons", type=int)
    p.add_argument("--n-types", dest="n_types", type=int)
    p.add_argument("--units-per-type", dest="units_per_type", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--repeats", type=int, help="noisy repeats per test stimulus")
    p.add_argument("--stimulus", choices=("white", "pink"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_simulate)

    p = with_config(sub.add_parser("fit", help="fit one model to one dataset"))
    p.add_argument("dataset")
    p.add_argument("--model", choices=[m for m in ROSTER if m != "oracle_mask"], default="factorized")
    p.add_argument("--recipe", choices=RECIPES, help="fit with a recorded-data recipe instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = with_config(sub.add_parser("experiment", help="run a named study"))
    p.add_argument("name", choices=[e for e in EXPERIMENTS if e != "fit-real"])
    p.add_argument("--workers", type=int, help="parallel cells (default: available cores)")
    p.add_argument("--output-root", help="output directory (default: $NSID_OUTPUT_ROOT or ./outputs)")
    p.add_argument("--large", action="store_true", help="add the 128-type, 2^16-sample cell")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="merge curve tables and summarize")
    p.add_argument("tables", nargs="+", help="curves.csv files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every model family")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (DatasetFormatError, IngestionError, ProtocolError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ConfigurationError, UnsupportedModelError, ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


__all__ = ["build_parser", "main"]
