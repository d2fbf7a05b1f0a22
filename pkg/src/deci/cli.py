"""Command-line interface: ``deci generate | train | graph | ate | cate | eval``.

Exit codes: 0 success, 1 usage or data error, 2 finished with a warning
(training that ended with a cyclic posterior).
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import json
import sys
import typing
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .datagen import (
    CSUITE_NAMES,
    SyntheticSpec,
    apply_mcar_mask,
    generate_csuite,
    generate_synthetic,
    read_dataset_dir,
    write_dataset_dir,
)
from .graph import (
    edge_probabilities,
    posterior_mode,
    read_adjacency_csv,
    write_adjacency_csv,
    write_probabilities_csv,
)
from .inference import CausalQuery, PosteriorNotDag, draw_dags, estimate_ate, estimate_cate, read_query
from .metrics import ate_rmse, discovery_report, expected_discovery_metrics
from .numerics.rng import RngStream
from .training import TrainConfig, TrainingError, train

EXIT_OK, EXIT_ERROR, EXIT_WARNING = 0, 1, 2
CHECKPOINT_FILE = "model.ckpt"
DIAGNOSTICS_FILE = "diagnostics.jsonl"
SUMMARY_FILE = "train_summary.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(obj, out: str | None) -> None:
    text = _dump(obj)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


# -- config files --------------------------------------------------------------------

_TRAIN_TYPES = typing.get_type_hints(TrainConfig)


def _coerce(key: str, raw: str):
    kind = _TRAIN_TYPES[key]
    text = raw.strip()
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {key!r}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    optional = typing.get_origin(kind) is typing.Union or type(None) in typing.get_args(kind)
    if optional:
        if text.lower() in ("none", ""):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    try:
        return kind(text)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file; keys are TrainConfig fields plus ``data``/``out``."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[config]\n" + text)
    values = {}
    for key, raw in parser["config"].items():
        if key in ("data", "out"):
            values[key] = raw.strip()
        elif key in _TRAIN_TYPES:
            values[key] = _coerce(key, raw)
        else:
            raise UsageError(f"unknown config key {key!r}")
    return values


# -- commands -----------------------------------------------------------------------------


def cmd_generate(args) -> int:
    seed = _seed(args)
    if args.csuite:
        if args.csuite not in CSUITE_NAMES:
            raise UsageError(f"unknown CSuite dataset {args.csuite!r}; valid names: {', '.join(CSUITE_NAMES)}")
        ds, truth = generate_csuite(args.csuite, seed=seed, n=args.n or 2000, conditional=not args.no_conditional)
    else:
        family, (d, e) = ("ER", args.er) if args.er else ("SF", args.sf)
        try:
            spec = SyntheticSpec(family, d, e, args.noise, args.n or 5000, seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        ds, truth = generate_synthetic(spec)
    if args.missing:
        # training cannot impute discrete values, so only continuous columns are masked
        continuous = [j for j, s in enumerate(ds.specs) if not s.is_discrete]
        if len(continuous) < ds.d:
            print("warning: discrete columns left fully observed by --missing", file=sys.stderr)
        ds = apply_mcar_mask(ds, args.missing, RngStream(seed, (13,)), continuous if len(continuous) < ds.d else None)
    write_dataset_dir(args.out, ds, truth)
    return EXIT_OK


def _train_config(args) -> tuple[TrainConfig, str | None, str | None]:
    values = read_config(args.config) if args.config else {}
    data, out = values.pop("data", None), values.pop("out", None)
    flags = {
        "noise": args.noise,
        "hidden_dim": args.hidden_dim,
        "batch_size": args.batch_size,
        "inner_max_steps": args.inner_max_steps,
        "outer_max_steps": args.outer_max_steps,
        "lr": args.lr,
        "lambda_sparse": args.lambda_sparse,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.seed is not None:
        values["seed"] = args.seed
    if values.get("noise", "spline") not in ("gaussian", "spline"):
        raise UsageError("noise must be 'gaussian' or 'spline'")
    try:
        cfg = TrainConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg, args.data or data, args.out or out


def cmd_train(args) -> int:
    cfg, data_dir, out_dir = _train_config(args)
    if not data_dir or not out_dir:
        raise UsageError("train needs --data and --out (or 'data'/'out' in the config file)")
    stored = read_dataset_dir(data_dir)
    graph = None
    if args.true_graph:
        if stored.graph is None:
            raise UsageError(f"{data_dir} has no graph.csv to clamp to")
        graph = stored.graph
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, posterior, diag = train(stored.dataset, cfg, graph=graph)
    except TrainingError as exc:
        if exc.diagnostics is not None:
            exc.diagnostics.write_jsonl(out / DIAGNOSTICS_FILE)
        raise
    meta = {"train_config": cfg.to_json(), "summary": diag.summary()}
    save_checkpoint(out / CHECKPOINT_FILE, model, posterior, meta)
    diag.write_jsonl(out / DIAGNOSTICS_FILE)
    (out / SUMMARY_FILE).write_text(_dump(meta))
    for w in diag.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if diag.converged else EXIT_WARNING


def cmd_graph(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    q = ckpt.posterior
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_probabilities_csv(out / "edge_probabilities.csv", edge_probabilities(q))
    mode, mode_cyclic = posterior_mode(q)
    write_adjacency_csv(out / "mode.csv", mode)
    rng = RngStream(_seed(args), (17,))
    warnings = ["posterior mode is cyclic"] if mode_cyclic else []
    graphs, notes = draw_dags(q, args.n_samples, rng)
    warnings += notes
    samples = out / "samples"
    samples.mkdir(exist_ok=True)
    for k, g in enumerate(graphs):
        write_adjacency_csv(samples / f"dag_{k:04d}.csv", g)
    report = {"mode_is_dag": not mode_cyclic, "n_samples": len(graphs), "warnings": warnings}
    (out / "graph_report.json").write_text(_dump(report))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def _load_query(args, names):
    try:
        return read_query(args.query, names)
    except KeyError as exc:
        raise UsageError(f"query names a variable not in the model: {exc.args[0]}") from None


def cmd_ate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    query = _load_query(args, ckpt.model.names)
    if query.condition:
        raise UsageError("ate queries take no conditioning set; use the cate command")
    est = estimate_ate(ckpt.model, ckpt.posterior, query, RngStream(_seed(args), (19,)), args.n_graphs, args.n_per_graph)
    _emit(est.to_json(), args.out)
    return EXIT_OK


def cmd_cate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    query = _load_query(args, ckpt.model.names)
    est = estimate_cate(
        ckpt.model, ckpt.posterior, query, RngStream(_seed(args), (23,)),
        args.n_graphs, args.n_per_graph, args.n_features, args.lengthscale,
    )
    _emit(est.to_json(), args.out)
    return EXIT_OK


def _case_query(case: dict) -> dict:
    return {k: case[k] for k in ("treatment", "reference", "targets", "condition")}


def _score_effects(cases, estimator, warnings) -> dict:
    effects = {}
    for kind in ("ate", "cate"):
        chosen = [c for c in cases if c.get("kind", "ate") == kind]
        if not chosen:
            continue
        rows, est, truth = [], [], []
        for case in chosen:
            try:
                value, notes = estimator(case)
            except PosteriorNotDag as exc:
                warnings.append(f"{kind} case skipped: {exc}")
                continue
            rows.append({"query": _case_query(case), "estimate": value, "truth": case["effect"], "warnings": notes})
            est.append(value)
            truth.append(case["effect"])
        if rows:
            effects[kind] = {"rmse": ate_rmse(est, truth), "n_cases": len(rows), "cases": rows}
    return effects


def cmd_eval(args) -> int:
    stored = read_dataset_dir(args.data)
    warnings: list[str] = []
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    rng = RngStream(_seed(args), (29,))

    discovery = None
    if stored.graph is None:
        warnings.append("dataset has no graph.csv; discovery metrics skipped")
    elif ckpt is not None:
        discovery = expected_discovery_metrics(stored.graph, ckpt.posterior, rng.child("discovery"), args.n_samples).to_json()
    elif args.graph:
        discovery = discovery_report(stored.graph, read_adjacency_csv(args.graph)).to_json()

    effects = {}
    if stored.cases is None:
        warnings.append("dataset has no interventions.json; effect metrics skipped")
    elif args.estimates:
        supplied = json.loads(Path(args.estimates).read_text())["cases"]
        if len(supplied) != len(stored.cases):
            raise UsageError(f"{len(supplied)} supplied estimates for {len(stored.cases)} test cases")
        # pair by position in the file, not by the order cases are scored
        by_case = {id(c): s for c, s in zip(stored.cases, supplied)}
        effects = _score_effects(stored.cases, lambda case: (by_case[id(case)]["effect"], []), warnings)
    elif ckpt is not None:
        names = ckpt.model.names
        eff_rng = rng.child("effects")

        def estimator(case):
            q = CausalQuery.from_json(_case_query(case), names)
            if q.condition:
                e = estimate_cate(ckpt.model, ckpt.posterior, q, eff_rng, args.cate_graphs, args.cate_per_graph, args.n_features)
            else:
                e = estimate_ate(ckpt.model, ckpt.posterior, q, eff_rng, args.ate_graphs, args.ate_per_graph)
            return e.estimate, e.warnings

        effects = _score_effects(stored.cases, estimator, warnings)
    else:
        warnings.append("no checkpoint or estimates given; effect metrics skipped")

    report = {
        "dataset": str(stored.dataset.meta.get("csuite", Path(args.data).name)),
        "discovery": discovery,
        "effects": effects,
        "warnings": warnings,
    }
    _emit(report, args.out)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deci", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"deci {__version__}")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0; overrides the config file)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a benchmark dataset directory")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--csuite", metavar="NAME", help=f"CSuite dataset, one of: {', '.join(CSUITE_NAMES)}")
    src.add_argument("--er", nargs=2, type=int, metavar=("D", "E"), help="Erdos-Renyi graph with D nodes and E edges")
    src.add_argument("--sf", nargs=2, type=int, metavar=("D", "E"), help="scale-free graph with D nodes and E edges")
    g.add_argument("--noise", choices=("gaussian", "mlp"), default="gaussian", help="noise family for --er/--sf")
    g.add_argument("--n", type=int, default=None, help="training rows (default 2000 for CSuite, 5000 otherwise)")
    g.add_argument("--missing", type=float, default=0.0, help="fraction of cells hidden completely at random")
    g.add_argument("--no-conditional", action="store_true", help="skip the conditional (HMC) ground truth")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit the model and graph posterior")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="output directory for the checkpoint and diagnostics")
    t.add_argument("--config", help="flat key = value file of training options")
    t.add_argument("--noise", choices=("gaussian", "spline"), default=None, help="exogenous noise model")
    t.add_argument("--hidden-dim", type=int, default=None, help="hidden width of the SEM networks")
    t.add_argument("--batch-size", type=int, default=None, help="minibatch size")
    t.add_argument("--inner-max-steps", type=int, default=None, help="step cap for each inner optimisation")
    t.add_argument("--outer-max-steps", type=int, default=None, help="cap on penalty updates")
    t.add_argument("--lr", type=float, default=None, help="initial Adam step size")
    t.add_argument("--lambda-sparse", type=float, default=None, help="sparsity weight of the graph prior")
    t.add_argument("--true-graph", action="store_true", help="clamp the posterior to the dataset's graph.csv")
    t.set_defaults(func=cmd_train)

    gr = sub.add_parser("graph", help="export edge probabilities, the mode graph and sampled DAGs")
    gr.add_argument("--checkpoint", required=True)
    gr.add_argument("--out", required=True, help="output directory")
    gr.add_argument("--n-samples", type=int, default=100, help="number of DAGs to sample")
    gr.set_defaults(func=cmd_graph)

    for name, func, graphs, per in (("ate", cmd_ate, 1000, 2), ("cate", cmd_cate, 10, 10000)):
        q = sub.add_parser(name, help="estimate an average treatment effect" if name == "ate" else "estimate a conditional average treatment effect")
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--query", required=True, help="query JSON file")
        q.add_argument("--out", default=None, help="result JSON path (default stdout)")
        q.add_argument("--n-graphs", type=int, default=graphs, help="posterior graph draws")
        q.add_argument("--n-per-graph", type=int, default=per, help="simulated rows per graph and arm")
        if name == "cate":
            q.add_argument("--n-features", type=int, default=3000, help="random Fourier features")
            q.add_argument("--lengthscale", type=float, default=1.0, help="RBF lengthscale of the features")
        q.set_defaults(func=func)

    e = sub.add_parser("eval", help="score a model or graph against a dataset's ground truth")
    e.add_argument("--data", required=True, help="dataset directory")
    who = e.add_mutually_exclusive_group()
    who.add_argument("--checkpoint", help="trained checkpoint")
    who.add_argument("--graph", help="adjacency CSV to score instead of a posterior")
    e.add_argument("--estimates", help="JSON with a 'cases' list of precomputed effects to score")
    e.add_argument("--out", default=None, help="report JSON path (default stdout)")
    e.add_argument("--n-samples", type=int, default=100, help="posterior graphs for discovery metrics")
    e.add_argument("--ate-graphs", type=int, default=1000)
    e.add_argument("--ate-per-graph", type=int, default=2)
    e.add_argument("--cate-graphs", type=int, default=10)
    e.add_argument("--cate-per-graph", type=int, default=10000)
    e.add_argument("--n-features", type=int, default=3000)
    e.set_defaults(func=cmd_eval)
    return p


def _thread_limit(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (UsageError, ValueError, KeyError, IndexError, FileNotFoundError, CheckpointError, TrainingError, PosteriorNotDag) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"deci: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
