"""Command-line entry point.

One executable with subcommands covering the whole workflow: simulate a
corpus, train a run, evaluate or predict from its checkpoint, aggregate
annotations into a consensus trace, compare two traces, and run the paired
baseline-vs-consensus experiment.  Configuration is a single JSON document;
any leaf can be overridden on the command line with its dotted path
(``--train.alpha 0.7``), and flags win over the file with a warning.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .annotations import (
    AnnotationMatrix,
    AnnotationTrack,
    GoldStandardTrack,
    load_annotation_csv,
    load_dataset,
    load_features_csv,
    load_gold_csv,
    write_dataset,
    write_gold_csv,
)
from .ccc import ccc_loss
from .consensus import AGGREGATORS, aggregate, compute_reliability_weights, forward_consensus
from .errors import ConfigError, ContractError, EmoconsError
from .evalharness import (
    FOLD_SCHEMES,
    ab_compare,
    evaluate,
    format_comparison_table,
    make_fixed_split,
    make_loso_plan,
)
from .predictor import forward_predictor, output_index
from .synth import AnnotatorProfile, SynthConfig, default_synth_config, generate_corpus
from .trainer import (
    TrainConfig,
    load_run_model,
    prepare_data,
    run_training,
    save_run,
    train_config_from_dict,
    train_config_to_dict,
)

CLI_SCHEMA_VERSION = 1

AGGREGATE_METHODS = AGGREGATORS + ("acn",)


# ---------------------------------------------------------------------------
# Config schema


@dataclass(frozen=True)
class EvalConfig:
    """Fold-plan selection for evaluate/ab: which scheme, splits, and seeds."""

    scheme: str = "leave_one_source_out"
    train_sources: tuple[str, ...] = ()
    test_sources: tuple[str, ...] = ()
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)

    def __post_init__(self):
        if self.scheme not in FOLD_SCHEMES:
            raise ConfigError(
                f"unknown eval scheme {self.scheme!r}, expected one of {FOLD_SCHEMES}"
            )
        object.__setattr__(self, "train_sources", tuple(str(s) for s in self.train_sources))
        object.__setattr__(self, "test_sources", tuple(str(s) for s in self.test_sources))
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("eval.seeds must not be empty")
        object.__setattr__(self, "seeds", seeds)


@dataclass(frozen=True)
class CliConfig:
    version: int = CLI_SCHEMA_VERSION
    dataset_dir: str = ""
    run_dir: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=lambda: default_synth_config(0))
    eval: EvalConfig = field(default_factory=EvalConfig)


def synth_config_to_dict(cfg: SynthConfig) -> dict:
    return {
        "sources": cfg.sources,
        "frames_per_source": cfg.frames_per_source,
        "feature_dim": cfg.feature_dim,
        "annotators": cfg.annotators,
        "profiles": {
            dim: [dataclasses.asdict(p) for p in profs]
            for dim, profs in sorted(cfg.profiles.items())
        },
        "feature_snr": {k: float(v) for k, v in sorted(cfg.feature_snr.items())},
        "seed": cfg.seed,
        "rate_hz": cfg.rate_hz,
    }


def synth_config_from_dict(d: Mapping) -> SynthConfig:
    if not isinstance(d, Mapping):
        raise ConfigError(f"synth section must be a mapping, got {type(d).__name__}")
    known = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown synth config keys: {unknown}")
    kwargs = dict(d)
    profiles = kwargs.pop("profiles", None)
    if profiles is not None:
        try:
            kwargs["profiles"] = {
                dim: tuple(AnnotatorProfile(**p) for p in plist)
                for dim, plist in profiles.items()
            }
        except TypeError as exc:
            raise ConfigError(f"bad annotator profile: {exc}") from exc
    seed = kwargs.pop("seed", 0)
    return default_synth_config(seed, **kwargs)


def eval_config_from_dict(d: Mapping) -> EvalConfig:
    if not isinstance(d, Mapping):
        raise ConfigError(f"eval section must be a mapping, got {type(d).__name__}")
    known = {f.name for f in dataclasses.fields(EvalConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown eval config keys: {unknown}")
    return EvalConfig(**d)


_CLI_KEYS = ("version", "dataset_dir", "run_dir", "train", "synth", "eval")


def cli_config_to_dict(cfg: CliConfig) -> dict:
    return {
        "version": cfg.version,
        "dataset_dir": cfg.dataset_dir,
        "run_dir": cfg.run_dir,
        "train": train_config_to_dict(cfg.train),
        "synth": synth_config_to_dict(cfg.synth),
        "eval": dataclasses.asdict(cfg.eval),
    }


def cli_config_from_dict(d: Mapping) -> CliConfig:
    if not isinstance(d, Mapping):
        raise ConfigError(f"cli config must be a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(_CLI_KEYS))
    if unknown:
        raise ConfigError(f"unknown cli config keys: {unknown}")
    if "version" not in d:
        raise ConfigError("cli config requires a schema version field")
    if d["version"] != CLI_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported cli config version {d['version']!r}, expected {CLI_SCHEMA_VERSION}"
        )
    return CliConfig(
        version=CLI_SCHEMA_VERSION,
        dataset_dir=str(d.get("dataset_dir", "")),
        run_dir=str(d.get("run_dir", "")),
        train=train_config_from_dict(d.get("train", {})),
        synth=synth_config_from_dict(d.get("synth", {})),
        eval=eval_config_from_dict(d.get("eval", {})),
    )


# ---------------------------------------------------------------------------
# Flag registry: every overridable config leaf, with its parse kind


@dataclass(frozen=True)
class Flag:
    name: str  # dotted config path
    kind: str
    help: str


FLAG_REGISTRY: tuple[Flag, ...] = (
    Flag("dataset_dir", "str", "dataset directory"),
    Flag("run_dir", "str", "run output directory"),
    Flag("train.mode", "str", "training mode: baseline or acn"),
    Flag("train.dimensions", "str", "dimensions to train: arousal, valence, or both"),
    Flag("train.alpha", "float", "weight of the gold-vs-consensus loss term"),
    Flag("train.beta", "float", "weight of the consensus-vs-prediction loss term"),
    Flag("train.epochs", "int", "training epochs"),
    Flag("train.batch_size", "int", "windows per batch"),
    Flag("train.pooling", "str", "loss pooling: per_window_mean or pooled"),
    Flag("train.seed", "int", "root seed for init and shuffling"),
    Flag(
        "train.detach_consensus_in_second_term",
        "bool",
        "stop consensus gradients from the prediction term",
    ),
    Flag("train.window.window_s", "float", "window length in seconds"),
    Flag("train.window.shift_s", "float", "window shift in seconds"),
    Flag("train.optim.learning_rate", "float", "Adam learning rate"),
    Flag("train.optim.beta1", "float", "Adam first-moment decay"),
    Flag("train.optim.beta2", "float", "Adam second-moment decay"),
    Flag("train.optim.eps", "float", "Adam denominator epsilon"),
    Flag("train.optim.grad_clip_norm", "opt_float", "global-norm clip, or 'none'"),
    Flag("train.predictor.feature_dim", "int", "input feature width (0 = from data)"),
    Flag("train.predictor.frontend", "str", "identity or fixed_random_projection"),
    Flag("train.predictor.frontend_dim", "int", "frozen projection width"),
    Flag("train.predictor.encoder_dims", "int_tuple", "encoder widths, e.g. 64,64"),
    Flag("train.predictor.activation", "str", "encoder activation"),
    Flag("train.predictor.heads", "str", "single or dual output heads"),
    Flag("train.predictor.head_activation", "str", "output activation: tanh or linear"),
    Flag("train.predictor.context_frames", "int", "stacked context frames per side"),
    Flag("train.acn.annotators", "int", "annotator count (0 = from data)"),
    Flag("train.acn.hidden_dims", "int_tuple", "consensus net hidden widths"),
    Flag("train.acn.activation", "str", "consensus net hidden activation"),
    Flag("train.acn.output_activation", "str", "consensus net output activation"),
    Flag("synth.sources", "int", "number of simulated sources"),
    Flag("synth.frames_per_source", "int", "frames per source"),
    Flag("synth.feature_dim", "int", "feature columns"),
    Flag("synth.annotators", "int", "annotators per dimension"),
    Flag("synth.profiles", "json", "JSON annotator profiles per dimension"),
    Flag("synth.feature_snr.arousal", "float", "feature SNR for arousal"),
    Flag("synth.feature_snr.valence", "float", "feature SNR for valence"),
    Flag("synth.seed", "int", "corpus seed"),
    Flag("synth.rate_hz", "float", "frame rate"),
    Flag("eval.scheme", "str", "fold scheme: leave_one_source_out or fixed_split"),
    Flag("eval.seeds", "int_tuple", "seeds for the paired comparison, e.g. 1,2,3"),
    Flag("eval.train_sources", "str_tuple", "fixed-split training sources"),
    Flag("eval.test_sources", "str_tuple", "fixed-split test sources"),
)

_FLAG_BY_NAME = {f.name: f for f in FLAG_REGISTRY}

_BOOL_WORDS = {
    "true": True, "1": True, "yes": True, "on": True,
    "false": False, "0": False, "no": False, "off": False,
}


def _parse_value(flag: Flag, raw: str):
    text = raw.strip()
    try:
        if flag.kind == "int":
            return int(text)
        if flag.kind == "float":
            return float(text)
        if flag.kind == "str":
            return text
        if flag.kind == "bool":
            if text.lower() not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[text.lower()]
        if flag.kind == "opt_float":
            return None if text.lower() in ("none", "null", "") else float(text)
        if flag.kind == "int_tuple":
            return [int(t) for t in text.split(",")] if text else []
        if flag.kind == "str_tuple":
            return [t.strip() for t in text.split(",") if t.strip()]
        if flag.kind == "json":
            return json.loads(text)
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(
            f"invalid value for --{flag.name}: {raw!r} is not {flag.kind}"
        ) from None
    raise ConfigError(f"flag --{flag.name} has unknown kind {flag.kind!r}")


def resolve_config(
    config_path: str | None, overrides: Mapping[str, str]
) -> tuple[CliConfig, list[str]]:
    """Merge a config file (or defaults) with dotted-path flag overrides.

    Returns the resolved config plus one warning per override that changed
    a value the file set explicitly (the flag wins).
    """
    explicit: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            explicit = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(explicit, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        base = cli_config_from_dict(explicit)
    else:
        base = CliConfig()
    tree = cli_config_to_dict(base)
    # profiles not given explicitly stay derived, so overriding the seed or
    # annotator count re-samples them instead of clashing with stale panels
    explicit_synth = explicit.get("synth", {})
    if not (isinstance(explicit_synth, dict) and "profiles" in explicit_synth):
        del tree["synth"]["profiles"]

    warnings: list[str] = []
    for name, raw in overrides.items():
        flag = _FLAG_BY_NAME.get(name)
        if flag is None:
            raise ConfigError(f"unknown override flag --{name}")
        value = _parse_value(flag, raw)
        parts = name.split(".")
        node, seen = tree, explicit
        for p in parts[:-1]:
            node = node[p]
            seen = seen.get(p) if isinstance(seen, dict) else None
        leaf = parts[-1]
        if isinstance(seen, dict) and leaf in seen and seen[leaf] != value:
            warnings.append(
                f"--{name}={raw} overrides config value {seen[leaf]!r}"
            )
        node[leaf] = value
    return cli_config_from_dict(tree), warnings


# ---------------------------------------------------------------------------
# Parser


class _Parser(argparse.ArgumentParser):
    # usage problems should become exit code 1, not argparse's own exit(2)
    def error(self, message):
        raise ConfigError(message)


_ALIASES: dict[str, dict[str, str]] = {
    "simulate": {"seed": "synth.seed", "out": "dataset_dir"},
    "train": {
        "mode": "train.mode",
        "dimension": "train.dimensions",
        "dataset": "dataset_dir",
        "out": "run_dir",
    },
    "evaluate": {"dataset": "dataset_dir"},
    "ab": {"dataset": "dataset_dir", "out": "run_dir", "seeds": "eval.seeds"},
}


def _build_parser() -> _Parser:
    overrides = _Parser(add_help=False)
    group = overrides.add_argument_group("configuration")
    group.add_argument("--config", metavar="JSON", help="cli config file")
    for flag in FLAG_REGISTRY:
        group.add_argument(
            f"--{flag.name}",
            dest=flag.name,
            metavar=flag.kind.upper(),
            help=flag.help,
        )

    parser = _Parser(
        prog="emocons",
        description="Consensus-aware continuous emotion recognition toolkit.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser(
        "simulate", parents=[overrides],
        help="generate a synthetic multi-annotator dataset",
    )
    p.add_argument("--seed", metavar="INT", help="alias for --synth.seed")
    p.add_argument("--out", metavar="DIR", help="alias for --dataset_dir")

    p = sub.add_parser("train", parents=[overrides], help="train one run")
    p.add_argument("--mode", metavar="MODE", help="alias for --train.mode")
    p.add_argument("--dimension", metavar="DIM", help="alias for --train.dimensions")
    p.add_argument("--dataset", metavar="DIR", help="alias for --dataset_dir")
    p.add_argument("--out", metavar="DIR", help="alias for --run_dir")

    p = sub.add_parser(
        "evaluate", parents=[overrides],
        help="score a trained run against gold on a dataset",
    )
    p.add_argument("--run", metavar="DIR", help="run directory (default: run_dir)")
    p.add_argument("--dataset", metavar="DIR", help="alias for --dataset_dir")
    p.add_argument(
        "--pooling", choices=("pooled", "per_window_mean"), default="pooled",
        help="score whole traces or average window scores",
    )
    p.add_argument("--sources", metavar="IDS", help="comma-separated source filter")

    p = sub.add_parser(
        "aggregate", parents=[overrides],
        help="collapse an annotation matrix into one consensus trace",
    )
    p.add_argument("--in", dest="input", metavar="CSV", required=True,
                   help="wide annotation csv")
    p.add_argument("--out", dest="output", metavar="CSV", required=True,
                   help="consensus csv to write")
    p.add_argument("--method", choices=AGGREGATE_METHODS, default="mean")
    p.add_argument("--checkpoint", metavar="DIR",
                   help="trained run directory (required for --method acn)")
    p.add_argument("--dimension", default="arousal", metavar="DIM")

    p = sub.add_parser(
        "predict", parents=[overrides],
        help="run a trained predictor over a feature csv",
    )
    p.add_argument("--run", metavar="DIR", required=True, help="run directory")
    p.add_argument("--features", metavar="CSV", required=True)
    p.add_argument("--out", dest="output", metavar="CSV", required=True)
    p.add_argument("--dimension", metavar="DIM",
                   help="which trained dimension to emit (default: first)")

    p = sub.add_parser(
        "metrics", parents=[overrides],
        help="concordance between two traces",
    )
    p.add_argument("--x", metavar="CSV", required=True)
    p.add_argument("--y", metavar="CSV", required=True)
    p.add_argument("--dimension", default="arousal", metavar="DIM")

    p = sub.add_parser(
        "ab", parents=[overrides],
        help="paired baseline-vs-consensus cross-validation over seeds",
    )
    p.add_argument("--dataset", metavar="DIR", help="alias for --dataset_dir")
    p.add_argument("--out", metavar="DIR", help="alias for --run_dir")
    p.add_argument("--seeds", metavar="INTS", help="alias for --eval.seeds")

    return parser


# ---------------------------------------------------------------------------
# Subcommands


def _require(value: str, what: str, hint: str) -> str:
    if not value:
        raise ConfigError(f"{what} is required (set {hint})")
    return value


def _write_cli_config(dirpath: Path, cfg: CliConfig) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    with open(dirpath / "cli_config.json", "w") as fh:
        json.dump(cli_config_to_dict(cfg), fh, indent=2)
        fh.write("\n")


def _write_trace_csv(path, rate_hz: float, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "value"])
        for k, v in enumerate(values):
            w.writerow([f"{k / rate_hz:.6f}", f"{float(v):.6f}"])


def _as_annotation_matrix(ann) -> AnnotationMatrix:
    if isinstance(ann, AnnotationTrack):
        return AnnotationMatrix(
            data=ann.values[:, None],
            annotator_ids=(ann.annotator_id,),
            dimension=ann.dimension,
            rate_hz=ann.rate_hz,
        )
    return ann


def _cmd_simulate(cfg: CliConfig, ns) -> int:
    out = _require(cfg.dataset_dir, "dataset_dir", "--out or --dataset_dir")
    corpus = generate_corpus(cfg.synth)
    write_dataset(out, corpus)
    _write_cli_config(Path(out), cfg)
    print(f"wrote {len(corpus.sources)} sources to {out}")
    return 0


def _cmd_train(cfg: CliConfig, ns) -> int:
    dataset_dir = _require(cfg.dataset_dir, "dataset_dir", "--dataset or --dataset_dir")
    run_dir = _require(cfg.run_dir, "run_dir", "--out or --run_dir")
    ds = load_dataset(dataset_dir)
    # the train subcommand fits on the full dataset; its validation curve is
    # computed on the same sources (held-out scoring is evaluate/ab's job)
    data = prepare_data(ds.sources, ds.sources, cfg.train)
    run = run_training(data, cfg.train)
    save_run(run_dir, run, cfg.train)
    _write_cli_config(Path(run_dir), cfg)
    last = run.epochs[-1]
    vals = " ".join(
        f"val_{dim}={v:.4f}"
        for dim, v in (
            ("arousal", last.val_ccc_arousal),
            ("valence", last.val_ccc_valence),
        )
        if v is not None
    )
    print(
        f"trained {run.mode} for {len(run.epochs)} epochs "
        f"(loss {last.total:.6f} {vals}) -> {run_dir}"
    )
    return 0


def _cmd_evaluate(cfg: CliConfig, ns) -> int:
    run_dir = ns.run or cfg.run_dir
    run_dir = _require(run_dir, "run directory", "--run or --run_dir")
    dataset_dir = _require(cfg.dataset_dir, "dataset_dir", "--dataset or --dataset_dir")
    model, meta = load_run_model(run_dir)
    ds = load_dataset(dataset_dir)
    sources = list(ds.sources)
    if ns.sources:
        wanted = [t.strip() for t in ns.sources.split(",") if t.strip()]
        by_id = {s.source_id: s for s in sources}
        missing = [sid for sid in wanted if sid not in by_id]
        if missing:
            raise ContractError(f"unknown sources: {missing}")
        sources = [by_id[sid] for sid in wanted]
    dims = tuple(meta.get("dimensions", ()))
    if not dims:
        raise ContractError(f"{run_dir}: checkpoint does not name its dimensions")
    window = None
    if ns.pooling == "per_window_mean":
        cfg_path = Path(run_dir) / "config.json"
        if cfg_path.exists():
            window = train_config_from_dict(json.loads(cfg_path.read_text())).window
        else:
            window = cfg.train.window
    scores = evaluate(model.predictor, sources, dims, pooling=ns.pooling, window=window)
    for dim in dims:
        print(f"{dim} ccc={round(scores[dim], 6)}")
    return 0


def _cmd_aggregate(cfg: CliConfig, ns) -> int:
    matrix = _as_annotation_matrix(load_annotation_csv(ns.input, ns.dimension))
    if ns.method == "acn":
        if not ns.checkpoint:
            raise ConfigError("--checkpoint is required for --method acn")
        model, _ = load_run_model(ns.checkpoint)
        acn = model.acns.get(ns.dimension)
        if acn is None:
            raise ContractError(
                f"{ns.checkpoint}: checkpoint has no consensus net for {ns.dimension!r}"
            )
        values = forward_consensus(acn, matrix.data)
    elif ns.method == "weighted":
        weights = compute_reliability_weights(
            matrix.data, aggregate(matrix.data, "mean")
        )
        values = aggregate(matrix.data, "weighted", weights)
    else:
        values = aggregate(matrix.data, ns.method)
    track = GoldStandardTrack(
        dimension=ns.dimension,
        rate_hz=matrix.rate_hz,
        values=values,
        provenance="aggregated",
    )
    write_gold_csv(ns.output, track)
    print(f"wrote {ns.method} consensus over {matrix.data.shape[1]} annotators to {ns.output}")
    return 0


def _cmd_predict(cfg: CliConfig, ns) -> int:
    feats = load_features_csv(ns.features)
    model, meta = load_run_model(ns.run)
    dims = tuple(meta.get("dimensions", ()))
    dim = ns.dimension or (dims[0] if dims else "arousal")
    out = forward_predictor(model.predictor, feats.data)
    col = output_index(model.predictor.config, dim)
    _write_trace_csv(ns.output, feats.rate_hz, out[:, col])
    print(f"wrote {out.shape[0]} frames of {dim} predictions to {ns.output}")
    return 0


def _cmd_metrics(cfg: CliConfig, ns) -> int:
    x = load_gold_csv(ns.x, ns.dimension).values
    y = load_gold_csv(ns.y, ns.dimension).values
    result = ccc_loss(x, y)
    print(f"ccc={round(result.ccc, 6)} loss={round(result.loss, 6)}")
    return 0


def _cmd_ab(cfg: CliConfig, ns) -> int:
    dataset_dir = _require(cfg.dataset_dir, "dataset_dir", "--dataset or --dataset_dir")
    ds = load_dataset(dataset_dir)
    if cfg.eval.scheme == "fixed_split":
        plan = make_fixed_split(cfg.eval.train_sources, cfg.eval.test_sources)
    else:
        plan = make_loso_plan([s.source_id for s in ds.sources])
    root = cfg.run_dir or None
    cmp = ab_compare(ds, cfg.train, cfg.eval.seeds, plan=plan, run_root=root)
    if root:
        _write_cli_config(Path(root), cfg)
    dims = sorted(cmp.median_delta)
    for row in cmp.per_seed:
        parts = " ".join(
            f"{d} {row.baseline[d]:+.4f} -> {row.acn[d]:+.4f} (delta {row.delta[d]:+.4f})"
            for d in dims
        )
        print(f"seed {row.seed}: {parts}")
    print(
        "median delta: "
        + " ".join(f"{d}={cmp.median_delta[d]:+.4f}" for d in dims)
    )
    print(format_comparison_table([cmp.report]))
    return 0


_HANDLERS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "aggregate": _cmd_aggregate,
    "predict": _cmd_predict,
    "metrics": _cmd_metrics,
    "ab": _cmd_ab,
}


# ---------------------------------------------------------------------------
# Entry point


def _install_logging():
    name = os.environ.get("CER_LOG", "warning").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logger = logging.getLogger("emocons")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    state = (logger, handler, logger.level, logger.propagate)
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return state


def _restore_logging(state) -> None:
    logger, handler, level, propagate = state
    logger.removeHandler(handler)
    logger.setLevel(level)
    logger.propagate = propagate


def _one_line(exc: BaseException) -> str:
    text = " ".join(str(exc).split())
    return text or type(exc).__name__


def parse_and_dispatch(argv: Sequence[str]) -> int:
    """Run one subcommand; returns the process exit status.

    0 on success, 1 on configuration or contract errors (single-line
    ``error:`` prefix on stderr), 2 on unexpected internal failures
    (``internal-error:`` prefix).
    """
    state = _install_logging()
    try:
        parser = _build_parser()
        try:
            ns = parser.parse_args(list(argv))
        except SystemExit as exc:  # --help prints and exits itself
            return int(exc.code or 0)
        if ns.command is None:
            raise ConfigError("a subcommand is required; see --help")
        overrides: dict[str, str] = {}
        for flag in FLAG_REGISTRY:
            raw = vars(ns).get(flag.name)
            if raw is not None:
                overrides[flag.name] = raw
        for alias, path in _ALIASES.get(ns.command, {}).items():
            raw = getattr(ns, alias, None)
            if raw is not None:
                overrides[path] = raw
        cfg, warnings = resolve_config(ns.config, overrides)
        for message in warnings:
            print(f"warning: {message}", file=sys.stderr)
        return _HANDLERS[ns.command](cfg, ns)
    except EmoconsError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"internal-error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 2
    finally:
        _restore_logging(state)


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
