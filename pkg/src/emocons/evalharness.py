"""Cross-validation and paired comparison of trained runs.

The pieces here stack: a FoldPlan says which sources to hold out, evaluate()
scores one model on held-out sources, run_cv() trains and scores every fold,
and ab_compare() runs the whole cross-validation once per seed for each of
two training modes and reports per-seed score deltas with their median.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .annotations import Dataset, SourceData, WindowSpec, load_dataset, window_count
from .ccc import ccc_from_stats, ccc_stats
from .errors import ContractError, StructuralError
from .predictor import Predictor, forward_predictor, output_index
from .trainer import (
    TrainConfig,
    config_hash,
    prepare_data,
    resolve_dimensions,
    run_training,
    save_run,
)

logger = logging.getLogger("emocons.evalharness")

FOLD_SCHEMES = ("leave_one_source_out", "fixed_split")
EVAL_POOLINGS = ("pooled", "per_window_mean")

REPORT_FORMAT = "emocons-report"
REPORT_VERSION = 1


# ---------------------------------------------------------------------------
# Fold plans


@dataclass(frozen=True)
class FoldPlan:
    """Held-out evaluation splits: one (train ids, test ids) pair per fold."""

    scheme: str
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]

    def __post_init__(self):
        if self.scheme not in FOLD_SCHEMES:
            raise ContractError(
                f"unknown fold scheme {self.scheme!r}, expected one of {FOLD_SCHEMES}"
            )
        if not self.folds:
            raise ContractError("fold plan has no folds")
        norm = []
        for train, test in self.folds:
            train, test = tuple(train), tuple(test)
            if not train or not test:
                raise ContractError("each fold needs sources on both sides")
            overlap = sorted(set(train) & set(test))
            if overlap:
                raise ContractError(f"sources in both train and test: {overlap}")
            norm.append((train, test))
        object.__setattr__(self, "folds", tuple(norm))
        if self.scheme == "leave_one_source_out":
            tested = [t for _, test in self.folds for t in test]
            universe = set(tested)
            for train, _ in self.folds:
                universe.update(train)
            if len(set(tested)) != len(tested) or set(tested) != universe:
                raise ContractError(
                    "leave-one-source-out must test every source exactly once"
                )


def make_loso_plan(source_ids: Sequence[str]) -> FoldPlan:
    """One fold per source, testing it against a model trained on the rest."""
    ids = tuple(source_ids)
    if len(ids) < 2:
        raise ContractError("leave-one-source-out needs at least two sources")
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate source ids in fold plan")
    folds = tuple(
        (tuple(s for s in ids if s != held), (held,)) for held in ids
    )
    return FoldPlan(scheme="leave_one_source_out", folds=folds)


def make_fixed_split(train_ids: Sequence[str], test_ids: Sequence[str]) -> FoldPlan:
    return FoldPlan(
        scheme="fixed_split", folds=((tuple(train_ids), tuple(test_ids)),)
    )


# ---------------------------------------------------------------------------
# Scoring


def evaluate(
    predictor: Predictor,
    sources: Sequence[SourceData],
    dimensions: Sequence[str],
    *,
    pooling: str = "pooled",
    window: WindowSpec | None = None,
) -> dict[str, float]:
    """Score a predictor against gold on held-out sources, per dimension.

    "pooled" scores each source's full trace and averages over sources;
    "per_window_mean" scores every window of every source and averages
    over windows (a window spec is required for that).
    """
    if pooling not in EVAL_POOLINGS:
        raise ContractError(f"unknown pooling {pooling!r}, expected one of {EVAL_POOLINGS}")
    if pooling == "per_window_mean" and window is None:
        raise ContractError("per_window_mean pooling needs a window spec")
    sources = list(sources)
    if not sources:
        raise ContractError("no sources to evaluate")
    dims = tuple(dimensions)
    if not dims:
        raise ContractError("no dimensions to evaluate")

    outputs = [forward_predictor(predictor, s.features.data) for s in sources]
    scores: dict[str, float] = {}
    for dim in dims:
        col = output_index(predictor.config, dim)
        vals = []
        for src, out in zip(sources, outputs):
            if dim not in src.gold:
                raise ContractError(
                    f"source {src.source_id!r} has no gold track for {dim!r}"
                )
            gold = src.gold[dim].values
            yhat = out[:, col]
            if pooling == "pooled":
                vals.append(ccc_from_stats(ccc_stats(gold, yhat)))
            else:
                w, s = window.frames(src.features.rate_hz)
                for k in range(window_count(gold.size, w, s)):
                    a, b = k * s, k * s + w
                    vals.append(ccc_from_stats(ccc_stats(gold[a:b], yhat[a:b])))
        scores[dim] = math.fsum(vals) / len(vals)
    return scores


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class FoldScore:
    """Held-out CCC of one trained run, per dimension."""

    mode: str
    seed: int
    fold: int
    test_sources: tuple[str, ...]
    ccc: Mapping[str, float]


def _aggregate(entries: Sequence[FoldScore]) -> dict[str, dict[str, float]]:
    by_mode: dict[str, dict[str, list[float]]] = {}
    for e in entries:
        dims = by_mode.setdefault(e.mode, {})
        for dim, v in e.ccc.items():
            dims.setdefault(dim, []).append(v)
    return {
        mode: {dim: math.fsum(vs) / len(vs) for dim, vs in dims.items()}
        for mode, dims in by_mode.items()
    }


@dataclass(frozen=True)
class Report:
    """Cross-validation outcome: per-fold scores plus their per-mode mean.

    The aggregate is redundant with the entries on purpose; construction
    re-derives it so a hand-edited or deserialized report cannot quietly
    disagree with its own folds.
    """

    scheme: str
    task: str
    seeds: tuple[int, ...]
    config_hashes: Mapping[str, str]
    entries: tuple[FoldScore, ...]
    aggregate: Mapping[str, Mapping[str, float]]

    def __post_init__(self):
        if self.scheme not in FOLD_SCHEMES:
            raise ContractError(f"unknown fold scheme {self.scheme!r}")
        if not self.entries:
            raise ContractError("report has no entries")
        want = _aggregate(self.entries)
        ok = set(want) == set(self.aggregate)
        if ok:
            for mode, dims in want.items():
                got = self.aggregate[mode]
                ok = ok and set(dims) == set(got)
                ok = ok and all(abs(got[d] - v) <= 1e-12 for d, v in dims.items())
        if not ok:
            raise ContractError("report aggregate does not match the mean of its folds")


def make_report(
    *,
    scheme: str,
    task: str,
    seeds: tuple[int, ...],
    config_hashes: Mapping[str, str],
    entries: tuple[FoldScore, ...],
) -> Report:
    return Report(
        scheme=scheme,
        task=task,
        seeds=tuple(seeds),
        config_hashes=dict(config_hashes),
        entries=tuple(entries),
        aggregate=_aggregate(entries),
    )


_REPORT_KEYS = {
    "format", "version", "scheme", "task", "seeds",
    "config_hashes", "entries", "aggregate",
}
_ENTRY_KEYS = {"mode", "seed", "fold", "test_sources", "ccc"}


def report_to_dict(report: Report) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "scheme": report.scheme,
        "task": report.task,
        "seeds": list(report.seeds),
        "config_hashes": dict(report.config_hashes),
        "entries": [
            {
                "mode": e.mode,
                "seed": e.seed,
                "fold": e.fold,
                "test_sources": list(e.test_sources),
                "ccc": dict(e.ccc),
            }
            for e in report.entries
        ],
        "aggregate": {m: dict(d) for m, d in report.aggregate.items()},
    }


def report_from_dict(payload: dict) -> Report:
    if not isinstance(payload, dict) or payload.get("format") != REPORT_FORMAT:
        raise StructuralError("not a report payload")
    if payload.get("version") != REPORT_VERSION:
        raise StructuralError(f"unsupported report version {payload.get('version')!r}")
    extra = sorted(set(payload) - _REPORT_KEYS)
    if extra:
        raise StructuralError(f"unexpected report keys: {extra}")
    missing = sorted(_REPORT_KEYS - set(payload))
    if missing:
        raise StructuralError(f"missing report keys: {missing}")
    entries = []
    for e in payload["entries"]:
        bad = sorted(set(e) ^ _ENTRY_KEYS)
        if bad:
            raise StructuralError(f"malformed report entry, offending keys: {bad}")
        entries.append(
            FoldScore(
                mode=str(e["mode"]),
                seed=int(e["seed"]),
                fold=int(e["fold"]),
                test_sources=tuple(e["test_sources"]),
                ccc={k: float(v) for k, v in e["ccc"].items()},
            )
        )
    return Report(
        scheme=payload["scheme"],
        task=payload["task"],
        seeds=tuple(int(s) for s in payload["seeds"]),
        config_hashes={str(k): str(v) for k, v in payload["config_hashes"].items()},
        entries=tuple(entries),
        aggregate={
            m: {k: float(v) for k, v in d.items()}
            for m, d in payload["aggregate"].items()
        },
    )


def save_report(path, report: Report) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_dict(report), indent=2) + "\n")


def load_report(path) -> Report:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise StructuralError(f"report is not valid JSON: {exc}") from exc
    return report_from_dict(payload)


_TASK_LABELS = {"valence": "Valence", "arousal": "Arousal", "both": "Valence & Arousal"}
_TASK_ORDER = ("valence", "arousal", "both")
_MODE_ORDER = {"baseline": 0, "acn": 1}


def _table_cell(task: str, agg: Mapping[str, float] | None) -> str:
    if agg is None:
        return "-"
    if task == "both":
        if "valence" not in agg or "arousal" not in agg:
            raise ContractError("joint-task report must score valence and arousal")
        return f"{agg['valence']:.3f}/{agg['arousal']:.3f}"
    return f"{agg[task]:.3f}"


def format_comparison_table(reports: Sequence[Report]) -> str:
    """Aligned per-task score table, one column per mode (joint cells are
    shown valence/arousal)."""
    by_task: dict[str, Report] = {}
    for r in reports:
        if r.task in by_task:
            raise ContractError(f"duplicate task {r.task!r} in table")
        by_task[r.task] = r
    if not by_task:
        raise ContractError("no reports to tabulate")
    tasks = [t for t in _TASK_ORDER if t in by_task]
    tasks += sorted(set(by_task) - set(_TASK_ORDER))
    modes: list[str] = []
    for r in by_task.values():
        for m in r.aggregate:
            if m not in modes:
                modes.append(m)
    modes.sort(key=lambda m: (_MODE_ORDER.get(m, len(_MODE_ORDER)), m))

    cells = {
        t: {m: _table_cell(t, by_task[t].aggregate.get(m)) for m in modes}
        for t in tasks
    }
    label_w = max(len(_TASK_LABELS.get(t, t)) for t in tasks)
    col_ws = [
        max(len(m), max(len(cells[t][m]) for t in tasks)) for m in modes
    ]
    lines = [
        " " * label_w + "".join(f"  {m.rjust(w)}" for m, w in zip(modes, col_ws))
    ]
    for t in tasks:
        row = _TASK_LABELS.get(t, t).ljust(label_w)
        row += "".join(f"  {cells[t][m].rjust(w)}" for m, w in zip(modes, col_ws))
        lines.append(row)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Cross-validation


def _resolve_sources(data) -> list[SourceData]:
    if isinstance(data, Dataset):
        return list(data.sources)
    if isinstance(data, (str, Path)):
        return list(load_dataset(data).sources)
    return list(data)


def run_cv(
    data,
    cfg: TrainConfig,
    plan: FoldPlan | None = None,
    *,
    run_root=None,
) -> Report:
    """Train one run per fold and score it on the fold's held-out sources.

    `data` may be a Dataset, a dataset directory, or a source list.  With
    `run_root` set, every completed fold is persisted as it finishes (so a
    crash mid-way leaves the finished folds on disk) and the report is
    written there at the end.  A failing fold propagates its error.
    """
    sources = _resolve_sources(data)
    if len(sources) < 2:
        raise ContractError("cross-validation needs at least two sources")
    by_id = {s.source_id: s for s in sources}
    if len(by_id) != len(sources):
        raise ContractError("duplicate source ids in dataset")
    if plan is None:
        plan = make_loso_plan([s.source_id for s in sources])
    for train_ids, test_ids in plan.folds:
        for sid in (*train_ids, *test_ids):
            if sid not in by_id:
                raise ContractError(f"fold references unknown source {sid!r}")
    root = None if run_root is None else Path(run_root)
    dims = resolve_dimensions(cfg)

    entries = []
    for i, (train_ids, test_ids) in enumerate(plan.folds):
        train = [by_id[s] for s in train_ids]
        test = [by_id[s] for s in test_ids]
        run = run_training(prepare_data(train, test, cfg), cfg)
        if root is not None:
            save_run(root / f"fold_{i:02d}", run, cfg)
        scores = evaluate(run.model.predictor, test, dims)
        entries.append(
            FoldScore(
                mode=cfg.mode,
                seed=cfg.seed,
                fold=i,
                test_sources=tuple(test_ids),
                ccc=scores,
            )
        )
        logger.info(
            "fold %d/%d mode=%s seed=%d: %s",
            i + 1,
            len(plan.folds),
            cfg.mode,
            cfg.seed,
            " ".join(f"{d}={scores[d]:+.4f}" for d in dims),
        )
    report = make_report(
        scheme=plan.scheme,
        task=cfg.dimensions,
        seeds=(cfg.seed,),
        config_hashes={cfg.mode: config_hash(cfg)},
        entries=tuple(entries),
    )
    if root is not None:
        save_report(root / "report.json", report)
    return report


# ---------------------------------------------------------------------------
# Paired A/B comparison


@dataclass(frozen=True)
class SeedDelta:
    """Aggregate scores of the two compared runs for one seed.

    `baseline` and `acn` name the first and second compared mode; `delta`
    is second minus first, per dimension.
    """

    seed: int
    baseline: Mapping[str, float]
    acn: Mapping[str, float]
    delta: Mapping[str, float]


@dataclass(frozen=True)
class AbComparison:
    report: Report
    per_seed: tuple[SeedDelta, ...]
    median_delta: Mapping[str, float]


def ab_compare(
    data,
    base_cfg: TrainConfig,
    seeds: Sequence[int],
    *,
    modes: tuple[str, str] = ("baseline", "acn"),
    plan: FoldPlan | None = None,
    run_root=None,
) -> AbComparison:
    """Run the full cross-validation per seed for both modes and pair them.

    Seeded runs of the two modes share the fold plan and (because batch
    order and initialization derive from the seed alone) the exact same
    predictor start and shuffles, so per-seed deltas isolate the training
    mode.  At least three seeds are required for the median to mean much.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3:
        raise ContractError("paired comparison needs at least three seeds")
    if len(set(seeds)) != len(seeds):
        raise ContractError("duplicate seeds in paired comparison")
    if len(modes) != 2:
        raise ContractError("exactly two modes are compared")
    sources = _resolve_sources(data)
    if plan is None:
        plan = make_loso_plan([s.source_id for s in sources])
    root = None if run_root is None else Path(run_root)
    dims = resolve_dimensions(base_cfg)

    entries: list[FoldScore] = []
    hashes: dict[str, str] = {}
    rows: list[SeedDelta] = []
    for seed in seeds:
        aggs = []
        for slot, mode in enumerate(modes):
            cfg = dataclasses.replace(base_cfg, mode=mode, seed=seed)
            sub = None if root is None else root / f"seed_{seed:02d}" / f"{slot}_{mode}"
            rep = run_cv(sources, cfg, plan, run_root=sub)
            aggs.append(rep.aggregate[mode])
            hashes[f"{mode}@{seed}"] = rep.config_hashes[mode]
            entries.extend(rep.entries)
        first, second = aggs
        delta = {d: second[d] - first[d] for d in dims}
        rows.append(
            SeedDelta(seed=seed, baseline=dict(first), acn=dict(second), delta=delta)
        )
        logger.info(
            "seed %d: %s",
            seed,
            " ".join(f"d_{d}={delta[d]:+.4f}" for d in dims),
        )
    median = {
        d: float(statistics.median(r.delta[d] for r in rows)) for d in dims
    }
    report = make_report(
        scheme=plan.scheme,
        task=base_cfg.dimensions,
        seeds=tuple(seeds),
        config_hashes=hashes,
        entries=tuple(entries),
    )
    if root is not None:
        save_report(root / "report.json", report)
    return AbComparison(report=report, per_seed=tuple(rows), median_delta=median)
