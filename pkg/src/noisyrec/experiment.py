"""Experiment harness: preprocessing cache, repeated runs, staged grid search, plot data."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from noisyrec import baselines, corpus
from noisyrec.evaluation import evaluate, mf_scorer
from noisyrec.trainer import NOISE_AWARE, Optimizer, TrainConfig, train

BASELINE_METHODS = ("ITEMPOP", "ITEMKNN")
EVAL_KS = (2, 5, 10, 20)


@dataclass
class ExperimentSpec:
    output_dir: str
    dataset: str = "movielens"  # "movielens" | "amazon" | "split"
    raw_path: Optional[str] = None
    split_dir: Optional[str] = None  # pre-made canonical split (dataset="split")
    kcore: int = 1
    split_seed: int = 0
    method: str = "NBPO_SS"  # optimizer name or ITEMPOP / ITEMKNN
    config: TrainConfig = field(default_factory=TrainConfig)
    knn_neighbors: int = 50
    repeat_count: int = 10
    exclude_train: bool = True
    cache_dir: Optional[str] = None

    def validate(self):
        if self.repeat_count < 1:
            raise ValueError("repeat_count must be >= 1")
        if self.method not in BASELINE_METHODS:
            Optimizer(self.method)  # raises on unknown optimizer
        if self.dataset == "split":
            if not self.split_dir:
                raise ValueError("dataset='split' requires split_dir")
        elif self.dataset in ("movielens", "amazon"):
            if not self.raw_path:
                raise ValueError(f"dataset='{self.dataset}' requires raw_path")
        else:
            raise ValueError(f"unknown dataset {self.dataset!r}")


def _content_hash(spec: ExperimentSpec) -> str:
    h = hashlib.sha256()
    with open(spec.raw_path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    h.update(f"|{spec.dataset}|{spec.kcore}|{spec.split_seed}".encode())
    return h.hexdigest()[:16]


def prepare(spec: ExperimentSpec) -> corpus.SplitDataset:
    """Load, binarize, k-core filter and split; cached by content hash."""
    spec.validate()
    if spec.dataset == "split":
        return corpus.load_split(spec.split_dir)
    cache_dir = spec.cache_dir or os.path.join(spec.output_dir, "cache")
    key = _content_hash(spec)
    cached = os.path.join(cache_dir, key)
    if os.path.isdir(cached):
        return corpus.load_split(cached)
    loader = corpus.load_movielens if spec.dataset == "movielens" else corpus.load_amazon_reviews
    raw = loader(spec.raw_path)
    _, table = corpus.binarize_and_index(raw)
    if spec.kcore > 1:
        table = corpus.kcore_filter(table, spec.kcore)
    dataset = corpus.split(table, seed=spec.split_seed)
    corpus.save_split(dataset, cached)
    return dataset


def _report_dict(report) -> dict:
    return {
        "f1": {str(k): report.f1[k] for k in EVAL_KS},
        "ndcg": {str(k): report.ndcg[k] for k in EVAL_KS},
        "n_users": report.n_users_evaluated,
    }


def _run_baseline(spec: ExperimentSpec, dataset: corpus.SplitDataset) -> dict:
    if spec.method == "ITEMPOP":
        scorer = baselines.itempop_scorer(baselines.fit_itempop(dataset.train))
    else:
        model = baselines.fit_itemknn(dataset.train, spec.knn_neighbors)
        scorer = baselines.itemknn_scorer(model, dataset.train)
    val = evaluate(scorer, dataset.validation, dataset.train, EVAL_KS, spec.exclude_train)
    test = evaluate(scorer, dataset.test, dataset.train, EVAL_KS, spec.exclude_train)
    return {"validation": _report_dict(val), "test": _report_dict(test)}


def run(spec: ExperimentSpec, dataset: Optional[corpus.SplitDataset] = None) -> dict:
    """Execute one experiment: repeat_count seeded runs, per-epoch CSVs, summary JSON."""
    spec.validate()
    if dataset is None:
        dataset = prepare(spec)
    os.makedirs(spec.output_dir, exist_ok=True)

    summary = {
        "method": spec.method,
        "dataset": spec.dataset,
        "kcore": spec.kcore,
        "split_seed": spec.split_seed,
        "repeat_count": spec.repeat_count,
        "schema_version": 1,
    }
    if spec.method in BASELINE_METHODS:
        summary["repeats"] = [_run_baseline(spec, dataset)]
    else:
        summary["config"] = config_to_dict(spec.config)
        repeats = []
        for rep in range(spec.repeat_count):
            cfg = replace(spec.config, optimizer=Optimizer(spec.method), seed=spec.config.seed + rep)
            history = train(dataset, cfg, exclude_train=spec.exclude_train)
            csv_path = os.path.join(spec.output_dir, f"epochs_seed{cfg.seed}.csv")
            with open(csv_path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(history.to_csv_lines(EVAL_KS)) + "\n")
            test = evaluate(
                mf_scorer(history.best_theta), dataset.test, dataset.train,
                EVAL_KS, spec.exclude_train,
            )
            best = history.epochs[history.best_epoch].report
            repeats.append({
                "seed": cfg.seed,
                "best_epoch": history.best_epoch,
                "validation": _report_dict(best),
                "test": _report_dict(test),
            })
        summary["repeats"] = repeats

    for split_name in ("validation", "test"):
        for metric in ("f1", "ndcg"):
            for k in EVAL_KS:
                vals = [r[split_name][metric][str(k)] for r in summary["repeats"]]
                summary.setdefault(f"mean_{split_name}", {}).setdefault(metric, {})[str(k)] = float(np.mean(vals))
                summary.setdefault(f"std_{split_name}", {}).setdefault(metric, {})[str(k)] = float(np.std(vals))

    with open(os.path.join(spec.output_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def config_to_dict(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    d["optimizer"] = config.optimizer.value
    return d


# ---------------------------------------------------------------------------
# grid search


@dataclass
class GridSpec:
    coarse_eta: Sequence[float] = (0.001, 0.01, 0.1)
    coarse_lambda: Sequence[float] = (0.01, 0.1, 1.0)
    rho_range: Sequence[int] = (1, 2, 3, 4, 5, 6, 7)
    batch_range: Sequence[int] = (1000, 2000, 3000, 4000, 5000)
    K_range: Sequence[int] = (10, 20, 50, 100, 200)
    L_range: Sequence[int] = (0, 1, 2, 5, 10, 20, 50, 100, 200, 500)

    def __post_init__(self):
        for name in ("coarse_eta", "coarse_lambda", "rho_range", "batch_range", "K_range", "L_range"):
            if not len(getattr(self, name)):
                raise ValueError(f"{name} must be nonempty")


ALL_STAGES = ("coarse", "fine", "lambda_split", "rho", "batch", "K", "L")


def fine_values(v: float) -> List[float]:
    """Fine sweep around a coarse winner: {v/5, v/2, v, 2v, 5v}."""
    return sorted({v / 5, v / 2, v, 2 * v, 5 * v})


def _eval_cell(args) -> float:
    dataset, config, exclude_train = args
    history = train(dataset, config, exclude_train=exclude_train)
    return history.best_f1_at_2()


def _run_cells(dataset, configs, exclude_train) -> List[float]:
    workers = int(os.environ.get("NOISYREC_WORKERS", "1"))
    args = [(dataset, cfg, exclude_train) for cfg in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_eval_cell, args))
    return [_eval_cell(a) for a in args]


def grid_search(
    spec: ExperimentSpec,
    grid: GridSpec,
    stages: Optional[Sequence[str]] = None,
    dataset: Optional[corpus.SplitDataset] = None,
) -> Tuple[TrainConfig, List[dict]]:
    """Staged grid search selecting by validation F1@2.

    Stages run in order: coarse and fine eta x lambda sweeps with the two
    regularizers tied, then an independent lambda_theta x lambda_phi sweep
    (noise-aware variants only), then rho, batch size, K, and L. Ties go to
    the earlier cell in enumeration order.
    """
    spec.validate()
    if spec.method in BASELINE_METHODS:
        raise ValueError("grid search applies to trained optimizers only")
    if dataset is None:
        dataset = prepare(spec)
    stages = list(stages) if stages is not None else list(ALL_STAGES)
    optimizer = Optimizer(spec.method)
    noise_aware = optimizer in NOISE_AWARE
    best = replace(spec.config, optimizer=optimizer)
    table: List[dict] = []
    cell_index = 0

    def sweep(stage: str, cells: List[dict]):
        nonlocal best, cell_index
        configs = []
        for cell in cells:
            cfg = replace(best, **cell, seed=spec.config.seed + cell_index)
            configs.append(cfg)
            cell_index += 1
        scores = _run_cells(dataset, configs, spec.exclude_train)
        best_score = -1.0
        winner = None
        for cell, cfg, score in zip(cells, configs, scores):
            table.append({"stage": stage, **cell, "val_f1@2": score})
            if score > best_score:
                best_score = score
                winner = cfg
        best = replace(winner, seed=spec.config.seed)

    if "coarse" in stages:
        sweep("coarse", [
            {"eta": e, "lambda_theta": lam, "lambda_phi": lam if noise_aware else 0.0}
            for e in grid.coarse_eta for lam in grid.coarse_lambda
        ])
    if "fine" in stages:
        sweep("fine", [
            {"eta": e, "lambda_theta": lam, "lambda_phi": lam if noise_aware else 0.0}
            for e in fine_values(best.eta) for lam in fine_values(best.lambda_theta)
        ])
    if "lambda_split" in stages and noise_aware:
        sweep("lambda_split", [
            {"lambda_theta": lt, "lambda_phi": lp}
            for lt in fine_values(best.lambda_theta) for lp in fine_values(best.lambda_phi)
        ])
    if "rho" in stages:
        sweep("rho", [{"rho": r} for r in grid.rho_range])
    if "batch" in stages:
        sweep("batch", [{"batch_size": b} for b in grid.batch_range])
    if "K" in stages:
        sweep("K", [{"K": k} for k in grid.K_range])
    if "L" in stages and noise_aware:
        sweep("L", [{"L": ell} for ell in grid.L_range])

    os.makedirs(spec.output_dir, exist_ok=True)
    _write_results_table(table, os.path.join(spec.output_dir, "grid_results.csv"))
    with open(os.path.join(spec.output_dir, "grid_best.json"), "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(best), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return best, table


def _write_results_table(table: List[dict], path: str):
    cols: List[str] = []
    for row in table:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")


# ---------------------------------------------------------------------------
# plot-data emission


STAGE_FILES = {
    "coarse": "eta_lambda_coarse.csv",
    "fine": "eta_lambda_fine.csv",
    "lambda_split": "lambda_grid.csv",
    "rho": "rho_sweep.csv",
    "batch": "batch_sweep.csv",
    "K": "k_sweep.csv",
    "L": "l_sweep.csv",
}


def emit_plots(table: List[dict], outdir: str, summaries: Optional[List[dict]] = None) -> List[str]:
    """Write one labeled CSV series per figure family.

    `table` is a grid-search results table; `summaries` are run() summaries
    whose mean test metrics become the metric-vs-k comparison series.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []
    for stage, fname in STAGE_FILES.items():
        rows = [r for r in table if r.get("stage") == stage]
        if not rows:
            continue
        path = os.path.join(outdir, fname)
        _write_results_table(rows, path)
        written.append(path)
    if summaries:
        path = os.path.join(outdir, "metric_vs_k.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,k,f1,ndcg\n")
            for s in summaries:
                for k in EVAL_KS:
                    f1 = s["mean_test"]["f1"][str(k)]
                    ndcg = s["mean_test"]["ndcg"][str(k)]
                    fh.write(f"{s['method']},{k},{f1:.10g},{ndcg:.10g}\n")
        written.append(path)
    return written


# Desk-scale preset: paper-tuned MovieLens values with K and epochs cut down
# so the full ordering experiment stays laptop-feasible.
def desk_preset() -> TrainConfig:
    return TrainConfig(
        optimizer=Optimizer.NBPO_SS,
        eta=0.005,
        lambda_theta=0.5,
        lambda_phi=0.5,
        rho=3,
        batch_size=2000,
        K=50,
        L=10,
        max_epochs=30,
        seed=0,
    )


DESK_REPEATS = 3
