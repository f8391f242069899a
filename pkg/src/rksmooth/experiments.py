"""Experiment drivers behind the CLI: training runs, u-sweeps, strategy
comparisons and ensemble evaluation. Each returns plain rows so results can
be written as CSV and compared across runs."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .attack import AttackConfig, clean_accuracy, robust_accuracy
from .config import RunConfig
from .errors import CheckpointError, RKSmoothError
from .model import NeuralODEModel, SolverEnsemble, load_checkpoint, save_checkpoint
from .strategy import draws_to_csv, eval_solver, strategy_to_dict
from .tableau import ParamPoint, make_tableau
from .train import TrainResult, train

USWEEP_COLUMNS = ["u", "epsilon", "attack", "clean_acc", "robust_acc", "seed"]
USWEEP_SUMMARY_COLUMNS = [
    "u", "epsilon", "attack", "n_seeds", "clean_mean", "clean_stderr", "robust_mean", "robust_stderr",
]
COMPARE_COLUMNS = ["schedule", "seed", "clean_acc", "fgsm_acc", "pgd_acc", "error"]
COMPARE_SUMMARY_COLUMNS = [
    "schedule", "n_seeds", "clean_mean", "clean_stderr", "fgsm_mean", "fgsm_stderr", "pgd_mean", "pgd_stderr",
]
ENSEMBLE_COLUMNS = ["solver", "epsilon", "attack", "clean_acc", "robust_acc", "seed"]


def mean_stderr(values: Sequence[float]) -> tuple[float, float | None]:
    """Sample mean and standard error (sample std / sqrt(n)); None for n < 2."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, None
    if v.size < 2:
        return float(v[0]), None
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Map in a bounded process pool; results come back in input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- training ---------------------------------------------------------------


def build_model(cfg: RunConfig, data) -> NeuralODEModel:
    mcfg = cfg.model_config(data.dim, int(data.labels.max()) + 1)
    return NeuralODEModel(mcfg, seed=cfg["seed"])


def run_training(cfg: RunConfig, strategy=None, adversarial="config"):
    data = cfg.dataset()
    model = build_model(cfg, data)
    tcfg = cfg.train_config(strategy, adversarial)
    result = train(model, data, tcfg)
    return result, data, tcfg


def make_run_dir(out_root, cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(out_root) / f"run-{stamp}-{cfg.digest()}"
    suffix = 1
    while run_dir.exists():
        run_dir = Path(out_root) / f"run-{stamp}-{cfg.digest()}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    return run_dir


def write_training_artifacts(run_dir: Path, cfg: RunConfig, result: TrainResult, tcfg) -> None:
    (run_dir / "config.yaml").write_text(cfg.dump())
    (run_dir / "train_log.csv").write_text(result.log_csv())
    (run_dir / "draws.csv").write_text(draws_to_csv([e.draw for e in result.log]))
    save_checkpoint(run_dir / "checkpoint.json", result.model, strategy_to_dict(tcfg.strategy))


# --- u-sweep ----------------------------------------------------------------


def usweep_model(
    model: NeuralODEModel,
    x: np.ndarray,
    y: np.ndarray,
    family: str,
    u_grid: Sequence[float],
    epsilons: Sequence[float],
    attack: AttackConfig,
    seed: int,
) -> list[dict]:
    """Clean and robust accuracy of one model evaluated with each ``u``."""
    rows = []
    for iu, u in enumerate(u_grid):
        tab = make_tableau(ParamPoint(family, (float(u),)))
        clean = clean_accuracy(model, tab, x, y)
        for ie, eps in enumerate(epsilons):
            acfg = _attack_at(attack, eps)
            rng = np.random.default_rng([seed, iu, ie])
            robust = robust_accuracy(model, tab, x, y, acfg, rng)
            rows.append(
                {"u": float(u), "epsilon": float(eps), "attack": attack.kind,
                 "clean_acc": clean, "robust_acc": robust, "seed": seed}
            )
    return rows


def _attack_at(attack: AttackConfig, eps: float) -> AttackConfig:
    alpha = attack.alpha
    if attack.kind == "pgd" and alpha is not None:
        alpha = min(alpha, eps)
    return attack.replace(epsilon=float(eps), alpha=alpha)


def summarize_usweep(rows: Sequence[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["u"], r["epsilon"], r["attack"]), []).append(r)
    out = []
    for (u, eps, kind), grp in groups.items():
        cm, cs = mean_stderr([r["clean_acc"] for r in grp])
        rm, rs = mean_stderr([r["robust_acc"] for r in grp])
        out.append({
            "u": u, "epsilon": eps, "attack": kind, "n_seeds": len(grp),
            "clean_mean": cm, "clean_stderr": cs, "robust_mean": rm, "robust_stderr": rs,
        })
    return out


def _usweep_from_config(args) -> list[dict]:
    doc, seed = args
    cfg = RunConfig(doc).with_seed(seed)
    result, data, _ = run_training(cfg)
    x, y = data.xy("test")
    sw = cfg["sweep"]
    attack = cfg.attack(kind=sw["attack"])
    return usweep_model(result.model, x, y, sw["family"], sw["u_grid"], sw["epsilons"], attack, seed)


def usweep(
    cfg: RunConfig,
    checkpoint: str | Path | None = None,
    seeds: Sequence[int] | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Per-seed rows. From a config, one model is trained per seed; from a
    checkpoint, the seed only drives the attacks' random starts."""
    sw = cfg["sweep"]
    seeds = list(sw["seeds"] if seeds is None else seeds)
    if checkpoint is None:
        per_seed = parallel_map(_usweep_from_config, [(cfg.doc, s) for s in seeds], jobs)
        return [r for rows in per_seed for r in rows]
    model, _ = load_checkpoint(checkpoint)
    x, y = cfg.dataset().xy("test")
    attack = cfg.attack(kind=sw["attack"])
    rows = []
    for s in seeds:
        rows += usweep_model(model, x, y, sw["family"], sw["u_grid"], sw["epsilons"], attack, s)
    return rows


def usweep_caption(cfg: RunConfig, checkpoint, seeds) -> str:
    sw = cfg["sweep"]
    source = f"checkpoint {checkpoint}" if checkpoint else f"models trained from config {cfg.digest()}"
    return (
        f"Accuracy versus solver parameter u ({sw['family']} family) under {sw['attack']} attacks "
        f"with epsilon in {[round(e, 6) for e in sw['epsilons']]}; {source}; test split. "
        f"Mean and standard error (sample std / sqrt(n)) over seeds {list(seeds)}.\n"
    )


# --- strategy comparison ----------------------------------------------------


def _compare_cell(args) -> dict:
    doc, schedule, seed = args
    row = {"schedule": schedule, "seed": seed}
    try:
        cfg = RunConfig(doc).with_seed(seed)
        strategy, adversarial = cfg.compare_variant(schedule)
        result, data, tcfg = run_training(cfg, strategy, adversarial)
        x, y = data.xy("test")
        solver = eval_solver(strategy)
        eps = cfg["compare"]["epsilon"]
        base_attack = cfg.attack()
        fgsm_cfg = AttackConfig("fgsm", eps, lo=base_attack.lo, hi=base_attack.hi)
        pgd_cfg = _attack_at(base_attack.replace(kind="pgd"), eps)
        rng = np.random.default_rng([seed, 7])
        row.update(
            clean_acc=clean_accuracy(result.model, solver, x, y),
            fgsm_acc=robust_accuracy(result.model, solver, x, y, fgsm_cfg),
            pgd_acc=robust_accuracy(result.model, solver, x, y, pgd_cfg, rng),
        )
    except RKSmoothError as exc:
        row["error"] = f"{exc.code}: {exc}"
    return row


def compare(cfg: RunConfig, seeds: Sequence[int] | None = None, jobs: int = 1) -> list[dict]:
    """Train every schedule for every seed; failing cells keep an error message."""
    seeds = list(cfg["compare"]["seeds"] if seeds is None else seeds)
    cells = [(cfg.doc, sch, s) for sch in cfg["compare"]["schedules"] for s in seeds]
    return parallel_map(_compare_cell, cells, jobs)


def summarize_compare(rows: Sequence[dict]) -> list[dict]:
    out = []
    for schedule in dict.fromkeys(r["schedule"] for r in rows):
        ok = [r for r in rows if r["schedule"] == schedule and not r.get("error")]
        entry = {"schedule": schedule, "n_seeds": len(ok)}
        for key in ("clean", "fgsm", "pgd"):
            m, s = mean_stderr([r[f"{key}_acc"] for r in ok])
            entry[f"{key}_mean"], entry[f"{key}_stderr"] = m, s
        out.append(entry)
    return out


def format_compare_table(summary: Sequence[dict], cfg: RunConfig, seeds: Sequence[int]) -> str:
    def cell(m, s):
        if m is None or (isinstance(m, float) and math.isnan(m)):
            return "failed"
        return f"{100 * m:.2f}" if s is None else f"{100 * m:.2f} ± {100 * s:.2f}"

    st = cfg["strategy"]
    eps = cfg["compare"]["epsilon"]
    lines = [
        f"Robust accuracy (%) on the test split, epsilon = {eps:.6g}. "
        f"Smoothing: {st['distribution']} noise, scale {st['scale']}. "
        f"Mean ± standard error over seeds {list(seeds)}.",
        "",
        f"{'Training schedule':<26}{'Clean':>18}{'FGSM':>18}{'PGD':>18}",
    ]
    for e in summary:
        lines.append(
            f"{e['schedule']:<26}"
            f"{cell(e['clean_mean'], e['clean_stderr']):>18}"
            f"{cell(e['fgsm_mean'], e['fgsm_stderr']):>18}"
            f"{cell(e['pgd_mean'], e['pgd_stderr']):>18}"
        )
    return "\n".join(lines) + "\n"


# --- ensemble evaluation ----------------------------------------------------


def ensemble_eval(
    model: NeuralODEModel,
    x: np.ndarray,
    y: np.ndarray,
    points: Sequence[ParamPoint],
    weights: Sequence[float] | None,
    epsilons: Sequence[float],
    attack: AttackConfig,
    seed: int,
) -> list[dict]:
    """Accuracy of each member solver alone and of their output ensemble."""
    if not points:
        raise ValueError("ensemble needs at least one point")
    weights = [1.0 / len(points)] * len(points) if weights is None else list(weights)
    solvers = [(str(p), make_tableau(p)) for p in points]
    solvers.append(("ensemble", SolverEnsemble(tuple(t for _, t in solvers), tuple(weights))))
    rows = []
    for name, solver in solvers:
        clean = clean_accuracy(model, solver, x, y)
        for ie, eps in enumerate(epsilons):
            rng = np.random.default_rng([seed, ie])
            robust = robust_accuracy(model, solver, x, y, _attack_at(attack, eps), rng)
            rows.append({"solver": name, "epsilon": float(eps), "attack": attack.kind,
                         "clean_acc": clean, "robust_acc": robust, "seed": seed})
    return rows


def load_model(checkpoint) -> NeuralODEModel:
    if checkpoint is None:
        raise CheckpointError("a checkpoint is required")
    return load_checkpoint(checkpoint)[0]
