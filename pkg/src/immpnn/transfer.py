"""Graph-transfer benchmark: generators, training loop and resumable sweeps.

A one-hot label sits on a target node ``k`` hops from the source; every other
node carries an all-ones vector. A depth-``k`` network must reproduce the
label at the source.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coarsening import cached_hierarchy, replicate_hierarchy
from .graph import Graph, from_edge_list
from .model import ImMpnnConfig, ImMpnnModel, fit_width_to_budget, forward, param_count, param_count_for

log = logging.getLogger(__name__)

LABEL_DIM = 5
FAMILIES = ("ring", "crossed-ring", "clique-path")


@dataclass(frozen=True)
class TransferInstance:
    graph: Graph
    source: int
    target: int
    k: int
    label_dim: int = LABEL_DIM

    def features(self, label: int) -> np.ndarray:
        """``n x (label_dim + 1)``: all ones, except the target row holds the one-hot label."""
        x = np.ones((self.graph.n, self.label_dim + 1))
        x[self.target] = 0.0
        x[self.target, label] = 1.0
        return x

    def one_hot(self, label: int) -> np.ndarray:
        y = np.zeros(self.label_dim)
        y[label] = 1.0
        return y


def _checked(g: Graph, source: int, target: int, k: int) -> TransferInstance:
    d = g.bfs_distances(source)[target]
    if d != k:
        raise AssertionError(f"generator bug: distance(source, target) = {d}, expected {k}")
    return TransferInstance(g, source, target, k)


def _need_k(k: int) -> None:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")


def gen_ring(k: int) -> TransferInstance:
    """Cycle of ``2k`` nodes; source 0, target ``k``."""
    _need_k(k)
    n = 2 * k
    return _checked(from_edge_list([(i, (i + 1) % n) for i in range(n)], n), 0, k, k)


def gen_crossed_ring(k: int) -> TransferInstance:
    """``2k``-cycle plus chords ``(i, 2k - i)`` joining mirror-image intermediates."""
    _need_k(k)
    n = 2 * k
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += [(i, n - i) for i in range(1, k) if abs((n - i) - i) > 1]
    return _checked(from_edge_list(edges, n), 0, k, k)


def gen_clique_path(k: int) -> TransferInstance:
    """Clique on nodes ``0..k-1`` whose node ``k-1`` starts a ``k``-node path.

    The path shares its first node with the clique, so the graph has
    ``2k - 1`` nodes; source is clique node 0, target the far path end.
    """
    _need_k(k)
    clique = [(i, j) for i in range(k) for j in range(i + 1, k)]
    path = [(i, i + 1) for i in range(k - 1, 2 * k - 2)]
    return _checked(from_edge_list(clique + path, 2 * k - 1), 0, 2 * k - 2, k)


GENERATORS: dict[str, Callable[[int], TransferInstance]] = {
    "ring": gen_ring,
    "crossed-ring": gen_crossed_ring,
    "clique-path": gen_clique_path,
}


# --- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 2000
    early_stop: float = 1e-5
    train_draws: int = 64
    test_draws: int = 32
    lr: float = 1e-3


@dataclass
class ResultRow:
    family: str
    k: int
    scales: int
    seed: int
    hidden: int
    params: int
    final_train_loss: float
    test_accuracy: float
    epochs_run: int
    status: str = "ok"
    wall_time: float = 0.0

    @classmethod
    def csv_fields(cls) -> list[str]:
        # wall_time is kept out of the CSV so reruns are byte-identical
        return [f.name for f in fields(cls) if f.name != "wall_time"]

    def csv_row(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        d["final_train_loss"] = repr(float(self.final_train_loss))
        d["test_accuracy"] = repr(float(self.test_accuracy))
        return d


def cell_seed(family: str, k: int, scales: int, seed: int) -> np.random.SeedSequence:
    """Independent RNG stream per sweep cell."""
    digest = hashlib.sha256(f"{family}|{k}|{scales}".encode()).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest[:8], "little")])


def class_batch_features(inst: TransferInstance) -> np.ndarray:
    """One graph copy per class, stacked; copy ``c`` carries label ``c`` at the target."""
    return np.concatenate([inst.features(c) for c in range(inst.label_dim)])


def source_rows(inst: TransferInstance, labels: np.ndarray) -> np.ndarray:
    """Row of the source node in the copy holding each drawn label.

    Draws sharing a label share a forward pass; gathering with repeats makes the
    loss and its gradient identical to running every draw separately.
    """
    return np.asarray(labels) * inst.graph.n + inst.source


def train_transfer(
    family: str,
    k: int,
    config: ImMpnnConfig,
    seed: int = 0,
    settings: TrainSettings = TrainSettings(),
) -> ResultRow:
    """Train one model on one (family, k) instance; accuracy is argmax agreement at the source."""
    if config.layers != k:
        raise ValueError(f"network depth must equal k ({config.layers} != {k})")
    t0 = time.perf_counter()
    inst = GENERATORS[family](k)
    ss = cell_seed(family, k, config.scales, seed)
    model_seed, match_seed, data_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    hier1 = cached_hierarchy(inst.graph, config.scales, match_seed)
    if hier1.scales != config.scales:
        config = config.replace(scales=hier1.scales)
    model = ImMpnnModel(config, seed=model_seed)
    hier = replicate_hierarchy(hier1, inst.label_dim)
    rng = np.random.default_rng(data_seed)
    opt = ad.Adam(model.parameters(), lr=settings.lr)
    eye = np.eye(inst.label_dim)

    x_all = Tensor(class_batch_features(inst))
    # overflow on a diverging run is detected and recorded below
    with np.errstate(over="ignore", invalid="ignore"):
        loss_val = math.inf
        epochs = 0
        status = "ok"
        for epoch in range(settings.epochs):
            labels = rng.integers(0, inst.label_dim, settings.train_draws)
            rows = source_rows(inst, labels)
            opt.zero_grad()
            out = forward(model, hier, x_all)
            loss = ad.mse_loss(ad.gather_rows(out, rows), eye[labels])
            loss_val = loss.item()
            epochs = epoch + 1
            if not math.isfinite(loss_val):
                status = "diverged"
                break
            if loss_val < settings.early_stop:
                break
            ad.backward(loss)
            opt.step()

        labels = rng.integers(0, inst.label_dim, settings.test_draws)
        rows = source_rows(inst, labels)
        pred = forward(model, hier, x_all).values[rows]
        if status == "ok" and np.all(np.isfinite(pred)):
            acc = float(np.mean(pred.argmax(axis=1) == labels))
        else:
            status = "diverged"
            acc = 0.0

    return ResultRow(
        family, k, config.scales, seed, config.hidden, param_count(model),
        loss_val, acc, epochs, status, time.perf_counter() - t0,
    )


# --- sweeps --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    family: str
    k: int
    scales: int
    seed: int

    def key(self) -> tuple:
        return (self.family, self.k, self.scales, self.seed)


def plan_sweep(families, k_list, scales_list, seeds) -> list[SweepCell]:
    for name, lst in (("families", families), ("k_list", k_list), ("scales_list", scales_list), ("seeds", seeds)):
        if not lst:
            raise ValueError(f"{name} must be non-empty")
    for f in families:
        if f not in GENERATORS:
            raise ValueError(f"unknown family {f!r}; expected one of {FAMILIES}")
    return [SweepCell(f, k, s, sd) for f in families for k in k_list for s in scales_list for sd in seeds]


def default_budget(base: ImMpnnConfig, k: int) -> int:
    """Parameter count of the single-scale depth-``k`` model at the base width."""
    return param_count_for(base.replace(scales=0, layers=k, in_dim=LABEL_DIM + 1, out_dim=LABEL_DIM))


def cell_config(base: ImMpnnConfig, cell: SweepCell, budget: int | None = None) -> ImMpnnConfig:
    """Depth ``k`` config whose width fits the budget shared by every scale count.

    The budget is ``budget`` if given, else ``base.param_budget``, else the
    size of the single-scale model at ``base.hidden`` for this depth.
    """
    cfg = base.replace(scales=cell.scales, layers=cell.k, in_dim=LABEL_DIM + 1, out_dim=LABEL_DIM)
    if budget is None:
        budget = base.param_budget if base.param_budget is not None else default_budget(base, cell.k)
    return fit_width_to_budget(cfg, budget)


def _run_cell(args) -> ResultRow:
    cell, cfg, settings = args
    return train_transfer(cell.family, cell.k, cfg, cell.seed, settings)


def _completed(path: Path) -> set[tuple]:
    if not path.exists():
        return set()
    with open(path, newline="") as fh:
        return {
            (r["family"], int(r["k"]), int(r["scales"]), int(r["seed"]))
            for r in csv.DictReader(fh)
        }


def sweep(
    families: Sequence[str],
    k_list: Sequence[int],
    scales_list: Sequence[int],
    seeds: Sequence[int],
    config: ImMpnnConfig,
    out_csv: str | Path,
    budget: int | None = None,
    settings: TrainSettings = TrainSettings(),
    workers: int | None = None,
    timings: str | Path | None = None,
) -> list[ResultRow]:
    """Run every (family, k, scales, seed) cell, appending rows to ``out_csv`` in plan order.

    Cells already present in the CSV are skipped, so an interrupted sweep can be
    resumed. ``workers`` (default ``$IMMPNN_THREADS`` or 1) cells run in parallel
    processes; rows are still written in plan order.
    """
    out_csv = Path(out_csv)
    cells = plan_sweep(families, k_list, scales_list, seeds)
    done = _completed(out_csv)
    todo = [c for c in cells if c.key() not in done]
    if workers is None:
        workers = max(1, int(os.environ.get("IMMPNN_THREADS", "1")))
    jobs = [(c, cell_config(config, c, budget), settings) for c in todo]

    new_file = not out_csv.exists()
    rows: list[ResultRow] = []
    with open(out_csv, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ResultRow.csv_fields(), lineterminator="\n")
        if new_file:
            writer.writeheader()
            fh.flush()

        def emit(row: ResultRow) -> None:
            writer.writerow(row.csv_row())
            fh.flush()
            rows.append(row)
            log.info("%s k=%d S=%d seed=%d acc=%.3f loss=%.2e", row.family, row.k, row.scales, row.seed, row.test_accuracy, row.final_train_loss)

        if workers == 1 or len(jobs) <= 1:
            for job in jobs:
                emit(_run_cell(job))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_run_cell, jobs):
                    emit(row)
    if timings is not None:
        with open(timings, "a") as fh:
            for r in rows:
                fh.write(f"{r.family},{r.k},{r.scales},{r.seed},{r.wall_time:.3f}\n")
    return rows


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: Iterable[dict]) -> dict[tuple[str, int, int], float]:
    """Mean accuracy per (family, scales, k)."""
    acc: dict[tuple[str, int, int], list[float]] = {}
    for r in rows:
        key = (r["family"], int(r["scales"]), int(r["k"]))
        acc.setdefault(key, []).append(float(r["test_accuracy"]))
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}
