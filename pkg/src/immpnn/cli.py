"""Command-line interface: ``immpnn {coarsen,erf,diffuse,transfer,check}``.

Every subcommand resolves its settings as flags > ``--config`` JSON > defaults,
draws all randomness from ``--seed`` and writes a ``manifest.json`` next to its
outputs. Exit codes: 0 success, 1 invalid input or usage, 2 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
import traceback
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .coarsening import build_hierarchy
from .erf import (
    DiffusionConfig,
    binomial_tail,
    contribution_map,
    diffuse,
    distance_decay_correlation,
    erf_radius,
    heat_kernel,
    heat_kernel_error,
    hoeffding_bound,
    kappa_rescaling_check,
    pascal_contributions,
)
from .graph import Graph, format_graph, grid_graph, path_graph, read_graph_file
from .layers import uniform_propagate
from .model import ImMpnnConfig, ImMpnnModel, param_count
from .transfer import FAMILIES, TrainSettings, read_results, summarize, sweep

log = logging.getLogger("immpnn")


class UsageError(ValueError):
    """Invalid flag or config value."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR: {message}", file=sys.stderr)
        raise SystemExit(1)


DEFAULTS: dict[str, dict] = {
    "coarsen": {"input": None, "scales": 3, "order": "random"},
    "erf": {
        "input": None, "grid": 21, "center": None, "scales": 0, "layers": 10, "hidden": 16,
        "backbone": "gcn", "in_dim": 1, "thresholds": [1e-3], "x0": "normal",
    },
    "diffuse": {
        "input": None, "grid": None, "path": None, "kappa": 1.0, "T": 1.0, "times": None,
        "source": None, "dt": None,
    },
    "transfer": {
        "family": ["clique-path"], "k_list": [5, 10], "scales_list": [0, 3], "seeds": [0],
        "budget": None, "hidden": 32, "backbone": "gcn", "epochs": 2000, "early_stop": 1e-5,
        "lr": 1e-3, "train_draws": 64, "test_draws": 32, "workers": None,
    },
    "check": {},
}


def _str_list(v) -> list[str]:
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    return [str(s) for s in v]


def _num_list(cast: Callable) -> Callable:
    def parse(v):
        try:
            return [cast(s) for s in _str_list(v)]
        except ValueError as e:
            raise UsageError(f"bad list value {v!r}: {e}") from None

    return parse


COERCE: dict[str, Callable] = {
    "thresholds": _num_list(float),
    "times": _num_list(float),
    "family": _str_list,
    "k_list": _num_list(int),
    "scales_list": _num_list(int),
    "seeds": _num_list(int),
}


SCALARS: dict[str, type] = {
    "input": str, "order": str, "backbone": str, "x0": str,
    "scales": int, "grid": int, "center": int, "layers": int, "hidden": int, "in_dim": int,
    "path": int, "source": int, "budget": int, "epochs": int, "train_draws": int, "test_draws": int,
    "workers": int, "kappa": float, "T": float, "dt": float, "early_stop": float, "lr": float,
}


def _check_scalar(key: str, v):
    want = SCALARS.get(key)
    if v is None or want is None:
        return v
    if want is float and isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, want) and not isinstance(v, bool):
        return v
    raise UsageError(f"{key} must be {want.__name__}, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="immpnn", description="Interleaved multiscale message passing toolkit.")
    p.add_argument("--version", action="version", version=f"immpnn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON file of settings (flags override it)")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("coarsen", help="build a coarsening hierarchy from an edge-list file")
    common(sp)
    sp.add_argument("--in", dest="input", help="graph file (first line n, then 'u v' lines)")
    sp.add_argument("--scales", type=int)
    sp.add_argument("--order", choices=["random", "identity"], help="node visit order for matching")

    sp = sub.add_parser("erf", help="contribution map of an untrained model")
    common(sp)
    sp.add_argument("--in", dest="input", help="graph file; default is a --grid lattice")
    sp.add_argument("--grid", type=int, help="side of the square lattice (default 21)")
    sp.add_argument("--center", type=int, help="output node (default: middle node)")
    sp.add_argument("--scales", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--backbone", choices=["gcn", "sumMlp"])
    sp.add_argument("--in-dim", dest="in_dim", type=int)
    sp.add_argument("--thresholds", help="comma-separated radius thresholds")
    sp.add_argument("--x0", choices=["normal", "ones"], help="input features")

    sp = sub.add_parser("diffuse", help="explicit-Euler heat diffusion from a point source")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--in", dest="input", help="graph file")
    g.add_argument("--grid", type=int, help="square lattice side")
    g.add_argument("--path", type=int, help="path graph length")
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--T", type=float, help="final time")
    sp.add_argument("--times", help="comma-separated snapshot times (default: T)")
    sp.add_argument("--source", type=int, help="source node (default: middle node)")
    sp.add_argument("--dt", type=float, help="Euler step (default: 0.9 of the stability limit)")

    sp = sub.add_parser("transfer", help="graph-transfer sweep")
    common(sp)
    sp.add_argument("--family", help=f"comma-separated subset of {','.join(FAMILIES)}")
    sp.add_argument("--k-list", dest="k_list")
    sp.add_argument("--scales-list", dest="scales_list")
    sp.add_argument("--seeds")
    sp.add_argument("--budget", type=int, help="parameter budget (default: single-scale model at --hidden)")
    sp.add_argument("--hidden", type=int, help="base width before budget fitting")
    sp.add_argument("--backbone", choices=["gcn", "sumMlp"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--early-stop", dest="early_stop", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--train-draws", dest="train_draws", type=int)
    sp.add_argument("--test-draws", dest="test_draws", type=int)
    sp.add_argument("--workers", type=int, help="parallel cells (default $IMMPNN_THREADS or 1)")

    sp = sub.add_parser("check", help="run the analytic oracle suite")
    common(sp, out_required=False)
    return p


def resolve(command: str, ns: argparse.Namespace) -> tuple[dict, int, list[Path]]:
    """Merge defaults, ``--config`` and flags; returns (settings, seed, input files)."""
    settings = dict(DEFAULTS[command])
    seed = 0
    inputs = []
    if ns.config:
        cfg_path = Path(ns.config)
        inputs.append(cfg_path)
        try:
            data = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{cfg_path}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise UsageError(f"{cfg_path}: expected a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        if "in" in data:
            data["input"] = data.pop("in")
        seed = data.pop("seed", seed)
        unknown = set(data) - set(settings)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        settings.update(data)
    for key in settings:
        v = getattr(ns, key, None)
        if v is not None:
            settings[key] = v
    if ns.seed is not None:
        seed = ns.seed
    if not isinstance(seed, int):
        raise UsageError(f"seed must be an integer, got {seed!r}")
    for key, v in settings.items():
        if v is None:
            continue
        settings[key] = COERCE[key](v) if key in COERCE else _check_scalar(key, v)
    if settings.get("input"):
        inputs.append(Path(settings["input"]))
    return settings, seed, inputs


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, settings: dict, seed: int, inputs: list[Path], t0: float) -> None:
    manifest = {
        "subcommand": command,
        "config": settings,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "version": __version__,
        "wall_time": round(time.perf_counter() - t0, 3),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _best_effort(fn: Callable, *args, **kw) -> None:
    """SVG output never changes the exit code."""
    try:
        from . import svg

        getattr(svg, fn)(*args, **kw)
    except Exception as e:  # noqa: BLE001
        log.warning("SVG output skipped: %s", e)


def _out_dir(out: str) -> Path:
    d = Path(out)
    if d.exists() and not d.is_dir():
        raise UsageError(f"--out {d} exists and is not a directory")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_graph(settings: dict) -> tuple[Graph, tuple[int, int] | None]:
    """Graph from ``input``, ``grid`` or ``path``; also returns the lattice shape if any."""
    if settings.get("input"):
        return read_graph_file(settings["input"]), None
    if settings.get("path"):
        return path_graph(_positive(settings["path"], "path")), None
    if settings.get("grid"):
        n = _positive(settings["grid"], "grid")
        return grid_graph(n), (n, n)
    raise UsageError("give one of --in, --grid or --path")


def _positive(v, name: str) -> int:
    if not isinstance(v, int) or v < 1:
        raise UsageError(f"{name} must be a positive integer, got {v!r}")
    return v


def _node(v, g: Graph, name: str) -> int:
    if v is None:
        return g.n // 2
    if not isinstance(v, int) or not 0 <= v < g.n:
        raise UsageError(f"{name} must be a node index in [0, {g.n}), got {v!r}")
    return v


# --- subcommands -----------------------------------------------------------------


def cmd_coarsen(settings: dict, seed: int, out: Path) -> None:
    if not settings["input"]:
        raise UsageError("coarsen needs --in")
    g = read_graph_file(settings["input"])
    scales = settings["scales"]
    if not isinstance(scales, int) or scales < 0:
        raise UsageError(f"scales must be >= 0, got {scales!r}")
    if settings["order"] not in ("random", "identity"):
        raise UsageError(f"order must be random or identity, got {settings['order']!r}")
    hier = build_hierarchy(g, scales, seed=None if settings["order"] == "identity" else seed)
    for s, gs in enumerate(hier.graphs):
        (out / f"level_{s}.txt").write_text(format_graph(gs))
    pairings = {
        "requested_scales": hier.requested_scales,
        "scales": hier.scales,
        "node_counts": hier.node_counts,
        "edge_counts": hier.edge_counts,
        "pairings": [[list(map(int, c)) for c in p.clusters] for p in hier.pairings],
    }
    (out / "pairings.json").write_text(json.dumps(pairings) + "\n")
    print(f"{hier.scales + 1} levels, nodes {hier.node_counts}")


def cmd_erf(settings: dict, seed: int, out: Path) -> None:
    g, shape = _load_graph(settings)
    center = _node(settings["center"], g, "center")
    thresholds = settings["thresholds"]
    for th in thresholds:
        if not 0 < th < 1:
            raise UsageError(f"thresholds must lie in (0, 1), got {th}")
    hier = build_hierarchy(g, settings["scales"], seed=seed)
    config = ImMpnnConfig(
        scales=hier.scales, layers=settings["layers"], hidden=settings["hidden"],
        backbone=settings["backbone"], in_dim=settings["in_dim"], out_dim=1,
    )
    model = ImMpnnModel(config, seed=seed)
    x0 = np.ones((g.n, config.in_dim)) if settings["x0"] == "ones" else None
    erf = contribution_map(model, hier, center, x0=x0, seed=seed)
    norm = erf.max_normalized()
    dist = g.bfs_distances(center)
    lines = ["node_id,hop_distance,contribution,normalized"]
    lines += [f"{v},{dist[v]},{float(erf.contribution[v])!r},{float(norm.contribution[v])!r}" for v in range(g.n)]
    (out / "erf.csv").write_text("\n".join(lines) + "\n")
    radii = {repr(th): erf_radius(erf, g, th) for th in thresholds}
    summary = {
        "center": center,
        "effective_scales": hier.scales,
        "params": param_count(model),
        "radius": radii,
        "spearman_distance_vs_log_contribution": distance_decay_correlation(erf, g),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if shape is not None:
        _best_effort("grid_heatmap", erf.contribution, *shape, out / "erf.svg", title=f"S={hier.scales}")
    print(" ".join(f"radius@{th}={r}" for th, r in radii.items()))


def cmd_diffuse(settings: dict, seed: int, out: Path) -> None:
    g, shape = _load_graph(settings)
    source = _node(settings["source"], g, "source")
    if shape is not None and settings["source"] is None:
        source = (shape[0] // 2) * shape[1] + shape[1] // 2
    cfg = DiffusionConfig(kappa=settings["kappa"], T=settings["T"], source=source, dt=settings["dt"])
    res = diffuse(g, cfg, times=settings["times"])
    lines = ["time,node_id,value"]
    for t, x in zip(res.times, res.snapshots):
        lines += [f"{float(t)!r},{v},{float(x[v])!r}" for v in range(g.n)]
    (out / "diffusion.csv").write_text("\n".join(lines) + "\n")
    summary = {"dt": cfg.step_for(g), "steps": res.steps, "max_mass_drift": res.max_mass_drift, "source": source}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if shape is not None:
        _best_effort("grid_heatmap", res.snapshots[-1], *shape, out / "diffusion.svg", title=f"t={res.times[-1]:g}")
    print(f"{res.steps} steps, max mass drift {res.max_mass_drift:.2e}")


def cmd_transfer(settings: dict, seed: int, out: str) -> Path:
    """Run the sweep; returns where the manifest belongs."""
    out_path = Path(out)
    if out_path.suffix == ".csv":
        csv_path = out_path
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        stem = csv_path.with_suffix("")
        sidecar = {k: Path(f"{stem}.{k}") for k in ("manifest.json", "svg", "timings.log")}
    else:
        d = _out_dir(out)
        csv_path = d / "results.csv"
        sidecar = {"manifest.json": d / "manifest.json", "svg": d / "results.svg", "timings.log": d / "timings.log"}
    for f in settings["family"]:
        if f not in FAMILIES:
            raise UsageError(f"unknown family {f!r}; expected one of {', '.join(FAMILIES)}")
    if any(k < 2 for k in settings["k_list"]):
        raise UsageError("every k must be >= 2")
    if any(s < 0 for s in settings["scales_list"]):
        raise UsageError("scales must be >= 0")
    base = ImMpnnConfig(hidden=settings["hidden"], backbone=settings["backbone"])
    train = TrainSettings(
        epochs=settings["epochs"], early_stop=settings["early_stop"], train_draws=settings["train_draws"],
        test_draws=settings["test_draws"], lr=settings["lr"],
    )
    # --seeds lists training seeds; --seed offsets all of them
    seeds = [seed + s for s in settings["seeds"]]
    sweep(
        settings["family"], settings["k_list"], settings["scales_list"], seeds, base, csv_path,
        budget=settings["budget"], settings=train, workers=settings["workers"], timings=sidecar["timings.log"],
    )
    table = summarize(read_results(csv_path))
    series: dict[str, list] = {}
    for (fam, s, k), acc in table.items():
        series.setdefault(f"{fam} S={s}", []).append((k, acc))
        print(f"{fam} S={s} k={k} mean_acc={acc:.3f}")
    _best_effort("line_chart", series, sidecar["svg"])
    return sidecar["manifest.json"]


def run_checks() -> list[tuple[str, bool, str]]:
    """Analytic oracle suite: (name, passed, detail) per check."""
    results = []

    def record(name, fn):
        try:
            ok, detail = fn()
        except Exception as e:  # noqa: BLE001
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append((name, bool(ok), detail))

    def pascal():
        for ell in range(21):
            x = np.zeros(2 * ell + 1, dtype=np.int64)
            x[ell] = 1
            y = uniform_propagate(path_graph(2 * ell + 1), x, ell)
            if y[::2].tolist() != pascal_contributions(ell) or y[1::2].any():
                return False, f"mismatch at l={ell}"
        return True, "l <= 20 exact"

    def hoeffding():
        for ell in range(31):
            for k in range(ell + 1):
                if binomial_tail(ell, k) > Fraction(hoeffding_bound(ell, k)):
                    return False, f"violated at l={ell}, k={k}"
        spot = binomial_tail(10, 2) == Fraction(56, 1024) and float(binomial_tail(10, 2)) < math.exp(-1.8)
        return spot, "l <= 30; tail(10,2)=56/1024 < exp(-1.8)"

    def kernel_value():
        v = heat_kernel([0.0, 0.0], [0.0, 0.0], 0.005, 1.0, 2)
        return abs(v - 1 / (4 * 0.005 * math.pi)) < 1e-9, f"{v:.4f}"

    def kernel_agreement():
        errs = [heat_kernel_error(kappa_t=kt) for kt in (0.5, 1.0, 2.0, 5.0)]
        worst = max(e for e, _ in errs)
        drift = max(d for _, d in errs)
        return worst <= 0.05 and drift <= 1e-12, f"max err {worst:.4f}, drift {drift:.1e}"

    def kappa4():
        rep = kappa_rescaling_check(64, 1.0, 4.0)
        return rep.ok, f"ratio {rep.ratio:.4f}"

    record("pascal", pascal)
    record("hoeffding", hoeffding)
    record("heat-kernel-value", kernel_value)
    record("heat-kernel-agreement", kernel_agreement)
    record("kappa-x4", kappa4)
    return results


def cmd_check(out: Path | None) -> int:
    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    passed = sum(ok for _, ok, _ in results)
    print(f"PASS count: {passed}/{len(results)}")
    if out is not None:
        lines = ["check,status,detail"] + [f"{n},{'PASS' if ok else 'FAIL'},\"{d}\"" for n, ok, d in results]
        (out / "check.csv").write_text("\n".join(lines) + "\n")
    return 0 if passed == len(results) else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    command = ns.command
    try:
        settings, seed, inputs = resolve(command, ns)
        if command == "check":
            out = _out_dir(ns.out) if ns.out else None
            code = cmd_check(out)
            if out is not None:
                write_manifest(out / "manifest.json", command, settings, seed, inputs, t0)
            return code
        if command == "transfer":
            manifest = cmd_transfer(settings, seed, ns.out)
        else:
            out = _out_dir(ns.out)
            {"coarsen": cmd_coarsen, "erf": cmd_erf, "diffuse": cmd_diffuse}[command](settings, seed, out)
            manifest = out / "manifest.json"
        write_manifest(manifest, command, settings, seed, inputs, t0)
        return 0
    except (ValueError, FileNotFoundError, IsADirectoryError) as e:
        msg = str(e).replace("\n", " ")
        print(f"ERROR: {msg}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("%s", traceback.format_exc())
        print(f"ERROR: internal failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
