"""Acceptance suite: one test per criterion, each emitting a single PASS/FAIL line.

Oracles are computed independently of the code under test wherever possible
(``math.comb`` binomials, inline Gaussians, dense matrices, finite differences).
"""

import json
import math
import warnings
from fractions import Fraction

import numpy as np

from immpnn import autodiff as ad
from immpnn import cli
from immpnn.autodiff import Tensor
from immpnn.coarsening import build_hierarchy, graclus_match, pairing_matrix, pool_features, pool_graph, unpool_features
from immpnn.erf import (
    DiffusionConfig,
    binomial_tail,
    contribution_map,
    diffuse,
    distance_decay_correlation,
    erf_radius,
    hoeffding_bound,
    kappa_rescaling_check,
)
from immpnn.gradcheck import check_gradients
from immpnn.graph import cycle_graph, from_edge_list, grid_graph, path_graph, write_graph_file
from immpnn.layers import uniform_propagate
from immpnn.model import ImMpnnConfig, ImMpnnModel, backbone_stack_forward, count_message_ops, forward
from immpnn.transfer import TrainSettings, sweep


def test_criterion_01_pascal_exactness(criterion):
    c = criterion(1, "Pascal exactness", 1.0)
    bad = []
    for ell in range(21):
        n = 2 * ell + 1
        x = np.zeros(n, dtype=np.int64)
        x[ell] = 1
        y = uniform_propagate(path_graph(n), x, ell)
        want = [0] * n
        for i in range(ell + 1):
            want[2 * i] = math.comb(ell, i)
        if y.tolist() != want:
            bad.append(ell)
    c.finish(not bad, f"l=0..20 exact" if not bad else f"mismatch at l={bad}")


def test_criterion_02_hoeffding_dominance(criterion):
    c = criterion(2, "Hoeffding dominance", 1.0)
    violations = 0
    for ell in range(31):
        for k in range(ell + 1):
            tail = Fraction(sum(math.comb(ell, i) for i in range(k + 1)), 2**ell)
            assert binomial_tail(ell, k) == tail
            violations += tail > Fraction(hoeffding_bound(ell, k))
    tail, bound = binomial_tail(10, 2), hoeffding_bound(10, 2)
    spot = tail == Fraction(56, 1024) and math.isclose(bound, math.exp(-1.8), rel_tol=1e-14) and tail < Fraction(bound)
    c.finish(
        violations == 0 and spot,
        f"{violations} violations over l<=30; tail(10,2)={float(tail):.4f} < bound={bound:.4f}",
    )


def test_criterion_03_heat_kernel_agreement(criterion):
    c = criterion(3, "heat-kernel agreement", 10.0)
    n, center = 201, 100
    pos = np.arange(n) - center
    errs, drift = [], 0.0
    for kt in (0.5, 1.0, 2.0, 5.0):
        # dt * kappa = 1/6 is the Euler step of the fourth-order accurate three-point scheme
        res = diffuse(path_graph(n), DiffusionConfig(kappa=1.0, T=kt, source=center, dt=1.0 / 6.0))
        x = res.snapshots[-1]
        gauss = np.exp(-(pos**2) / (4.0 * kt))
        errs.append(float(np.max(np.abs(x / x.max() - gauss / gauss.max()))))
        drift = max(drift, res.max_mass_drift)
    ok = max(errs) <= 0.05 and drift <= 1e-12
    c.finish(ok, "Linf errors " + ", ".join(f"{e:.4f}" for e in errs) + f"; max mass drift {drift:.1e}")


def test_criterion_04_kappa_times_four(criterion):
    c = criterion(4, "kappa x4 coarsening", 30.0)
    rep = kappa_rescaling_check(grid_n=64, kappa=1.0, t=4.0)
    guard = max(rep.fine_boundary_mass, rep.coarse_boundary_mass)
    ok = abs(rep.ratio - 4.0) <= 0.15 * 4.0 and guard < 0.01
    c.finish(
        ok,
        f"ratio {rep.ratio:.4f} (fine {rep.fine_moment:.3f} vs 2kt={2 * rep.kappa * rep.t:g}, "
        f"coarse {rep.coarse_moment:.3f}); boundary mass {guard:.1e}",
    )


def _gnp(rng, n, p=0.5):
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return from_edge_list(list(zip(iu[0][keep].tolist(), iu[1][keep].tolist())), n)


def test_criterion_05_coarsening_correctness(criterion):
    c = criterion(5, "coarsening correctness", 10.0)
    rng = np.random.default_rng(2024)
    fails = {"validity": 0, "edge oracle": 0, "pool-unpool": 0, "budget": 0}
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for trial in range(1000):
            n = int(rng.integers(1, 13))
            g = _gnp(rng, n)
            p = graclus_match(g, seed=trial)
            try:
                p.validate(g)
            except ValueError:
                fails["validity"] += 1
            A = g.adjacency().toarray()
            P = pairing_matrix(p)
            oracle = np.sign(P.T @ A @ P)
            np.fill_diagonal(oracle, 0)
            if not np.array_equal(pool_graph(g, p).adjacency().toarray(), oracle):
                fails["edge oracle"] += 1
            y = rng.standard_normal((p.n_coarse, 2))
            if not np.array_equal(pool_features(unpool_features(y, p), p), y):
                fails["pool-unpool"] += 1
            hier = build_hierarchy(g, 3, seed=trial)
            ratio = sum(hier.node_counts) / n
            worst = max(worst, ratio)
            fails["budget"] += ratio > 2.5
    detail = ", ".join(f"{k} {v}/1000" for k, v in fails.items()) + f" failing; worst sum(n_s)/n_0 = {worst:.3f} (S=3)"
    c.finish(not any(fails.values()), detail)


def _fd_ops():
    g4 = path_graph(4)
    pool = graclus_match(cycle_graph(4), seed=0).pool_matrix
    return {
        "matmul": lambda a, b, c: ad.matmul(a, b),
        "add": lambda a, b, c: ad.add(a, c),
        "add_row": lambda a, b, c: ad.add_row(a, ad.gather_rows(c, [1])),
        "scale": lambda a, b, c: ad.scale(a, 0.3),
        "relu": lambda a, b, c: ad.relu(a),
        "concat_cols": lambda a, b, c: ad.concat_cols(a, c),
        "gather_rows": lambda a, b, c: ad.gather_rows(a, [2, 2, 0, 3, 1]),
        "sparse_apply": lambda a, b, c: ad.sparse_apply(pool, a),
        "spmm_adjacency": lambda a, b, c: ad.spmm(g4, "adjacency", a),
        "spmm_sym_norm": lambda a, b, c: ad.spmm(g4, "sym_norm_selfloops", a),
        "spmm_neg_laplacian": lambda a, b, c: ad.spmm(g4, "neg_laplacian", a),
    }


def test_criterion_06_autodiff_soundness(criterion):
    c = criterion(6, "autodiff soundness", 5.0)
    rng = np.random.default_rng(6)
    errs = {}
    for name, op in _fd_ops().items():
        a, b, cc = (Tensor(rng.standard_normal(s), requires_grad=True) for s in ((4, 3), (3, 2), (4, 3)))
        target = rng.standard_normal(op(a, b, cc).shape)
        errs[name] = check_gradients(lambda: ad.mse_loss(op(a, b, cc), target), [a, b, cc], eps=1e-5)

    six = from_edge_list([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)], 6)
    hier = build_hierarchy(six, 1, seed=0)
    model = ImMpnnModel(ImMpnnConfig(scales=1, layers=2, hidden=4, in_dim=3, out_dim=2), seed=0)
    x = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    y = rng.standard_normal((6, 2))
    assert hier.scales == 1 and x.values.dtype == np.float64
    errs["im_mpnn(S=1,L=2)"] = check_gradients(lambda: ad.mse_loss(forward(model, hier, x), y), [x] + model.parameters(), eps=1e-5)
    worst = max(errs, key=errs.get)
    c.finish(errs[worst] <= 1e-4, f"{len(errs)} checks, worst {worst} rel err {errs[worst]:.1e}")


def test_criterion_07_s0_equivalence(criterion):
    c = criterion(7, "S=0 equivalence", 1.0)
    cases = 0
    equal = 0
    for backbone in ("gcn", "sumMlp"):
        for seed, g in enumerate([cycle_graph(11), grid_graph(4, 5), path_graph(7)]):
            cfg = ImMpnnConfig(scales=0, layers=4, hidden=6, backbone=backbone, in_dim=3, out_dim=2)
            model = ImMpnnModel(cfg, seed=seed)
            x = np.random.default_rng(seed).standard_normal((g.n, 3))
            im = forward(model, build_hierarchy(g, 0), x).values
            plain = backbone_stack_forward(model, g, x).values
            cases += 1
            equal += np.array_equal(im, plain)
    c.finish(equal == cases, f"{equal}/{cases} outputs bit-identical")


def test_criterion_08_complexity_budget(criterion):
    c = criterion(8, "complexity budget", 1.0)
    g = path_graph(1024)
    # index-order matching pairs (0,1), (2,3), ... so every level halves exactly
    hier = build_hierarchy(g, 5, seed=None)
    model = ImMpnnModel(ImMpnnConfig(scales=hier.scales, layers=1, hidden=1), seed=0)
    nodes, edges = count_message_ops(model, hier)
    ok = hier.scales == 5 and nodes <= 2 * g.n and edges <= 2 * g.m
    c.finish(ok, f"node_ops {nodes} <= {2 * g.n}, edge_ops {edges} <= {2 * g.m}; levels {hier.node_counts}")


def test_criterion_09_graph_transfer(criterion, tmp_path):
    c = criterion(9, "graph transfer", 600.0)
    base = ImMpnnConfig(hidden=32)
    settings = TrainSettings()
    seeds = [0, 1, 2]

    def mean_acc(family, scales):
        rows = sweep([family], [10], [scales], seeds, base, tmp_path / f"{family}_{scales}.csv", settings=settings)
        return float(np.mean([r.test_accuracy for r in rows])), rows

    gcn_clique, r_a = mean_acc("clique-path", 0)
    im_clique, r_b = mean_acc("clique-path", 3)
    gcn_ring, r_c = mean_acc("ring", 0)
    im_ring, r_d = mean_acc("ring", 3)
    widths = sorted({(r.scales, r.hidden, r.params) for r in r_a + r_b})

    def accs(rows):
        return "/".join(f"{r.test_accuracy:.2f}" for r in rows)

    ok_a, ok_b, ok_c = gcn_clique <= 0.5, im_clique >= 0.95, im_ring >= gcn_ring
    detail = (
        f"(a) clique GCN S=0 {gcn_clique:.3f} [{accs(r_a)}] {'ok' if ok_a else 'FAIL'}; "
        f"(b) clique IM S=3 {im_clique:.3f} [{accs(r_b)}] {'ok' if ok_b else 'FAIL'}; "
        f"(c) ring IM {im_ring:.3f} [{accs(r_d)}] vs GCN {gcn_ring:.3f} [{accs(r_c)}] {'ok' if ok_c else 'FAIL'}; "
        f"(scales, width, params) {widths}"
    )
    c.finish(ok_a and ok_b and ok_c, detail)


def test_criterion_10_erf_enlargement(criterion):
    c = criterion(10, "ERF enlargement", 120.0)
    g = grid_graph(21)
    center = 220
    increasing = 0
    per_seed = []
    rhos = []
    for seed in range(5):
        radii = []
        for S in range(4):
            hier = build_hierarchy(g, S, seed=seed)
            model = ImMpnnModel(ImMpnnConfig(scales=hier.scales, layers=10, hidden=16), seed=seed)
            erf = contribution_map(model, hier, center, seed=seed)
            radii.append(erf_radius(erf, g, 1e-3))
            if S == 0:
                rhos.append(distance_decay_correlation(erf, g))
        per_seed.append(radii)
        increasing += all(a < b for a, b in zip(radii, radii[1:]))
    ok = increasing >= 4 and max(rhos) < -0.8
    c.finish(
        ok,
        f"strictly increasing radii in {increasing}/5 seeds (need 4), radii S0..S3 per seed {per_seed}; "
        f"S=0 Spearman max {max(rhos):.3f}",
    )


def _outputs(d):
    # manifests and timing logs carry wall-clock times; SVGs are presentation only
    return {
        p.name: p.read_bytes()
        for p in sorted(d.iterdir())
        if p.is_file() and "manifest" not in p.name and p.suffix not in (".svg", ".log")
    }


def test_criterion_11_determinism(criterion, tmp_path):
    c = criterion(11, "determinism", 600.0)
    ring = tmp_path / "ring16.txt"
    write_graph_file(cycle_graph(16), ring)
    runs = {
        "coarsen": ["coarsen", "--in", str(ring), "--scales", "3", "--seed", "5"],
        "erf": ["erf", "--grid", "11", "--layers", "4", "--scales", "2", "--seed", "3"],
        "diffuse": ["diffuse", "--grid", "9", "--kappa", "0.7", "--T", "2", "--times", "0.5,2"],
        "transfer": [
            "transfer", "--family", "ring,clique-path", "--k-list", "3", "--scales-list", "0,1", "--seeds", "0,1",
            "--epochs", "20", "--hidden", "6",
        ],
        "check": ["check"],
    }
    same = []
    for name, argv in runs.items():
        first = tmp_path / f"{name}_1"
        assert cli.main(argv + ["--out", str(first)]) == 0
        manifest = json.loads((first / "manifest.json").read_text())
        # replay from the manifest alone
        replay_cfg = dict(manifest["config"], seed=manifest["seed"])
        cfg_file = tmp_path / f"{name}_manifest_config.json"
        cfg_file.write_text(json.dumps(replay_cfg))
        second = tmp_path / f"{name}_2"
        assert cli.main([name, "--config", str(cfg_file), "--out", str(second)]) == 0
        a, b = _outputs(first), _outputs(second)
        if a and a == b:
            same.append(name)
    csvs = sum(n.endswith(".csv") for n in _outputs(tmp_path / "transfer_1"))
    c.finish(len(same) == len(runs) and csvs >= 1, f"byte-identical replays: {', '.join(same)} ({len(same)}/{len(runs)})")
