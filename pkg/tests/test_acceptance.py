"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Slow by design (roughly half an hour on one core). Select with
``pytest tests/test_acceptance.py -s`` to see the summary lines live; they
are also printed through the terminal so ``pytest -v | tee`` captures them.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest

from dpsynth import GENERATORS, PrivSyn, RonGauss, StarPGM, calibrate_gaussian, generate_planted, split
from dpsynth.attack import blackbox_attack
from dpsynth.harness import ExperimentConfig, default_planted_spec, run
from dpsynth.marginals import measure
from dpsynth.metrics.bio import build_network, compare_networks, de_genes, de_tpr_fpr, detect_modules, module_agreement, rank_test
from dpsynth.metrics.statistical import knn_distance_score, knn_distances, overlap_score
from dpsynth.nn import Mlp
from dpsynth.privacy import rdp_per_step, rdp_subsampled_gaussian, rdp_to_eps


@pytest.fixture
def report(request):
    """Call ``report(ok, detail)`` once per criterion."""
    capman = request.config.pluginmanager.getplugin("capturemanager")
    number = request.node.name.split("_")[1]

    def emit(ok, detail=""):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return emit


def planted():
    return generate_planted(default_planted_spec(), 0)


# -- 1 ----------------------------------------------------------------------

def test_1_privacy_numerics(report):
    t0 = time.perf_counter()
    sigma = calibrate_gaussian(1, 1, 1e-5)
    eps, _ = rdp_to_eps(rdp_subsampled_gaussian(1.0, 1.0, 1), 1e-5)
    a, b = rdp_subsampled_gaussian(0.1, 1.3, 5), rdp_subsampled_gaussian(0.1, 1.3, 9)
    additive = np.array_equal((a + b).rdp, a.rdp + b.rdp)
    amplified = all(
        np.all(rdp_per_step(q, s) <= rdp_per_step(1.0, s) + 1e-12)
        for q in np.linspace(0.01, 1.0, 10) for s in np.linspace(0.5, 5.0, 10)
    )
    dt = time.perf_counter() - t0
    ok = abs(sigma - 4.8447) <= 1e-3 and 5.30 <= eps <= 5.60 and additive and amplified and dt < 5
    report(ok, f"sigma={sigma:.5f} eps={eps:.4f} additive={additive} amplification={amplified} t={dt:.2f}s")


# -- 2 ----------------------------------------------------------------------

def _enumerate_p(a, b):
    ranks = {v: i + 1 for i, v in enumerate(sorted(np.r_[a, b]))}
    obs = sum(ranks[v] for v in a)
    sums = [sum(c) for c in itertools.combinations(range(1, len(a) + len(b) + 1), len(a))]
    return sum(s >= obs for s in sums) / len(sums)


def _fd_rel_err(seed):
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
    net = Mlp.init(sizes, rng, hidden=("tanh", "sigmoid")[seed % 2])
    x, t = rng.normal(size=(4, sizes[0])), rng.normal(size=(4, sizes[-1]))

    def loss(flat):
        net.set_flat(flat)
        return 0.5 * np.sum((net.forward(x) - t) ** 2)

    flat = net.get_flat()
    fd = np.array([(loss(flat + h) - loss(flat - h)) / 2e-5 for h in np.eye(flat.size) * 1e-5])
    net.set_flat(flat)
    g = np.concatenate([p.ravel() for p in net.gradient(x, net.forward(x) - t)])
    return np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8)


def test_2_oracle_equivalence(report):
    rng = np.random.default_rng(0)
    worst_p = 0.0
    for n_a in range(1, 10):
        for n_b in range(1, 11 - n_a):
            vals = rng.permutation(100)[: n_a + n_b].astype(float)
            worst_p = max(worst_p, abs(rank_test(vals[:n_a], vals[n_a:]) - _enumerate_p(vals[:n_a], vals[n_a:])))

    S, R = rng.normal(size=(200, 50)), rng.normal(size=(200, 50))
    brute = np.array([sorted(np.sqrt(((s - R) ** 2).sum(axis=1)))[:10] for s in S])
    knn_err = float(np.max(np.abs(knn_distances(S, R, 10) - brute) / brute))
    score_err = abs(knn_distance_score(S, R, 10) - brute.mean()) / brute.mean()

    fd = max(_fd_rel_err(s) for s in range(20))
    ok = worst_p <= 1e-12 and knn_err <= 1e-15 and score_err <= 1e-15 and fd < 1e-4
    report(ok, f"max|dp|={worst_p:.1e} knn rel={knn_err:.1e} score rel={score_err:.1e} mlp fd rel={fd:.1e}")


# -- 3 ----------------------------------------------------------------------

def test_3_infinite_epsilon_fidelity(report):
    t0 = time.perf_counter()
    table, _ = planted()

    pgm = StarPGM(random_state=0).fit_table(table)
    codes, ys = pgm.sample_discrete(100_000, random_state=1)
    data = np.column_stack([codes, ys])
    tv = max(
        0.5 * np.abs(measure(data, m.clique, pgm.measurement_set_.domain).probs - m.probs).sum()
        for m in pgm.marginals_
    )

    ps = PrivSyn(random_state=0).fit_table(table)
    ps.sample_discrete(table.n, random_state=1)
    l1 = ps.last_state_.mean_l1

    rg = RonGauss(random_state=0).fit_table(table)
    cov_err = 0.0
    for c in range(rg.n_classes_):
        Z = rg.sample_class(c, 100_000, random_state=c, projected=True)
        S = rg.covariances_[c]
        cov_err = max(cov_err, np.linalg.norm(np.cov(Z.T) - S) / np.linalg.norm(S))
    dt = time.perf_counter() - t0
    ok = tv <= 0.02 and l1 <= 0.05 and cov_err <= 0.05 and dt < 180
    report(ok, f"pgm max TV={tv:.4f} privsyn mean L1={l1:.4f} rongauss max cov err={cov_err:.4f} t={dt:.1f}s")


# -- 4 ----------------------------------------------------------------------

def test_4_metric_identities(report):
    table, _ = planted()
    ov = overlap_score(table, table, bin_counts=(2, 5, 10, 25, 50, 100, 1000))
    ov_ok = all(v == 1.0 for v in ov.values())
    knn0 = knn_distance_score(table.features, table.features, k=1)
    de = de_genes(table)
    tpr_fpr = de_tpr_fpr(de, de)
    net = build_network(table, 0.7)
    nets = compare_networks(net, net)
    E = len(net.edge_set)
    ok = ov_ok and knn0 == 0.0 and tpr_fpr == (1.0, 0.0) and nets == (E, 0, E)
    report(ok, f"overlap all 1={ov_ok} knn={knn0} tpr/fpr={tpr_fpr} networks={nets} |E|={E}")


# -- 5 ----------------------------------------------------------------------

def planted_truth(spec):
    """DE sets implied by the planted shifts alone (no sampling noise)."""
    from dpsynth.metrics.bio import DeResult

    C = len(spec.n_per_class)
    shift = np.zeros((C, spec.d))
    for s in spec.de_genes:
        shift[s.cls, s.gene] += s.shift
    for m in spec.modules:
        for c, v in m.class_shifts.items():
            shift[c, list(m.genes)] += v
    up, down = {}, {}
    for a, b in itertools.combinations(range(C), 2):
        diff = shift[a] - shift[b]
        up[a, b] = frozenset(np.flatnonzero(diff > 0).tolist())
        down[a, b] = frozenset(np.flatnonzero(diff < 0).tolist())
    return DeResult(up, down, spec.d)


def test_5_planted_end_to_end(report):
    t0 = time.perf_counter()
    spec = default_planted_spec()
    real, ann = generate_planted(spec, 0)
    redraw, _ = generate_planted(spec, 1)
    tpr, fpr = de_tpr_fpr(de_genes(real), de_genes(redraw))

    real_net, redraw_net = build_network(real, 0.7), build_network(redraw, 0.7)
    agreement = module_agreement(detect_modules(redraw_net), ann.modules)
    within = {e for e in real_net.edge_set if any(e[0] in m and e[1] in m for m in ann.modules)}
    recall = len(within & redraw_net.edge_set) / len(within)
    dt = time.perf_counter() - t0
    # diagnostic only: the same redraw scored against the planted truth
    truth_tpr, truth_fpr = de_tpr_fpr(planted_truth(spec), de_genes(redraw))
    ok = tpr >= 0.95 and fpr <= 0.08 and agreement >= 0.9 and recall >= 0.95 and dt < 120
    report(
        ok,
        f"tpr={tpr:.3f} fpr={fpr:.3f} module agreement={agreement:.3f} edge recall={recall:.3f} t={dt:.1f}s"
        f" | vs planted truth: tpr={truth_tpr:.3f} fpr={truth_fpr:.3f}",
    )


# -- 6 ----------------------------------------------------------------------

def test_6_qualitative_findings(report):
    table, _ = planted()
    parts = split(table, 0.2, 0)
    tr, te = parts.train, parts.test
    real_de = de_genes(tr)
    memorized_auc = blackbox_attack(tr.features, tr, te).auc

    # (model, eps) pairs each comparison needs
    needed = {(m, e) for m in GENERATORS for e in (5.0, math.inf)} | {("pgm", 100.0), ("vae", 100.0)}
    fails = dict.fromkeys(
        ["overlap pgm", "overlap vae"] + [f"de-tpr {m}" for m in GENERATORS] + ["mia memorize", "mia vae@100"], 0
    )
    seeds = range(10)
    for seed in seeds:
        res = {}
        for name, eps in sorted(needed, key=str):
            model = GENERATORS[name](epsilon=eps, random_state=seed).fit_table(tr)
            s = model.sample_table(tr.n, random_state=seed + 1000, like=tr)
            res[name, eps] = dict(
                ov=overlap_score(tr, s)["mean"],
                tpr=de_tpr_fpr(real_de, de_genes(s, n_classes=tr.n_classes))[0],
                mia=blackbox_attack(s, tr, te).auc if (name, eps) == ("vae", 100.0) else None,
            )
        for m in ("pgm", "vae"):
            fails[f"overlap {m}"] += not res[m, 100.0]["ov"] > res[m, 5.0]["ov"]
        for m in GENERATORS:
            fails[f"de-tpr {m}"] += not res[m, 5.0]["tpr"] < res[m, math.inf]["tpr"]
        fails["mia memorize"] += not memorized_auc >= 0.95
        fails["mia vae@100"] += not res["vae", 100.0]["mia"] <= 0.60
    ok = all(v <= 1 for v in fails.values())
    report(ok, f"failures out of {len(seeds)}: " + json.dumps(fails))


# -- 7 and 8 ----------------------------------------------------------------

def test_7_determinism_and_budget(report, tmp_path):
    params = {"vae": {"steps": 200}, "gan": {"steps": 200}}
    cfg = ExperimentConfig.from_dict({"split_seeds": [0], "gen_seeds": [0], "model_params": params})
    run(cfg, tmp_path / "a", trace_path=tmp_path / "ta.json")
    run(cfg, tmp_path / "b", threads=2, trace_path=tmp_path / "tb.json")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("report.json", "report.csv"))
    cells = json.loads((tmp_path / "a" / "report.json").read_text())["cells"]
    within = all(c["status"] == "ok" and (c["epsilon"] == "inf" or c["epsilon_spent"] <= float(c["epsilon"])) for c in cells)
    report(same and within, f"byte-identical={same} budget respected in all {len(cells)} cells={within}")


def test_8_full_grid_runtime(report, tmp_path):
    cfg = ExperimentConfig()
    t0 = time.perf_counter()
    code = run(cfg, tmp_path, threads=4)
    dt = time.perf_counter() - t0
    cells = json.loads((tmp_path / "report.json").read_text())["cells"]
    within = all(c["epsilon"] == "inf" or c["epsilon_spent"] <= float(c["epsilon"]) for c in cells)
    ok = code == 0 and len(cells) == 120 and within and dt < 1200
    report(ok, f"{len(cells)} cells exit={code} budget ok={within} wall={dt / 60:.1f} min on 4 workers")
