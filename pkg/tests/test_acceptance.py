"""Acceptance checks. Each test prints one PASS/FAIL line before asserting."""

import math
import random
import time

import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import adjusted_rand_score

from imagemood import imagefeat as F
from imagemood import mtlearn as M
from imagemood import stats as S
from imagemood import tagcluster as T
from imagemood.pipeline import load_config, runner, synth

from conftest import write_config
from oracles import (block_matrix, brute_npmi, fista_reference, objective, random_corpus,
                     shared_support_tasks)
from test_stats import bh_enumerate, closed_form_partial

pytestmark = pytest.mark.acceptance


def report(capsys, n, ok, detail, elapsed, limit=None):
    timing = "%.1fs" % elapsed + ("" if limit is None else " (limit %ds)" % limit)
    with capsys.disabled():
        print("\nCRITERION %d %s: %s [%s]" % (n, "PASS" if ok else "FAIL", detail, timing))


# --- 1. formula exactness ------------------------------------------------------------------

def hsv_patch(h_deg, s, v):
    """RGB triple for one (h, s, v), by the hexcone sector formulas."""
    c = v * s
    hp = h_deg / 60.0
    x = c * (1 - abs(hp % 2 - 1))
    r, g, b = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][int(hp) % 6]
    m = v - c
    return (r + m, g + m, b + m)


def planted_image(patches):
    """Image made of ``(h, s, v, n_pixels)`` patches laid out in one row."""
    px = [hsv_patch(h, s, v) for h, s, v, n in patches for _ in range(n)]
    return np.array(px, dtype=float).reshape(1, -1, 3)


def expected(patches):
    total = sum(n for *_, n in patches)
    vmean = sum(v * n for _, _, v, n in patches) / total
    smean = sum(s * n for _, s, _, n in patches) / total
    acc = [(h, n) for h, s, v, n in patches if 0.15 <= v <= 0.95 and s > 0.2]
    gray = not acc
    if gray:
        return dict(gray=True, v=vmean, s=smean)
    n_acc = sum(n for _, n in acc)
    warm = sum(n for h, n in acc if h >= 285 or h <= 75)
    cold = sum(n for h, n in acc if 105 <= h <= 255)
    bins = [0] * 20
    for h, n in acc:
        bins[int(h // 18)] += n
    count = sum(1 for b in bins if b >= 0.05 * max(bins))
    return dict(gray=False, v=vmean, s=smean, warm=warm / n_acc, cold=cold / n_acc, count=count)


def criterion1_images(rng):
    cases = [
        [(9, 0.5, 0.5, 10)],                                   # one bin
        [(9, 0.5, 0.5, 10), (189, 0.8, 0.7, 10)],              # warm + cold
        [(9, 0.5, 0.5, 100), (63, 0.5, 0.5, 4)],               # 4% bin below threshold
        [(9, 0.5, 0.5, 100), (63, 0.5, 0.5, 5)],               # exactly 5% counts
        [(90, 0.6, 0.6, 8)],                                   # neither warm nor cold
        [(0, 0.0, 0.5, 16)],                                   # achromatic
        [(30, 0.9, 0.97, 16)],                                 # too bright
        [(30, 0.9, 0.1, 16)],                                  # too dark
        [(30, 0.2, 0.625, 16)],                                # S exactly 0.2 is not accurate
        [(30, 0.5, 0.15, 3), (200, 0.0, 0.5, 5)],              # V exactly 0.15 is accurate
        [(30, 0.5, 0.95, 3)],                                  # V exactly 0.95 is accurate
        [(285, 0.5, 0.5, 2), (75, 0.5, 0.5, 3), (105, 0.5, 0.5, 4), (255, 0.5, 0.5, 5)],  # range ends
    ]
    while len(cases) < 24:
        k = int(rng.integers(1, 6))
        cases.append([(18 * int(rng.integers(0, 20)) + 9, float(rng.choice([0.1, 0.3, 0.6, 0.9])),
                       float(rng.choice([0.1, 0.4, 0.8, 0.98])), int(rng.integers(1, 20)))
                      for _ in range(k)])
    return cases


def test_criterion_1_formula_exactness(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    cases = criterion1_images(rng)
    for i, patches in enumerate(cases):
        img = planted_image(patches)
        want = expected(patches)
        got = F.extract_color_features(img)
        if F.is_grayscale(img) != want["gray"] or got.is_grayscale != want["gray"]:
            failures.append("image %d grayscale" % i)
            continue
        p, a, d = F.affect_scores(want["v"], want["s"])
        for value, ref in ((p, 0.69 * want["v"] + 0.22 * want["s"]),
                           (a, -0.31 * want["v"] + 0.60 * want["s"]),
                           (d, -0.76 * want["v"] + 0.32 * want["s"])):
            if abs(value - ref) > 1e-9:
                failures.append("image %d affect" % i)
        if want["gray"]:
            continue
        if abs(got.brightness_mean - want["v"]) > 1e-9 or abs(got.saturation_mean - want["s"]) > 1e-9:
            failures.append("image %d means" % i)
        if abs(got.pleasure - (0.69 * want["v"] + 0.22 * want["s"])) > 1e-9:
            failures.append("image %d pleasure" % i)
        if got.warm_fraction != want["warm"] or got.cold_fraction != want["cold"]:
            failures.append("image %d warm/cold %s vs %s" % (i, (got.warm_fraction, got.cold_fraction),
                                                            (want["warm"], want["cold"])))
        if got.hue_count != want["count"] or got.hue_count_log != math.log(want["count"]):
            failures.append("image %d hue_count %s vs %s" % (i, got.hue_count, want["count"]))
    elapsed = time.perf_counter() - start
    ok = not failures and len(cases) >= 20 and elapsed < 5
    report(capsys, 1, ok, "%d images, %d mismatches %s" % (len(cases), len(failures), failures[:3]),
           elapsed, 5)
    assert ok


# --- 2. NPMI oracle ------------------------------------------------------------------------

def test_criterion_2_npmi_oracle(capsys):
    start = time.perf_counter()
    rng = random.Random(11)
    worst = 0.0
    for _ in range(100):
        bags = random_corpus(rng, n_tags=12, n_bags=40)
        vocab = T.build_vocab(bags, 1)
        sim = T.npmi_matrix(bags, vocab)
        ref = brute_npmi(bags, vocab)
        for i, x in enumerate(vocab):
            for j, y in enumerate(vocab):
                worst = max(worst, abs(sim.values[i, j] - ref[x, y]))
    always = T.npmi_matrix([{"x", "y"}, {"x", "y"}, {"z"}, {"w"}], ["x", "y"]).values[0, 1]
    indep = T.npmi_matrix([{"x", "y"}, {"x"}, {"y"}, set()], ["x", "y"]).values[0, 1]
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and always == 1.0 and indep == 0.0 and elapsed < 10
    report(capsys, 2, ok, "max |diff| %.2e over 100 corpora; always-co-occur %r, independent %r"
           % (worst, float(always), float(indep)), elapsed, 10)
    assert ok


# --- 3. spectral recovery -------------------------------------------------------------------

def test_criterion_3_spectral_recovery(capsys):
    start = time.perf_counter()
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        sizes = list(rng.integers(5, 16, 4))
        W, truth = block_matrix(sizes, rng, within=(0.3, 1.0), across=(0.0, 0.15))
        model = T.spectral_cluster(W, k=4, seed=seed)
        hits += adjusted_rand_score(truth, model.assignment) == 1.0
    elapsed = time.perf_counter() - start
    ok = hits >= 95 and elapsed < 30
    report(capsys, 3, ok, "ARI = 1 in %d/100 planted 4-block runs (n <= 60)" % hits, elapsed, 30)
    assert ok


# --- 4. solver correctness ------------------------------------------------------------------

def test_criterion_4_solver_correctness(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    kkt_worst = 0.0
    for i in range(100):
        n, p = int(rng.integers(20, 80)), int(rng.integers(2, 30))
        X = rng.normal(size=(n, p))
        y = X @ (rng.normal(size=p) * (rng.random(p) < 0.4)) + rng.normal(size=n)
        alpha, rho = float(10 ** rng.uniform(-3, 0)), float(rng.choice([0.1, 0.5, 0.9, 1.0]))
        model = M.elasticnet_fit(X, y, alpha, rho)
        kkt_worst = max(kkt_worst, model.kkt)
        Xs = (X - X.mean(0)) / X.std(0)
        ys = (y - y.mean()) / y.std()
        kkt_worst = max(kkt_worst, M.kkt_residual(Xs, ys[:, None], model.coef, alpha, rho, group=False))

    X = rng.normal(size=(50, 6))
    y = X @ rng.normal(size=6) + 1.5 + 0.1 * rng.normal(size=50)
    B, b0 = M.elasticnet_fit(X, y, 0.0, 0.5, tol=1e-12).raw_coef()
    ref = np.linalg.lstsq(np.column_stack([np.ones(50), X]), y, rcond=None)[0]
    ls_rel = np.max(np.abs(np.r_[b0, B[:, 0]] - ref)) / np.max(np.abs(ref))

    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    Xo, yo = 2 * Q, rng.normal(size=4)
    ortho = 0.0
    for alpha, rho in [(0.1, 0.5), (0.3, 0.9), (0.05, 0.1)]:
        W, _, _ = M.solve(Xo, yo, alpha, rho, tol=1e-12, group=False)
        z = Xo.T @ yo / 4
        want = np.sign(z) * np.maximum(np.abs(z) - alpha * rho, 0) / (1 + alpha * (1 - rho))
        ortho = max(ortho, np.max(np.abs(W[:, 0] - want)))

    degen = 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        X = r.normal(size=(40, 8))
        y = X @ r.normal(size=8) + r.normal(size=40)
        a = M.elasticnet_fit(X, y, 0.05, 0.5).coef
        b = M.multitask_fit(X, y, 0.05, 0.5).coef
        degen = max(degen, np.max(np.abs(a - b)))

    Xm, Ym, _ = shared_support_tasks(1, n=60, p=10)
    Xm = (Xm - Xm.mean(0)) / Xm.std(0)
    Ym = (Ym - Ym.mean(0)) / Ym.std(0)
    W, _, _ = M.solve(Xm, Ym, 0.1, 0.7, tol=1e-10, group=True)
    obj_gap = abs(objective(Xm, Ym, W, 0.1, 0.7) - objective(Xm, Ym, fista_reference(Xm, Ym, 0.1, 0.7), 0.1, 0.7))

    elapsed = time.perf_counter() - start
    ok = (kkt_worst <= 1e-5 and ls_rel <= 1e-6 and ortho <= 1e-9 and degen <= 1e-9 and obj_gap <= 1e-8
          and elapsed < 60)
    report(capsys, 4, ok, "KKT %.1e, LS rel %.1e, orthonormal %.1e, single-task %.1e, objective gap %.1e"
           % (kkt_worst, ls_rel, ortho, degen, obj_gap), elapsed, 60)
    assert ok


# --- 5. statistics oracles ------------------------------------------------------------------

def test_criterion_5_statistics_oracles(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    partial_worst = 0.0
    for _ in range(100):
        n = int(rng.integers(6, 200))
        z = rng.normal(size=n)
        x = rng.normal() * z + rng.normal(size=n)
        y = rng.normal() * z + 0.5 * x + rng.normal(size=n)
        partial_worst = max(partial_worst, abs(S.partial_corr(x, y, z)[0] - closed_form_partial(x, y, z)))

    bh_mismatch = 0
    for _ in range(1000):
        m = int(rng.integers(1, 11))
        p = list(np.round(rng.random(m) ** 3, int(rng.integers(2, 5))))
        q = float(rng.choice([0.01, 0.05, 0.1, 0.2]))
        adj, sig = S.bh_correct(p, q)
        ref_adj, ref_sig = bh_enumerate(p, q)
        bh_mismatch += list(sig) != ref_sig or not np.allclose(adj, ref_adj, rtol=0, atol=1e-15)

    fdr = {}
    for q in (0.01, 0.05):
        props = []
        for rep in range(1000):
            r = np.random.default_rng(10_000 + rep)
            n, m = 40, 10
            Z = r.normal(size=(n, 2))
            y = r.normal(size=n)
            pvals = [S.partial_corr(r.normal(size=n), y, Z)[1] for _ in range(m)]
            _, sig = S.bh_correct(pvals, q)
            props.append(sig.sum() / max(sig.sum(), 1))  # every rejection is false under the null
        fdr[q] = float(np.mean(props))
    fdr_ok = all(fdr[q] <= q + 3 * math.sqrt(q / 1000) for q in fdr)

    elapsed = time.perf_counter() - start
    ok = partial_worst <= 1e-9 and bh_mismatch == 0 and fdr_ok and elapsed < 30
    report(capsys, 5, ok, "partial r max diff %.1e; BH mismatches %d/1000; null FDR %s"
           % (partial_worst, bh_mismatch, {q: round(v, 4) for q, v in fdr.items()}), elapsed, 30)
    assert ok


# --- 6. end-to-end synthetic recovery ---------------------------------------------------------

def test_criterion_6_end_to_end_recovery(capsys, tmp_path):
    start = time.perf_counter()
    rs, sig, null_flagged = [], [], 0
    for seed in range(20):
        root = tmp_path / ("run%02d" % seed)
        synth.generate(str(root), n_users=200, n_images=25, target_r=0.40, seed=seed)
        cfg = load_config(write_config(root, seed=seed))
        ds = runner.run_ingest(cfg)
        runner.run_extract(cfg, ds)
        dep = runner.run_correlate(cfg, ds)["depression"].set_index("feature")
        rs.append(float(dep.at["grayscale_fraction", "r"]))
        sig.append(bool(dep.at["grayscale_fraction", "significant"]))
        null_flagged += bool(dep.at["aux_null_feature", "significant"])
    elapsed = time.perf_counter() - start
    within = sum(abs(r - 0.40) <= 0.07 for r in rs)
    ok = within == 20 and all(sig) and null_flagged <= 1 and elapsed < 300
    report(capsys, 6, ok, "grayscale partial r in [%.3f, %.3f], %d/20 within 0.40 +- 0.07, %d/20 significant; "
           "null feature flagged in %d/20" % (min(rs), max(rs), within, sum(sig), null_flagged), elapsed, 300)
    assert ok


# --- 7. CV protocol -----------------------------------------------------------------------------

def test_criterion_7_cv_protocol(capsys):
    start = time.perf_counter()
    signal, null = [], []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(300, 20))
        f = X @ rng.normal(size=20)
        y = 3 * f / f.std() + rng.normal(size=300)
        groups = np.arange(300) // 2  # two rows per user
        rep = M.cross_validate(X, y, groups=groups, seed=seed)
        rep.check_disjoint()
        signal.append((rep.mean_r("y0"), rep.mean_mse("y0")))
        rep = M.cross_validate(X, rng.normal(size=300), groups=groups, seed=seed)
        rep.check_disjoint()
        null.append((rep.mean_r("y0"), rep.mean_mse("y0")))
    elapsed = time.perf_counter() - start
    ok = (all(r >= 0.8 and m < 0.5 for r, m in signal)
          and all(abs(r) < 0.15 and 0.9 <= m <= 1.1 for r, m in null))
    report(capsys, 7, ok, "signal r %s mse %s; null r %s mse %s; folds user-disjoint"
           % ([round(r, 3) for r, _ in signal], [round(m, 3) for _, m in signal],
              [round(r, 3) for r, _ in null], [round(m, 3) for _, m in null]), elapsed)
    assert ok


# --- 8. MT versus ST ------------------------------------------------------------------------------

def test_criterion_8_multitask_direction(capsys):
    start = time.perf_counter()
    kw = dict(k=10, tasks=["depression", "anxiety", "age", "gender"], report_tasks=["depression", "anxiety"])
    mt_r, st_r = [], []
    for seed in range(50):
        X, Y, _ = shared_support_tasks(seed)
        mt = M.cross_validate(X, Y, mode="multi", seed=seed, **kw)
        st_ = M.cross_validate(X, Y, mode="single", seed=seed, **kw)
        mt.check_disjoint()
        mt_r.append(np.mean([mt.mean_r(t) for t in kw["report_tasks"]]))
        st_r.append(np.mean([st_.mean_r(t) for t in kw["report_tasks"]]))
    mt_r, st_r = np.array(mt_r), np.array(st_r)
    wins = int(np.sum(mt_r > st_r))
    elapsed = time.perf_counter() - start
    ok = mt_r.mean() >= st_r.mean() - 0.02 and wins >= 30
    report(capsys, 8, ok, "mean r MT %.4f vs ST %.4f; MT ahead in %d/50 replicates"
           % (mt_r.mean(), st_r.mean(), wins), elapsed)
    assert ok
