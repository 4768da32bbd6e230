"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py`` or
``python3 tests/test_acceptance.py``.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from oracles import chain_frf
from shm_locate import mlp
from shm_locate.features import GAConfig, ga_select, pca_fit, pca_project
from shm_locate.novelty import fit_baseline, msd
from shm_locate.pipeline import (
    ConfusionMatrix,
    composite_accuracy,
    run_experiment,
    train_classifier,
    train_output_layer,
    xy,
)
from shm_locate.signals import SpectralWindow, transmissibility
from shm_locate.synthdata import (
    UNDAMAGED,
    ChainModel,
    build_wing_model,
    frf_matrix,
    make_layout,
    simulate_measurement,
)

REF_MONOLITHIC = [[65, 0, 0, 0, 0, 0, 0, 0, 1],
                  [0, 65, 0, 1, 0, 0, 0, 0, 0],
                  [1, 0, 62, 0, 0, 1, 0, 1, 1],
                  [0, 0, 0, 66, 0, 0, 0, 0, 0],
                  [0, 0, 0, 0, 66, 0, 0, 0, 0],
                  [0, 3, 0, 0, 0, 62, 0, 1, 0],
                  [0, 0, 0, 0, 0, 0, 66, 0, 0],
                  [1, 0, 0, 0, 0, 0, 0, 65, 0],
                  [0, 0, 0, 0, 0, 0, 0, 0, 66]]
REF_LARGE = [[65, 1, 0, 0, 0, 0, 0],
             [0, 63, 1, 0, 0, 0, 2],
             [1, 0, 65, 0, 0, 0, 0],
             [0, 0, 0, 66, 0, 0, 0],
             [0, 0, 0, 0, 66, 0, 0],
             [1, 0, 0, 0, 0, 65, 0],
             [1, 0, 0, 0, 0, 0, 65]]
REF_SMALL = [[66, 0], [0, 66]]

SEEDS = range(10)


def verdict(capsys, number, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} "
              f"({elapsed:.2f}s, budget {budget:g}s)")
    assert ok, detail


# ---------------------------------------------------------------- 1

def test_criterion_01_composite_arithmetic(capsys):
    t0 = time.perf_counter()
    large = ConfusionMatrix([1, 2, 4, 5, 7, 8, 9], np.array(REF_LARGE))
    small = ConfusionMatrix([3, 6], np.array(REF_SMALL))
    mono = ConfusionMatrix(list(range(1, 10)), np.array(REF_MONOLITHIC))
    split = 100 * composite_accuracy([large, small])
    single = 100 * composite_accuracy([mono])
    # reference percentages are truncated to two decimals
    ok = (abs(split - 100 * 587 / 594) < 0.005 and abs(single - 100 * 583 / 594) < 0.005
          and abs(split - 98.82) < 0.005
          and mono.percent() == "98.14" and mono.correct == 583 and mono.total == 594)
    verdict(capsys, 1, ok,
            f"split {split:.4f}% (587/594), monolithic {single:.4f}% (583/594, shown {mono.percent()}%)",
            time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- 2

def _numeric(model, X, Y, step=1e-5):
    out = {}
    for name in model.trainable():
        p = getattr(model, name)
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + step
            up = mlp.loss(mlp.forward(model, X), Y)
            p[idx] = keep - step
            down = mlp.loss(mlp.forward(model, X), Y)
            p[idx] = keep
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def test_criterion_02_gradient_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    fixed = [(9, 10, 9), (9, 9, 7), (2, 3, 2)]
    worst = 0.0
    for draw in range(100):
        dims = fixed[draw] if draw < len(fixed) else tuple(int(v) for v in rng.integers(2, 11, 3))
        n = int(rng.integers(1, 9))
        model = mlp.init_random(*dims, 0.5, rng)
        X = rng.uniform(-1, 1, (n, dims[0]))
        Y = mlp.one_hot(rng.integers(0, dims[2], n), dims[2])
        ga, gn = mlp.grad(model, X, Y), _numeric(model, X, Y)
        for k in ga:
            scale = max(np.linalg.norm(ga[k]), np.linalg.norm(gn[k]), 1e-300)
            worst = max(worst, np.linalg.norm(ga[k] - gn[k]) / scale)
    verdict(capsys, 2, worst < 1e-6, f"max relative gradient error {worst:.2e} over 100 draws",
            time.perf_counter() - t0, 10)


# ---------------------------------------------------------------- 3

def test_criterion_03_msd_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_oracle = worst_affine = worst_mean = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 9))
        X = rng.normal(size=(15 * d, d)) @ rng.normal(size=(d, d)) + rng.normal(size=d)
        b = fit_baseline(X, SpectralWindow(0, 0, d), ridge=1e-8)
        x = b.mean + 2 * rng.normal(size=d) * np.sqrt(np.diag(b.covariance))
        diff = x - b.mean
        ref = diff @ np.linalg.solve(b.covariance, diff)
        worst_oracle = max(worst_oracle, abs(msd(b, x) - ref) / ref)
        worst_mean = max(worst_mean, msd(b, b.mean))
        A = rng.normal(size=(d, d)) + 3 * np.eye(d)
        shift = rng.normal(size=d)
        plain = msd(fit_baseline(X, SpectralWindow(0, 0, d), ridge=0.0), x)
        moved = msd(fit_baseline(X @ A.T + shift, SpectralWindow(0, 0, d), ridge=0.0), A @ x + shift)
        worst_affine = max(worst_affine, abs(moved - plain) / plain)
    ok = worst_oracle < 1e-8 and worst_mean == 0.0 and worst_affine < 1e-6
    verdict(capsys, 3, ok,
            f"oracle rel {worst_oracle:.1e}, msd(mean) {worst_mean}, affine rel {worst_affine:.1e}",
            time.perf_counter() - t0, 5)


# ---------------------------------------------------------------- 4

def test_criterion_04_transmissibility_identities(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    model = build_wing_model()
    self_pairs = make_layout(pairs=tuple((i, i) for i in range(model.n_dof)))
    unity = simulate_measurement(model, UNDAMAGED, self_pairs, 0.0, rng).magnitudes
    exact_one = bool(np.all(unity == 1.0))
    chain = scale = 0.0
    for _ in range(50):
        a, b, c = (rng.normal(size=256) + 1j * rng.normal(size=256) for _ in range(3))
        lhs = transmissibility(a, b) * transmissibility(b, c)
        chain = max(chain, np.max(np.abs(lhs / transmissibility(a, c) - 1)))
        z = 10 ** rng.uniform(-3, 3) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        scaled = transmissibility(z * a, z * b)
        scale = max(scale, np.max(np.abs(scaled / transmissibility(a, b) - 1)))
    ok = exact_one and chain < 1e-12 and scale <= 1e-15
    verdict(capsys, 4, ok, f"T_ii==1 {exact_one}, chain rel {chain:.1e}, scale rel {scale:.1e}",
            time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- 5

def test_criterion_05_frf_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    masses, springs = rng.uniform(0.5, 2, 3), rng.uniform(1e3, 1e4, 4)
    model = ChainModel(masses, springs, 0.5, 1e-6)
    layout = make_layout(pairs=(), excitation_dof=0, f_lo=0.5, f_hi=30.0, n_lines=64)
    H = frf_matrix(model, UNDAMAGED, layout)
    ref = np.array(chain_frf(masses, springs, 0.5, 1e-6, 0, layout.freq_grid))
    worst = float(np.max(np.abs(H - ref) / np.abs(ref)))
    verdict(capsys, 5, worst < 1e-10, f"max relative FRF deviation {worst:.1e}",
            time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- 6

def test_criterion_06_pca_properties(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100, 6)) @ rng.normal(size=(6, 6))
    m = pca_fit(X, 6)
    ortho = float(np.max(np.abs(m.components @ m.components.T - np.eye(6))))
    recon = float(np.max(np.abs(pca_project(m, X) @ m.components + m.mean - X)))
    eig = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1]
    eig_rel = float(np.max(np.abs(m.explained_variance - eig) / eig))
    ok = ortho < 1e-10 and recon < 1e-8 and eig_rel < 1e-8
    verdict(capsys, 6, ok, f"orthonormality {ortho:.1e}, reconstruction {recon:.1e}, "
            f"eigenvalue rel {eig_rel:.1e}", time.perf_counter() - t0, 2)


# ---------------------------------------------------------------- 7, 8, 9

@pytest.fixture(scope="module")
def seed_runs():
    t0 = time.perf_counter()
    runs = [run_experiment(seed_override=s) for s in SEEDS]
    return runs, time.perf_counter() - t0


def test_criterion_07_split_benefit(capsys, seed_runs):
    runs, elapsed = seed_runs
    comp = np.median([r.composite_split_accuracy for r in runs])
    mono = np.median([r.arms["monolithic"].confusion.accuracy for r in runs])
    sub = np.median([r.arms["split_small"].confusion.accuracy for r in runs])
    mono_sub = np.median([r.monolithic_small_accuracy for r in runs])
    ok = comp >= mono and sub >= mono_sub
    verdict(capsys, 7, ok,
            f"median composite {comp:.4f} vs monolithic {mono:.4f}; "
            f"{{3,6}} sub-classifier {sub:.4f} vs monolithic on {{3,6}} {mono_sub:.4f}",
            elapsed, 300)


def _stage_config(report, arm):
    cfg = dict(report.manifest["config"]["train"][arm])
    cfg["seed"] = report.manifest["seeds"][f"train_{arm}"]
    return mlp.TrainConfig(**cfg)


def test_criterion_08_transfer_convergence(capsys, seed_runs):
    runs, _ = seed_runs
    t0 = time.perf_counter()
    transfer, scratch, frozen, replay = [], [], True, True
    for r in runs:
        source = r.arms["split_large"].classifier.model
        scaled = r.datasets["split_small"]
        cfg = _stage_config(r, "transfer_small")
        start = mlp.freeze_transfer(source, 2, cfg.init_std, np.random.default_rng(cfg.seed))
        digest = (start.W1.tobytes(), start.b1.tobytes())
        model, hist = train_output_layer(start, scaled, [3, 6], cfg)
        frozen &= digest == (model.W1.tobytes(), model.b1.tobytes())
        frozen &= np.array_equal(model.W1, source.W1) and np.array_equal(model.b1, source.b1)
        transfer.append(hist.val_loss[9])

        cfg = _stage_config(r, "scratch_small")
        start = mlp.linear_softmax(source.dims[0], 2, cfg.init_std, np.random.default_rng(cfg.seed))
        _, control = train_output_layer(start, scaled, [3, 6], cfg)
        scratch.append(control.val_loss[9])
        replay &= (hist.val_loss == r.arms["transfer_small"].history.val_loss
                   and control.val_loss == r.arms["scratch_small"].history.val_loss)
    t, c = np.median(transfer), np.median(scratch)
    verdict(capsys, 8, t <= c and frozen and replay,
            f"median epoch-10 validation loss transfer {t:.4f} vs scratch {c:.4f}; "
            f"frozen layer bit-identical in all runs: {frozen}; matches experiment: {replay}",
            time.perf_counter() - t0, 120)


def test_criterion_09_early_stopping(capsys, seed_runs):
    runs, _ = seed_runs
    t0 = time.perf_counter()
    stopped, best_ok, replay, epochs = 0, True, True, []
    for r in runs:
        small = r.datasets["selected"].rows(np.isin(r.datasets["selected"].y, [3, 6]))
        cfg = _stage_config(r, "split_small")
        assert cfg.early_stop_rel == 1e-3 and cfg.early_stop_patience == 5
        assert cfg.max_epochs == 1000
        clf, hist, scaled = train_classifier(small, [3, 6], [9], cfg)
        stopped += hist.stopped_epoch < cfg.max_epochs
        epochs.append(hist.stopped_epoch)
        Xv, Yv = xy(scaled, [3, 6], "validation")
        returned = mlp.loss(mlp.forward(clf.model, Xv), Yv)
        best_ok &= (hist.best_epoch == int(np.argmin(hist.val_loss)) + 1
                    and returned == hist.val_loss[hist.best_epoch - 1])
        replay &= hist.val_loss == r.arms["split_small"].history.val_loss
    verdict(capsys, 9, stopped >= 9 and best_ok and replay,
            f"halted early in {stopped}/10 seeds (epochs {epochs}); best-epoch weights returned: "
            f"{best_ok}; matches experiment: {replay}", time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- 10

def test_criterion_10_ga_planted_recovery(capsys):
    t0 = time.perf_counter()
    hits = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cols = np.sort(rng.choice(60, 9, replace=False))

        def draw():
            y = np.repeat(np.arange(9), 60)
            X = rng.normal(size=(len(y), 60))
            X[:, cols] += np.eye(9)[y] * 3.0
            return X, y

        (Xt, yt), (Xv, yv) = draw(), draw()
        chosen = ga_select(Xt, yt, Xv, yv, GAConfig(seed=seed))
        hits.append(len(set(chosen) & set(cols.tolist())))
    med = float(np.median(hits))
    verdict(capsys, 10, med >= 8, f"planted columns recovered per seed {hits}, median {med:g}",
            time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- 11

def test_criterion_11_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "shm_locate", "experiment", "--quiet",
                        "--out", str(tmp_path / name)], check=True)
    names = sorted(p.name for p in (tmp_path / "a").iterdir()
                   if p.name == "report.json" or p.suffix == ".csv")
    same = [((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()) for n in names]
    verdict(capsys, 11, all(same) and len(names) == 10,
            f"{sum(same)}/{len(names)} files byte-identical across two runs",
            time.perf_counter() - t0, 300)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
