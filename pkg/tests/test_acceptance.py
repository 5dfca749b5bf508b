"""Acceptance criteria, one test each. Every test records a PASS/FAIL line in the summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from drpl import bmm, metrics, nn, noise, pipeline
from drpl.dataset import Dataset
from drpl.experiment import ExperimentSpec, SyntheticSpec, prepare, run_experiment
from drpl.pipeline import MODES, RunConfig

SEEDS = (0, 1, 2)
# criterion-4 setup: 4 classes x 500, dims 16, separation 6
BLOBS = SyntheticSpec(classes=4, per_class=500, dims=16, separation=6.0, test_per_class=250)
PROBE_BLOBS = SyntheticSpec(classes=4, per_class=500, dims=16, separation=6.0, test_per_class=250,
                            probe_classes=4)


def spec_for(mode, kind, rate, seed, synthetic=BLOBS):
    return ExperimentSpec(config=RunConfig(mode=mode, seed=seed), synthetic=synthetic, noise=kind, rate=rate)


@lru_cache(maxsize=None)
def outcome(mode, kind, rate, seed, synthetic=BLOBS):
    prep = prepare(spec_for(mode, kind, rate, seed, synthetic))
    start = time.perf_counter()
    report, model = pipeline.execute(prep.train, RunConfig(mode=mode, seed=seed), prep.test,
                                     transition=prep.transition)
    return report, model, prep, time.perf_counter() - start


def test_criterion_01_bmm_recovery(criterion):
    rng = np.random.default_rng(0)
    comp = rng.random(5000) < 0.5
    x = np.where(comp, rng.beta(2, 8, 5000), rng.beta(8, 2, 5000))
    start = time.perf_counter()
    m = bmm.fit(x, iters=10)
    elapsed = time.perf_counter() - start
    means, weights = m.means, m.weights
    ok = (abs(means[0] - 0.2) <= 0.05 and abs(means[1] - 0.8) <= 0.05
          and all(abs(w - 0.5) <= 0.05 for w in weights) and elapsed < 1.0)
    criterion(1, ok, f"means {means[0]:.3f}/{means[1]:.3f}, weights {weights[0]:.3f}/{weights[1]:.3f}, "
                     f"{elapsed * 1000:.1f} ms")


def _regularized_loss(model, x, t, lam1, lam2):
    # written out directly from the definitions
    p = nn.forward(model, x)
    ce = -np.mean(np.sum(t * np.log(p), axis=1))
    ent = -np.mean(np.sum(p * np.log(p), axis=1))
    u = np.full(p.shape[1], 1.0 / p.shape[1])
    kl = np.sum(u * np.log(u / p.mean(axis=0)))
    return ce + lam1 * ent + lam2 * kl


def test_criterion_02_gradient_check(criterion):
    rng = np.random.default_rng(2)
    model = nn.mlp(6, 4, rng, (10,))
    x = rng.normal(size=(32, 6))
    t = rng.dirichlet(np.ones(4), size=32)
    _, grads = nn.loss_and_grads(model, x, t, nn.LossSpec(lambda1=1.0, lambda2=1.0))
    params = model.params()
    h, worst = 1e-5, 0.0
    for _ in range(20):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + h
        up = _regularized_loss(model, x, t, 1.0, 1.0)
        params[k][idx] = old - h
        down = _regularized_loss(model, x, t, 1.0, 1.0)
        params[k][idx] = old
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - grads[k][idx]) / max(abs(num), abs(grads[k][idx]), 1e-6))
    criterion(2, worst <= 1e-4, f"max relative error {worst:.2e} over 20 parameters")


def test_criterion_03_noise_exactness(criterion):
    failures, checks = 0, 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        counts = rng.integers(40, 120, size=5)
        y = np.repeat(np.arange(5), counts)
        ds = Dataset(rng.normal(size=(y.shape[0], 3)), y, 5, true=y.copy())
        pool = noise.OodPool(rng.normal(size=(60, 3)), np.repeat(np.arange(3), 20), 3)
        T = noise.build_transition([noise.synthetic_confusion(5, rng)], range(5))
        T_ood = rng.dirichlet(np.ones(3), size=5)
        fm = noise.circular_flip_map([range(5)])
        for r in (0.1, 0.3, 0.5, 0.8):
            for kind in noise.NOISE_TYPES:
                out = noise.inject(ds, kind, r, np.random.default_rng(seed),
                                   transition=T_ood if kind == "nonuniform-ood" else T, pool=pool, flip_map=fm)
                per_class = [int((~out.clean[y == c]).sum()) for c in range(5)]
                expected = [int(np.floor(r * n + 0.5)) for n in counts]
                ok = per_class == expected
                if kind in ("uniform-id", "nonuniform-id", "pairwise"):
                    ok &= bool(np.all(out.observed[~out.clean] != y[~out.clean]))
                checks += 1
                failures += not ok
    criterion(3, failures == 0, f"{failures} failures in {checks} (op, rate, seed) checks")


def test_criterion_04_end_to_end_detection(criterion):
    report, _, _, elapsed = outcome("drpl", "uniform-id", 0.4, 0)
    d = report.detection["stage2"]
    ok = d["auc"] >= 0.95 and d["tpr"] >= 0.85 and d["fpr"] <= 0.15 and elapsed < 120
    criterion(4, ok, f"stage-2 AUC {d['auc']:.3f}, TPR {d['tpr']:.3f}, FPR {d['fpr']:.3f} at gamma2 0.5, "
                     f"{elapsed:.1f} s")


def test_criterion_05_relabeling_separation(criterion):
    parts, ok = [], True
    for seed in SEEDS:
        drpl, *_ = outcome("drpl", "nonuniform-id", 0.5, seed)
        ce, *_ = outcome("ce-baseline", "nonuniform-id", 0.5, seed)
        a, b = drpl.detection["stage1"]["auc"], ce.detection["final_loss"]["auc"]
        ok &= a - b >= 0.05
        parts.append(f"s{seed} {a:.3f} vs {b:.3f}")
    criterion(5, ok, "stage-1 AUC vs CE final-loss AUC: " + ", ".join(parts))


def _median_last(mode, kind, rate):
    return float(np.median([outcome(mode, kind, rate, s)[0].accuracy_last for s in SEEDS]))


def test_criterion_06_beats_baselines(criterion):
    d, c, m = (_median_last(mode, "uniform-id", 0.4) for mode in ("drpl", "ce-baseline", "mixup-baseline"))
    criterion(6, d >= c + 0.05 and d >= m,
              f"median final accuracy drpl {d:.3f}, ce {c:.3f}, mixup {m:.3f}")


def test_criterion_07_oracle_ordering(criterion):
    o, f = (_median_last(mode, "uniform-id", 0.8) for mode in ("oracle-ssl", "forward-oracle"))
    criterion(7, o >= f, f"median accuracy oracle-ssl {o:.3f}, forward-oracle {f:.3f}")


def test_criterion_08_best_vs_last(criterion):
    d, *_ = outcome("drpl", "uniform-id", 0.4, 0)
    c, *_ = outcome("ce-baseline", "uniform-id", 0.4, 0)
    drop_d = d.accuracy_best - d.accuracy_last
    drop_c = c.accuracy_best - c.accuracy_last
    criterion(8, drop_d <= 0.02 and drop_c > drop_d,
              f"drpl best {d.accuracy_best:.3f} last {d.accuracy_last:.3f}; "
              f"ce best {c.accuracy_best:.3f} last {c.accuracy_last:.3f}")


def test_criterion_09_determinism(criterion, tmp_path):
    same = []
    for mode in MODES:
        blobs = []
        for rep in range(2):
            spec = spec_for(mode, "uniform-id", 0.4, 3)
            spec.out = str(tmp_path / f"{mode}_{rep}")
            blobs.append((run_experiment(spec) / "report.json").read_bytes())
        same.append(blobs[0] == blobs[1])
    criterion(9, all(same), "byte-identical report.json: " + ", ".join(
        f"{m} {'yes' if s else 'no'}" for m, s in zip(MODES, same)))


def test_criterion_10_linear_probe(criterion):
    scores = {}
    for mode in ("drpl", "mixup-baseline"):
        accs = []
        for seed in SEEDS:
            _, model, prep, _ = outcome(mode, "uniform-id", 0.8, seed, PROBE_BLOBS)
            # deepest hidden layer
            accs.append(metrics.linear_probe(model, model.num_hidden - 1, prep.train, prep.probe))
        scores[mode] = float(np.median(accs))
    criterion(10, scores["drpl"] >= scores["mixup-baseline"],
              f"median probe accuracy drpl {scores['drpl']:.3f}, mixup {scores['mixup-baseline']:.3f}")


@pytest.mark.parametrize("mode", ["drpl", "ce-baseline"])
def test_reports_carry_accuracy(mode):
    report, *_ = outcome(mode, "uniform-id", 0.4, 0)
    assert 0.0 <= report.accuracy_last <= report.accuracy_best <= 1.0
