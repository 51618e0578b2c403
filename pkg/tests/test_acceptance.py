"""Acceptance criteria 1 to 11, each at its stated tolerance and time budget.

Every test prints one ``criterion N: PASS|FAIL`` line; the lines are repeated
in the pytest terminal summary.
"""

import math
import time

import numpy as np
import pytest

from buildsentinel import cli, synth
from buildsentinel.core import AlignedFrame, reference_inventory
from buildsentinel.detect import ForecasterConfig, compute_threshold, forecaster_train, if_fit, if_score, ocsvm_fit
from buildsentinel.detect.nets import Conv1DNet, LSTMNet, loss_and_grad
from buildsentinel.errors import DegenerateError, ValidationError
from buildsentinel.evaluate import RunSpec, enumerate_combinations, execute_run
from buildsentinel.preprocess import apply_scaler, fit_scaler, invert_scaler, reduce, split_condition, to_windows

import oracles
from conftest import make_frame
from test_preprocess import mad_unchanged_precondition

SEED = 0
STANDARD = ({"stage": "scale", "kind": "standard"},)


@pytest.mark.criterion(1)
def test_combination_counts(report, capsys):
    t0 = time.perf_counter()
    rc = cli.main(["combos"])
    wall = time.perf_counter() - t0
    out = capsys.readouterr().out.splitlines()
    intra, inter, _ = enumerate_combinations(reference_inventory())
    ok = rc == 0 and out[:2] == ["intra=626", "inter=16383"] and (intra, inter) == (626, 16383) and wall < 1.0
    assert report(ok, f"printed {out[:2]}, {wall * 1000:.0f} ms")


@pytest.mark.criterion(2)
def test_scaler_suite(report):
    rng = np.random.default_rng(SEED)
    worst_mean = worst_sd = worst_round = 0.0
    minmax_in_range = True
    t0 = time.perf_counter()
    for _ in range(100):
        R, D = int(rng.integers(2, 501)), int(rng.integers(1, 9))
        x = rng.normal(size=(R, D)) * rng.uniform(0.01, 100, D) + rng.uniform(-1000, 1000, D)
        f = make_frame(x)
        s = fit_scaler(f, "standard")
        z = apply_scaler(f, s).values
        worst_mean = max(worst_mean, np.abs(z.mean(axis=0)).max())
        worst_sd = max(worst_sd, np.abs(z.std(axis=0) - 1).max())
        worst_round = max(worst_round, np.abs(invert_scaler(apply_scaler(f, s), s).values - x).max())
        m = fit_scaler(f, "minmax")
        u = apply_scaler(f, m).values
        minmax_in_range &= bool(u.min() >= 0.0 and u.max() <= 1.0)
        worst_round = max(worst_round, np.abs(invert_scaler(apply_scaler(f, m), m).values - x).max())
    wall = time.perf_counter() - t0
    ok = worst_mean <= 1e-9 and worst_sd <= 1e-9 and worst_round <= 1e-9 and minmax_in_range and wall < 10
    assert report(ok, f"|mean|<={worst_mean:.1e} |sd-1|<={worst_sd:.1e} round trip<={worst_round:.1e} "
                      f"minmax in [0,1]={minmax_in_range}, {wall:.2f} s")


@pytest.mark.criterion(3)
def test_reduction_suite(report):
    rng = np.random.default_rng(SEED)
    mad_broken, mad_conditioned_broken, example = 0, 0, None
    skew_err = kurt_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 41))
        x = rng.normal(size=n) * rng.uniform(0.1, 10)
        # MAD robustness exactly as stated: raise the single largest element
        y = x.copy()
        y[np.argmax(y)] += rng.exponential(10.0) + 1e-3
        changed = abs(reduce(y, "mad") - reduce(x, "mad")) > 1e-9
        mad_broken += changed
        if changed and example is None:
            example = n
        if mad_unchanged_precondition(x):
            mad_conditioned_broken += changed
        a, b = rng.uniform(0.01, 100), rng.uniform(-100, 100)
        skew_err = max(skew_err, abs(reduce(-x, "skewness") + reduce(x, "skewness")),
                       abs(reduce(a * x + b, "skewness") - reduce(x, "skewness")))
        kurt_err = max(kurt_err, abs(reduce(a * x + b, "kurtosis") - reduce(x, "kurtosis")))
    errors_ok = True
    for kind in ("skewness", "kurtosis"):
        try:
            reduce([2.0] * 5, kind)
            errors_ok = False
        except DegenerateError:
            pass
    try:
        reduce([], "average")
        errors_ok = False
    except ValidationError:
        pass
    ok = mad_broken == 0 and skew_err <= 1e-9 and kurt_err <= 1e-9 and errors_ok
    assert report(ok, f"MAD robustness broken on {mad_broken}/1000 samples (first at n={example}; "
                      f"{mad_conditioned_broken} among samples where n//2+1 other elements lie no farther from "
                      f"the median than the largest), "
                      f"skew err {skew_err:.1e}, kurtosis err {kurt_err:.1e}, degenerate errors ok={errors_ok}")


@pytest.mark.criterion(4)
def test_windowing(report):
    rng = np.random.default_rng(SEED)
    cells_ok, shapes_ok = True, True
    for _ in range(200):
        T, N, D = int(rng.integers(1, 101)), int(rng.integers(1, 1001)), int(rng.integers(1, 9))
        x = rng.normal(size=(N + T, D))
        w = to_windows(make_frame(x), T)
        shapes_ok &= w.data.shape == (N, T, D) and w.targets.shape == (N, D)
        for _ in range(20):
            i, k, j = int(rng.integers(N)), int(rng.integers(T)), int(rng.integers(D))
            cells_ok &= bool(w.data[i, k, j] == x[i + k, j] and w.targets[i, j] == x[i + T, j])
    big = make_frame(np.zeros((36484, 14)))
    t0 = time.perf_counter()
    w = to_windows(big, 74)
    wall = time.perf_counter() - t0
    ok = cells_ok and shapes_ok and w.data.shape == (36410, 74, 14) and wall < 5
    assert report(ok, f"200 random shapes ok={shapes_ok}, spot checks ok={cells_ok}, "
                      f"large shape {w.data.shape} in {wall * 1000:.1f} ms")


@pytest.mark.criterion(5)
def test_threshold_rule(report):
    exact = compute_threshold([1, 1, 1, 1]).threshold == 1.0 and compute_threshold([0, 2]).threshold == 9.0
    rng = np.random.default_rng(SEED)
    perm_err = scale_err = 0.0
    for _ in range(1000):
        L = rng.exponential(rng.uniform(0.01, 10), int(rng.integers(1, 200)))
        t = compute_threshold(L).threshold
        perm_err = max(perm_err, abs(compute_threshold(rng.permutation(L)).threshold - t) / max(1.0, t))
        c = rng.uniform(0.1, 10)
        scale_err = max(scale_err, abs(compute_threshold(c * L).threshold - c * t) / max(1.0, c * t))
    ok = exact and perm_err <= 1e-12 and scale_err <= 1e-12
    assert report(ok, f"exact examples ok={exact}, permutation err {perm_err:.1e}, scale err {scale_err:.1e}")


@pytest.mark.criterion(6)
def test_isolation_forest(report):
    rng = np.random.default_rng(SEED)
    X = np.vstack([rng.normal(size=(256, 2)), [[10.0, 0.0]]])
    t0 = time.perf_counter()
    s1 = if_score(if_fit(X, seed=7), X)
    s2 = if_score(if_fit(X, seed=7), X)
    wall = time.perf_counter() - t0
    out, inliers = s1[-1], s1[:-1]
    ok = out > 0.5 and out > inliers.max() and np.array_equal(s1, s2) and wall < 5
    assert report(ok, f"outlier {out:.3f} vs max inlier {inliers.max():.3f}, "
                      f"bit-identical={np.array_equal(s1, s2)}, {wall:.2f} s")


@pytest.mark.criterion(7)
def test_ocsvm_nu_property(report):
    X = np.random.default_rng(SEED).normal(size=(200, 2))
    t0 = time.perf_counter()
    m = ocsvm_fit(X, nu=0.5, gamma="auto")
    wall = time.perf_counter() - t0
    frac = float(np.mean(m.predict(X) == -1))
    a = m.alpha_full
    sum_err = abs(a.sum() - 1.0)
    box_err = max(0.0, -a.min(), a.max() - m.upper_bound)
    ok = 0.45 <= frac <= 0.55 and sum_err <= 1e-9 and box_err <= 1e-9 and m.kkt_residual <= 1e-3 and wall < 30
    assert report(ok, f"outlier fraction {frac:.3f}, |sum a - 1| {sum_err:.1e}, box {box_err:.1e}, "
                      f"KKT {m.kkt_residual:.1e}, {wall:.2f} s")


@pytest.mark.criterion(8)
def test_gradient_check(report):
    rng = np.random.default_rng(SEED)
    x, target = rng.normal(size=(8, 6, 2)), rng.normal(size=(8, 2))
    t0 = time.perf_counter()
    conv = Conv1DNet(6, 2, kernel_size=4, filters=5, rng=1)
    e_conv = oracles.central_difference_check(conv, lambda y, t: loss_and_grad(y, t, "mse"), x, target)
    lstm = LSTMNet(6, 2, units=32, rng=2)
    e_lstm = oracles.central_difference_check(lstm, lambda y, t: loss_and_grad(y, t, "mae"), x, target)
    wall = time.perf_counter() - t0
    ok = e_conv < 1e-4 and e_lstm < 1e-4 and wall < 60
    assert report(ok, f"conv1d {e_conv:.1e}, recurrent {e_lstm:.1e}, {wall:.1f} s")


# -- synthetic scenario shared by criteria 9 and 10 ------------------------------------

@pytest.fixture(scope="module")
def scenario():
    t0 = time.perf_counter()
    clean = synth.generate(synth.default_scenario(days=7, grid_period=60, seed=SEED))
    train = synth.generate(synth.default_scenario(days=7, grid_period=60, seed=SEED + 100))
    log = synth.plan_injections(clean, n_point=5, n_contextual=3, seed=SEED)
    test = synth.inject(clean, log, seed=SEED)
    return {"train": train, "test": test, "log": log, "setup_seconds": time.perf_counter() - t0}


@pytest.mark.criterion(9)
def test_end_to_end_detection(report, scenario):
    t0 = time.perf_counter()
    rec = execute_run(RunSpec(scenario["train"], "recurrent_forecaster", "UC", STANDARD, {"time_steps": 74},
                              test=scenario["test"], truth=scenario["log"], tolerance_ticks=2, seed=SEED))
    wall = time.perf_counter() - t0 + scenario["setup_seconds"]
    if not rec.ok:
        assert report(False, rec.error)
    recall = rec.tp / (rec.tp + rec.fn)
    fp_rate = rec.fp / (rec.fp + rec.tn)
    ok = recall >= 0.8 and fp_rate <= 0.02 and wall < 600
    assert report(ok, f"recall {rec.tp}/{rec.tp + rec.fn} = {recall:.2f}, fp rate {rec.fp}/{rec.fp + rec.tn} = "
                      f"{fp_rate:.4f}, {rec.epochs} epochs, {wall:.0f} s")


@pytest.mark.criterion(10)
def test_conditional_split(report, scenario):
    partition_ok = True
    frames = [scenario["train"], scenario["test"]]
    frames += [synth.generate(synth.default_scenario(days=2, seed=s)) for s in range(1, 6)]
    for f in frames:
        mask, dt, nt = split_condition(f, "nir/natural", 0.02)
        both = np.sort(np.concatenate([dt.grid, nt.grid]))
        partition_ok &= bool(np.array_equal(both, f.grid) and len(np.intersect1d(dt.grid, nt.grid)) == 0)
        partition_ok &= bool(np.array_equal(mask.flags, f.column("nir/natural") > 0.02))

    contextual = synth.InjectionLog([e for e in scenario["log"] if e.kind == "contextual"])
    t0 = time.perf_counter()
    rec = execute_run(RunSpec(scenario["train"], "recurrent_forecaster", "NT", STANDARD, {"time_steps": 74},
                              test=scenario["test"], truth=contextual, tolerance_ticks=2, seed=SEED))
    wall = time.perf_counter() - t0
    if not rec.ok:
        assert report(False, rec.error)
    ok = partition_ok and rec.tp == len(contextual) and rec.fn == 0
    assert report(ok, f"partition holds on {len(frames)} frames={partition_ok}, NT model flagged "
                      f"{rec.tp}/{len(contextual)} 21:00 events (fp {rec.fp}/{rec.fp + rec.tn}), {wall:.0f} s")


@pytest.mark.criterion(11)
def test_training_protocol(report):
    try:
        ForecasterConfig(max_epochs=101)
        cap_enforced = False
    except ValidationError:
        cap_enforced = True
    details, ok = [], cap_enforced
    for kind, c in (("recurrent", 0.5), ("conv1d", 0.5), ("recurrent", 0.0)):
        f = AlignedFrame(60 * np.arange(300), 60, ("a/x", "b/y"), np.full((300, 2), c))
        model, _ = forecaster_train(to_windows(f, 74), kind, seed=SEED)
        best, last = math.inf, 0
        for epoch, loss in enumerate(model.history, 1):
            if loss < best - 1e-2:
                best, last = loss, epoch
        since = model.epochs_run - last
        ok &= model.epochs_run < 10 and model.epochs_run <= 100 and model.stopped_early and since <= 3 + 1
        details.append(f"{kind}@{c}: stopped at {model.epochs_run}, last improvement {last}")
    assert report(ok, f"cap of 100 enforced={cap_enforced}; " + "; ".join(details))
