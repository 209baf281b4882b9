"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary
(see conftest.py).  Criteria 3 and 4 run the scaled simulation study and
take several minutes each on one core.
"""
import json
import math

import numpy as np
import pytest

from refreshmi import cli
from refreshmi.diagnostics import Subgroup, default_statistics, posterior_predictive_check
from refreshmi.gibbs import (
    GibbsSchedule,
    alpha_posterior,
    assignment_probabilities,
    run_chain,
    step_alpha,
    step_psi,
    step_rho,
    step_stick_weights,
    stick_posterior,
    w_probability,
)
from refreshmi.mi import ratio_estimate, rubin_combine
from refreshmi.rng import make_rng
from refreshmi.simulation import (
    CONDITIONALLY_INDEPENDENT,
    DEPENDENT,
    StudyConfig,
    analytic_marginals,
    generate_truth,
    mask_for_design,
    run_study,
)
from refreshmi.state import ModelKind, ModelSpec
from test_gibbs import _enumerate_assignments, _row_likelihood, _tiny_data, make_state

RESULTS: dict[int, str] = {}

# complete-case bias row of the dependent-scenario results table
CC_BIAS = np.array([0.031, 0.033, 0.039, 0.042, 0.046])
CI_BIAS = 0.016
SCALED = GibbsSchedule(iterations=5000, burn_in=2500, thin=10, m=0)
STUDY_SEED = 20240601


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def _fmt(a) -> str:
    return "[" + ", ".join(f"{x:.4f}" for x in np.asarray(a)) + "]"


def test_criterion_1_complete_case_bias():
    bias = analytic_marginals(DEPENDENT)["complete_case_bias"]
    analytic_ok = bool(np.all(np.abs(bias - CC_BIAS) <= 0.005))
    rep = run_study(StudyConfig(DEPENDENT, ("complete_case",), replications=100, master_seed=STUDY_SEED))
    dif = rep.dif["complete_case"]
    sim_ok = bool(np.all(np.abs(dif - CC_BIAS) <= 0.01))
    record(1, analytic_ok and sim_ok, f"analytic bias {_fmt(bias)}, 100-rep DIF {_fmt(dif)}, target {_fmt(CC_BIAS)}")


def test_criterion_2_ci_baseline():
    bias = analytic_marginals(CONDITIONALLY_INDEPENDENT)["complete_case_bias"]
    # the table reports the magnitude; the completers' rate sits below the panel rate here
    ok = bool(np.all(np.abs(np.abs(bias) - CI_BIAS) <= 0.005))
    record(2, ok, f"analytic bias {_fmt(bias)}, |bias| target {CI_BIAS} +/- 0.005")


@pytest.fixture(scope="module")
def dependent_study():
    return run_study(StudyConfig(DEPENDENT, replications=20, schedule=SCALED, K=10, master_seed=STUDY_SEED))


@pytest.fixture(scope="module")
def ci_study():
    return run_study(StudyConfig(CONDITIONALLY_INDEPENDENT, replications=20, schedule=SCALED, K=10, master_seed=STUDY_SEED))


def test_criterion_3_attrition_ordering(dependent_study):
    rep = dependent_study
    b, d, c = rep.dif["blpm"], rep.dif["dpmpm"], rep.dif["complete_case"]
    beats_cc = bool(np.all(b < c))
    near_dp = bool(np.all(b[3:] <= d[3:] + 0.01))
    se = np.concatenate([rep.pair_se[("blpm", "complete_case")], rep.pair_se[("blpm", "dpmpm")]])
    se_ok = bool(np.all(se < 0.01))
    record(
        3, beats_cc and near_dp and se_ok,
        f"DIF blpm {_fmt(b)} dpmpm {_fmt(d)} cc {_fmt(c)}; max pair SE {se.max():.4f}",
    )


def test_criterion_4_ci_equivalence(ci_study):
    rep = ci_study
    b, d, c = rep.dif["blpm"], rep.dif["dpmpm"], rep.dif["complete_case"]
    close = bool(np.all(np.abs(b - d) < 0.015))
    below = bool(np.all(b < c) and np.all(d < c))
    record(4, close and below, f"DIF blpm {_fmt(b)} dpmpm {_fmt(d)} cc {_fmt(c)}")


def test_criterion_5_full_conditional_oracle():
    worst = 0.0
    cases = [
        (ModelKind.BLPM, [2, 3, 2], [0, 2]),
        (ModelKind.BLPM, [3, 2], [1]),
        (ModelKind.DPMPM, [2, 3, 2], []),
        (ModelKind.DPMPM, [3, 2], []),
    ]
    for kind, levels, split in cases:
        for seed in range(4):
            n = 6 if len(levels) < 3 else 5
            state = make_state(kind, levels, split, K=2, seed=seed, n=n)
            codes, w = _tiny_data(levels, n, seed)
            got = assignment_probabilities(state, codes, w)
            worst = max(worst, float(np.max(np.abs(got - _enumerate_assignments(state, codes, w)))))
            if kind == ModelKind.BLPM:
                p = w_probability(state, codes, np.arange(n))
                for i in range(n):
                    joint = [_row_likelihood(state, state.s[i], codes[i], wv) for wv in (0, 1)]
                    worst = max(worst, abs(p[i] - joint[1] / sum(joint)))
    record(5, worst < 1e-12, f"max |sampler - enumeration| = {worst:.2e}")


def _z(draws, mean):
    draws = np.asarray(draws)
    return abs(draws.mean() - mean) / (draws.std(ddof=1) / math.sqrt(draws.size))


def test_criterion_6_conjugacy():
    n_mc = 10_000
    z = {}

    state = make_state(ModelKind.BLPM, [2], [0], K=3, n=12)
    state.s = np.array([0] * 5 + [1] * 7)
    state.alpha = 0.8
    a, b = stick_posterior(np.bincount(state.s, minlength=3).astype(float), state.alpha)
    rng = make_rng(61)
    v = []
    for _ in range(n_mc):
        step_stick_weights(state, rng)
        v.append(state.V[:2].copy())
    v = np.array(v)
    z["step2"] = max(_z(v[:, h], a[h] / (a[h] + b[h])) for h in range(2))

    codes = np.array([[0]] * 3 + [[1]] + [[1]] * 2 + [[0]] * 6)
    w = np.array([1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0])
    rng = make_rng(62)
    psi1, psi0 = [], []
    for _ in range(n_mc):
        step_psi(state, codes, w, rng)
        psi1.append(state.psi_split[1, 0, 0, 0])
        psi0.append(state.psi_split[0, 0, 0, 0])
    # class 0 Y2 counts: (3, 1) among W=1 rows, (0, 1) among W=0 rows
    z["step3"] = max(_z(psi1, 4 / 6), _z(psi0, 1 / 3))

    rng = make_rng(63)
    rho = np.array([step_rho(state, w, rng).copy() for _ in range(n_mc)])
    # class 0: 4 ones, 1 zero; class 1: 5 ones, 2 zeros; class 2 empty
    z["step3d"] = max(_z(rho[:, 0], 5 / 7), _z(rho[:, 1], 6 / 9), _z(rho[:, 2], 0.5))

    K = 10
    st = make_state(ModelKind.DPMPM, [2], [], K=K, n=3)
    st.V = np.full(K, 1 - math.exp(-4 / 9))
    st.V[-1] = 1.0
    shape, rate = alpha_posterior(st, 0.25, 0.25)
    rng = make_rng(64)
    z["step4"] = _z([step_alpha(st, rng) for _ in range(n_mc)], shape / rate)

    ok = all(v < 3 for v in z.values()) and shape == pytest.approx(9.25) and rate == pytest.approx(4.25)
    record(6, ok, "z-scores " + ", ".join(f"{k}={v:.2f}" for k, v in z.items()))


def test_criterion_7_posterior_predictive():
    truth = generate_truth(DEPENDENT, make_rng(STUDY_SEED, 0, 0))
    ds = mask_for_design(truth)
    sched = GibbsSchedule(iterations=5000, burn_in=2500, thin=5, m=0)
    chain = run_chain(ModelSpec(ModelKind.BLPM, K=10), ds, sched, make_rng(STUDY_SEED, 2), keep_draws=True)
    groups = [Subgroup.of(f"y1_{k}=1", **{f"y1_{k}": 1}) for k in range(1, 6)]
    stats = default_statistics(ds.schema, groups)
    report = posterior_predictive_check(chain.draws, ds.schema, ds.origin, stats, make_rng(STUDY_SEED, 7), t0=500)
    vals = report.values()
    frac_ok = float((vals >= 0.05).mean())
    record(7, frac_ok >= 0.90, f"{len(vals)} statistics, fraction with ppp >= 0.05: {frac_ok:.3f}, min ppp {vals.min():.3f}")


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_8_reproducibility(tmp_path):
    def twice(*argv):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{argv[0]}_{tag}"
            assert cli.main([str(x) for x in argv] + ["--out", str(out)]) == 0
            outs.append(_files(out))
        return outs[0] == outs[1]

    same = {}
    same["simulate"] = twice("simulate", "--scenario", "dependent", "--reps", 2, "--iterations", 200, "--burn-in", 100,
                             "--thin", 5, "--K", 5, "--seed", 3, "--write-data")
    data = tmp_path / "simulate_a"
    same["impute"] = twice("impute", "--data", data / "data.csv", "--schema", data / "schema.json", "--iterations", 300,
                           "--burn-in", 100, "--thin", 2, "--m", 3, "--spacing", 10, "--K", 6, "--seed", 4)
    chain = tmp_path / "impute_a"
    same["diagnose"] = twice("diagnose", "--chain-dir", chain, "--t0", 50, "--seed", 5)
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"quantities": [{"var": "y2_1"}, {"var": "y2_2", "contrast": "y1_2"}]}))
    same["analyze"] = twice("analyze", "--imputations-dir", chain, "--spec", spec)
    record(8, all(same.values()), "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))


def test_criterion_9_mi_mechanics():
    est = rubin_combine([(0.4, 0.01), (0.6, 0.01)])
    err = max(abs(est.point - 0.5), abs(est.within_var - 0.01), abs(est.between_var - 0.02), abs(est.total_var - 0.04))
    rng = np.random.default_rng(9)
    y = rng.integers(0, 2, 200).astype(float)
    x = rng.integers(0, 2, 200).astype(float)
    w = rng.uniform(0.2, 5.0, 200)
    base = ratio_estimate(y * x, x, w)
    exact = all(ratio_estimate(y * x, x, w * c) == base for c in (0.25, 2.0, 1024.0))
    rel = max(
        abs(ratio_estimate(y * x, x, w * c)[k] - base[k]) / abs(base[k]) for c in (3.0, 0.1, 7.5) for k in (0, 1)
    )
    ok = err < 1e-12 and exact and rel < 1e-12
    record(9, ok, f"Rubin fixture max error {err:.1e}; power-of-two scaling exact={exact}; other scales rel {rel:.1e}")
