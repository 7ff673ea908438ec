"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (visible even under output
capture) before asserting.
"""

import json
import time

import numpy as np
import pytest

from circaudit.circularity import CIRCULAR, NOT_CIRCULAR, PARTIAL, AuditConfig, run_test, search
from circaudit.cli import main
from circaudit.data import Dataset, split
from circaudit.gam import ModelSpec, Term, feature_shape, fit, sup_norm
from circaudit.splines import KnotVector, eval_basis, penalty_matrix
from circaudit.synth import (
    CITATIONS, KIDNEY_FEATURES, LIVER_CUTS, GenConfig, ablate, gen_icu, gen_patent, icu_view, liver_sofa,
)
from circaudit.teacher import TrainConfig, distill_audit, f1, init_net, loss_and_grads, predict, threshold, train
from oracles import ORDER, central_differences, cox_de_boor, newton_logistic, oracle_spline, trapezoid_penalty

SEEDS = range(20)
PATENT_N = 100_000
DISTILL_N = 40_000
SURROGATES = ("neural", "tfidf")


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\nAC{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def patent_runs():
    runs = []
    for seed in SEEDS:
        data = gen_patent(GenConfig(n_rows=PATENT_N, seed=seed))
        t0 = time.perf_counter()
        report = run_test(data, config=AuditConfig(seed=seed))
        runs.append((seed, report, time.perf_counter() - t0))
    return runs


def test_ac1_patent_rule_detected(patent_runs, verdict):
    failures = []
    worst = 0.0
    for seed, rep, secs in patent_runs:
        worst = max(worst, secs)
        top = rep.candidates[0]
        tied = [c for c in rep.candidates if c.d_squared >= top.d_squared - 1e-4]
        ok = (
            rep.selected == CITATIONS
            and rep.d_squared >= 1 - 1e-6
            and top.edf == min(c.edf for c in tied)
            and all(set(CITATIONS) <= set(c.features) for c in tied)
            and secs <= 120
        )
        if not ok:
            failures.append(seed)
    verdict(1, not failures,
            f"c* = citations with D^2 >= 1-1e-6 and min EDF in {len(patent_runs) - len(failures)}/{len(patent_runs)} "
            f"seeds at N={PATENT_N}; slowest seed {worst:.1f}s; failing seeds {failures}")


def test_ac2_patent_surrogates_nullified(patent_runs, verdict):
    worst_rel = 0.0
    free = []
    for _, rep, _ in patent_runs:
        rel = {v.feature: v.relative for v in rep.verdicts}
        worst_rel = max(worst_rel, *(rel[f] for f in SURROGATES))
        free.append(next(c.d_squared for c in rep.candidates if c.features == SURROGATES))
    ok = worst_rel <= 0.05 and all(0.5 <= d <= 0.7 for d in free)
    verdict(2, ok, f"max relative sup-norm of neural/tfidf {worst_rel:.2e} (<= 0.05); "
                   f"citation-free D^2 in [{min(free):.3f}, {max(free):.3f}] (need [0.5, 0.7])")


def test_ac3_liver_rule_detected(verdict):
    failures = []
    worst_gap = 0.0
    for seed in SEEDS:
        data = icu_view(gen_icu(GenConfig(seed=seed)), "liver")
        rep = run_test(data, config=AuditConfig(seed=seed))
        sel = rep.models["selected"]
        shape = feature_shape(sel, "bili")
        away = np.min(np.abs(shape.grid[:, None] - np.array(LIVER_CUTS)), axis=1) >= 0.1
        gap = float(np.max(np.abs(shape.values + sel.intercept - liver_sofa(shape.grid))[away]))
        worst_gap = max(worst_gap, gap)
        ok = (
            rep.selected == ("bili",)
            and rep.d_squared >= 0.99
            and gap <= 0.1
            and all(v.nullified for v in rep.verdicts)
            and {v.feature for v in rep.verdicts} == {"asat", "quinr", "alat", "hzv"}
        )
        if not ok:
            failures.append(seed)
    verdict(3, not failures, f"c* = {{bili}}, D^2 >= 0.99, surrogates nullified in {20 - len(failures)}/20 seeds; "
                             f"max |shape - rule| away from cuts {worst_gap:.2e} (<= 0.1)")


def test_ac4_kidney_rule_detected(verdict):
    failures = []
    lowest = 1.0
    for seed in SEEDS:
        data = icu_view(gen_icu(GenConfig(seed=seed)), "kidney")
        rep = run_test(data, config=AuditConfig(seed=seed))
        lowest = min(lowest, rep.d_squared)
        ok = (
            rep.selected == ("crea", "urine24")
            and rep.d_squared >= 0.90
            and {v.feature for v in rep.verdicts} == set(KIDNEY_FEATURES) - {"crea", "urine24"}
            and all(v.nullified for v in rep.verdicts)
            and rep.outcome == CIRCULAR
        )
        if not ok:
            failures.append(seed)
    verdict(4, not failures, f"c* = {{crea, urine24}} with bun/artph/temp/lactate nullified in "
                             f"{20 - len(failures)}/20 seeds; lowest D^2 {lowest:.6f} (>= 0.90)")


def patent_split(seed):
    data = gen_patent(GenConfig(n_rows=DISTILL_N, seed=seed), "patent-binary")
    return split(data, 0.75, seed, by_group=True)


def test_ac5_distillation_audit(verdict):
    rows = []
    for seed in range(10):
        tr, te = patent_split(seed)
        cfg = TrainConfig(seed=seed)
        teacher = train(tr, SURROGATES + CITATIONS, config=cfg)
        f1_test = f1(threshold(predict(teacher, te), [0.5]), te.y)
        f1_ablated = f1(threshold(predict(teacher, ablate(te, CITATIONS)), [0.5]), te.y)
        flagged = distill_audit(teacher, te, known_rule=CITATIONS).report
        control = train(tr, SURROGATES, config=cfg)
        ctl = distill_audit(control, te, known_rule=CITATIONS).report
        rows.append((seed, f1_test, f1_ablated, flagged.outcome, flagged.selected, ctl.outcome))
    ok = all(
        f >= 0.999 and fa <= 0.05 and out == CIRCULAR and sel == CITATIONS and ctl != CIRCULAR
        for _, f, fa, out, sel, ctl in rows
    )
    verdict(5, ok,
            f"teacher F1 min {min(r[1] for r in rows):.4f} (>= 0.999); ablated F1 max {max(r[2] for r in rows):.4f} "
            f"(<= 0.05); student circular on citations in {sum(r[3] == CIRCULAR for r in rows)}/10; control "
            f"outcomes {sorted({r[5] for r in rows})}, circular in {sum(r[5] == CIRCULAR for r in rows)}/10")


def test_ac6_partial_circularity(verdict):
    rows = []
    for seed in range(5):
        tr, te = patent_split(seed)
        teacher = train(tr, SURROGATES + ("inventor",), config=TrainConfig(seed=seed))
        rep = distill_audit(teacher, te, known_rule=CITATIONS).report
        full, sel = rep.models["full"], rep.models["selected"]
        rel = {f: sup_norm(full, f) / sel.eta_sd for f in ("inventor",) + SURROGATES}
        rows.append((seed, rep.outcome, rep.selected, rel))
    ok = all(
        out in (PARTIAL, NOT_CIRCULAR) and sel != CITATIONS and min(rel.values()) > 0.05
        for _, out, sel, rel in rows
    )
    lowest = min(min(r[3].values()) for r in rows)
    verdict(6, ok, f"outcomes {[r[1] for r in rows]}; inventor/neural/tfidf relative sup-norm >= {lowest:.3f} "
                   f"in the full student model (active, > 0.05)")


def test_ac7_engine_oracles(verdict):
    errs = {}
    rng = np.random.default_rng(0)

    # penalized Gaussian fit vs dense normal equations
    x = rng.uniform(0, 3, 40)
    y = np.sin(2 * x) + 0.3 * rng.standard_normal(40)
    data = Dataset({"x": x, "y": y}, "y")
    Xs, S = oracle_spline(x, 4)
    X = np.hstack([np.ones((40, 1)), Xs])
    gap = 0.0
    for lam in (0.0, 0.37, 25.0):
        P = np.zeros((X.shape[1],) * 2)
        P[1:, 1:] = lam * S
        beta = np.linalg.solve(X.T @ X + P, X.T @ y)
        g = fit(ModelSpec((Term("x", "spline", 4),), lam=lam), data)
        gap = max(gap, float(np.max(np.abs(g.predict(data) - X @ beta))))
    errs["gaussian"] = (gap, 1e-8)

    # unpenalized linear terms vs OLS
    b = (rng.random((50, 3)) < 0.5).astype(float)
    yl = b @ [2.0, 0.0, -1.0] + rng.standard_normal(50)
    dl = Dataset({"b0": b[:, 0], "b1": b[:, 1], "b2": b[:, 2], "y": yl}, "y")
    Xo = np.column_stack([np.ones(50), b])
    ols = Xo @ np.linalg.lstsq(Xo, yl, rcond=None)[0]
    errs["ols"] = (float(np.max(np.abs(fit(ModelSpec.for_features(dl, ["b0", "b1", "b2"]), dl).predict(dl) - ols))), 1e-8)

    # binomial P-IRLS vs Newton
    xb = rng.uniform(-2, 2, 300)
    yb = (rng.random(300) < 1 / (1 + np.exp(-np.sin(2 * xb)))).astype(float)
    db_ = Dataset({"x": xb, "y": yb}, "y")
    Xb_s, Sb = oracle_spline(xb, 5)
    Xb = np.hstack([np.ones((300, 1)), Xb_s])
    Pb = np.zeros((Xb.shape[1],) * 2)
    Pb[1:, 1:] = 0.05 * Sb
    gb = fit(ModelSpec((Term("x", "spline", 5),), "binomial", 0.05), db_)
    errs["binomial"] = (float(np.max(np.abs(gb.predict_link(db_) - Xb @ newton_logistic(Xb, yb, Pb)))), 1e-6)

    # MLP gradients vs central differences
    Xn = rng.standard_normal((10, 4))
    yn = (rng.random(10) > 0.5).astype(float)
    net = init_net(list("abcd"), (6, 5), "tanh", seed=1)
    _, dW, dB = loss_and_grads(net, Xn, yn)
    f = lambda: loss_and_grads(net, Xn, yn)[0]  # noqa: E731
    num = central_differences(f, net.weights) + central_differences(f, net.biases)
    rel = max(float(np.max(np.abs(a - n) / np.maximum(np.abs(n), 1e-6))) for a, n in zip(dW + dB, num))
    errs["mlp"] = (rel, 1e-4)

    # B-spline basis vs Cox-de Boor, penalty vs fine-grid quadrature
    kv = KnotVector("x", np.sort(rng.uniform(-2, 5, 7)), (-2.0, 5.0))
    xs = np.linspace(-2, 5, 501)
    errs["basis"] = (float(np.max(np.abs(eval_basis(kv, xs) - cox_de_boor(kv.full, ORDER, xs)))), 1e-10)
    kp = KnotVector("x", np.array([0.7, 1.9]), (0.0, 3.0))
    errs["penalty"] = (float(np.max(np.abs(penalty_matrix(kp) - trapezoid_penalty(kp.full, ORDER)))), 1e-6)

    ok = all(e <= tol for e, tol in errs.values())
    verdict(7, ok, "; ".join(f"{k} {e:.1e} (<= {tol:g})" for k, (e, tol) in errs.items()))


def test_ac8_tie_break_by_edf(verdict):
    rng = np.random.default_rng(0)
    x = np.round(rng.uniform(0, 5, 2000), 1)
    data = Dataset({"x": x, "x_copy": x.copy(), "w": rng.standard_normal(2000),
                    "y": (x > 2.5).astype(float) + (x > 4)}, "y")
    outcomes = set()
    for _ in range(3):
        ranked, best = search(data, config=AuditConfig())
        outcomes.add(best)
    top2 = ranked[:2]
    ok = (
        outcomes == {("x",)}
        and top2[1].features == ("x_copy",)
        and top2[0].d_squared == top2[1].d_squared
        and all(len(c.features) > 1 for c in ranked[2:] if c.d_squared >= top2[0].d_squared - 1e-4)
    )
    verdict(8, ok, f"x and x_copy tie at D^2 {top2[0].d_squared:.6f} (EDF {top2[0].edf:.4f} vs {top2[1].edf:.4f}); "
                   f"selected {sorted(outcomes)} over 3 runs; larger tied subsets ranked after them")


def test_ac9_specificity(verdict):
    counts = {}

    def tally(name, outcome):
        counts.setdefault(name, [0, 0])
        counts[name][0] += outcome == NOT_CIRCULAR
        counts[name][1] += 1

    for seed in SEEDS:
        icu = gen_icu(GenConfig(seed=seed))
        noise = np.random.default_rng([seed, 99]).standard_normal(icu.n_rows)
        noisy = Dataset({**{f: icu[f] for f in KIDNEY_FEATURES}, "y": noise}, "y")
        tally("pure noise", run_test(noisy).outcome)
        tally("liver without bili", run_test(icu_view(icu, "liver"), config=AuditConfig(exclude=("bili",))).outcome)
        tally("kidney without crea/urine24",
              run_test(icu_view(icu, "kidney"), config=AuditConfig(exclude=("crea", "urine24"))).outcome)
        patent = gen_patent(GenConfig(n_rows=PATENT_N, seed=seed))
        tally("patent without citations", run_test(patent, config=AuditConfig(exclude=CITATIONS)).outcome)
    ok = all(a == b == 20 for a, b in counts.values())
    verdict(9, ok, "; ".join(f"{k}: not-circular {a}/{b}" for k, (a, b) in counts.items()))


def test_ac10_cli_determinism(tmp_path, verdict):
    names = ("report.json", "ranking.csv", "shapes_with.svg", "shapes_without.svg", "manifest.json")
    differing = []
    codes = []
    for command in (["audit", "--rule", "kidney", "--n", "8000"],
                    ["distill", "--rule", "patent-binary", "--n", "8000", "--ablate", "inventor,examiner,family"]):
        dirs = [tmp_path / f"{command[0]}{i}" for i in range(2)]
        for d in dirs:
            codes.append(main(command + ["--seed", "3", "--out-dir", str(d)]))
        extra = ("metrics.json", "teacher.json") if command[0] == "distill" else ()
        for name in names + extra:
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                differing.append(f"{command[0]}/{name}")
        json.loads((dirs[0] / "report.json").read_text())
    ok = not differing and codes[0] == codes[1] and codes[2] == codes[3]
    verdict(10, ok, f"repeated audit and distill runs byte-identical across report, ranking, SVGs and manifest; "
                    f"differing files {differing}; exit codes {codes}")
