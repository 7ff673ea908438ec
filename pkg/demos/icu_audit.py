"""SOFA-style scores on synthetic ICU measurements.

The liver score is a step function of bilirubin; the kidney score is the
larger of a creatinine step and a urine-output step.  The other
measurements are noisy functions of the defining ones.  Correlation
preselection followed by the subset search should recover the defining
columns, and the fitted shapes should trace the published steps.

    python demos/icu_audit.py [out_dir]
"""

import sys
from pathlib import Path

from circaudit.circularity import AuditConfig, run_test
from circaudit.report import correlation_csv, panel_from_fit, render_svg
from circaudit.synth import GenConfig, gen_icu, get_rule, icu_view

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

icu = gen_icu(GenConfig(n_rows=20_000, seed=1, noise_features=4))

for name in ("liver", "kidney"):
    rule = get_rule(name)
    view = icu_view(icu, name)
    (out / f"{name}_correlations.csv").write_text(correlation_csv(view))

    report = run_test(view, config=AuditConfig(preselect=6 if name == "kidney" else 5))
    print(f"\n{rule.rule_id}: kept {report.preselected} of {view.features}")
    print(f"  selected {report.selected}, D² = {report.d_squared:.6f}, outcome {report.outcome}")
    for change in report.shape_changes:
        print(f"  {change.feature:>8}: {change.sup_without:.3f} without the selected set, "
              f"{change.sup_with:.2e} with it ({change.status})")

    sel = report.models["selected"]
    panels = [panel_from_fit(sel, f, rule) for f in report.selected]
    (out / f"{name}_steps.svg").write_text(render_svg(panels, title=f"{rule.rule_id}: fitted shape vs rule"))

    removed = run_test(view, config=AuditConfig(exclude=rule.features))
    print(f"  without {rule.features}: best D² = {removed.d_squared:.3f} -> {removed.outcome}")
