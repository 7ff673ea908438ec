"""Audit a synthetic prior-art table whose relevance label is a citation rule.

Every relevant row carries exactly one citation indicator, and the graded
label is a fixed function of those indicators.  The two similarity scores
only correlate with the label.  The audit should single out the three
indicators, and once they are in the model the score shapes should be flat.

    python demos/patent_audit.py [out_dir]
"""

import sys
from pathlib import Path

from circaudit.circularity import AuditConfig, run_test
from circaudit.report import panel_from_fit, render_ranking_table, render_svg
from circaudit.synth import GenConfig, gen_patent, get_rule

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

data = gen_patent(GenConfig(n_rows=100_000, seed=0))
print(f"{data.n_rows} rows, features {data.features}, target {data.target!r}")

report = run_test(data, config=AuditConfig(seed=0))
text, _ = render_ranking_table(report, limit=5)
print(text)
print(f"selected set: {report.selected}  D² = {report.d_squared:.6f}")
for v in report.verdicts:
    print(f"  {v.feature:>8}: sup-norm / scale = {v.relative:.2e}  nullified = {v.nullified}")
print(f"outcome: {report.outcome}")

# Without the indicators the scores explain only part of the label.
free = run_test(data, config=AuditConfig(exclude=tuple(get_rule("patent").features)))
print(f"\nscores only: best D² = {free.d_squared:.3f} -> {free.outcome}")

full = report.models["full"]
rule = get_rule("patent")
panels = [panel_from_fit(full, f, rule) for f in full.spec.feature_names]
(out / "patent_shapes.svg").write_text(render_svg(panels, columns=3, title="full model", share_y=True))
print(f"wrote {out / 'patent_shapes.svg'}")
