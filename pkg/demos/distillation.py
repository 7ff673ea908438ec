"""Audit black-box teachers through their predictions.

Three small networks are trained on the same prior-art split: one sees the
citation indicators, one sees only the similarity scores, one sees the
scores plus the inventor indicator.  A student GAM fitted to each
teacher's test-set labels shows which inputs the teacher leans on.

    python demos/distillation.py
"""

from circaudit.data import split
from circaudit.synth import CITATIONS, GenConfig, ablate, gen_patent
from circaudit.teacher import TrainConfig, distill_audit, f1, predict, threshold, train

data = gen_patent(GenConfig(n_rows=40_000, seed=0), "patent-binary")
train_part, test = split(data, 0.75, seed=0, by_group=True)
scores = ("neural", "tfidf")

teachers = {
    "with citations": scores + CITATIONS,
    "control (scores only)": scores,
    "scores + inventor": scores + ("inventor",),
}
for label, inputs in teachers.items():
    net = train(train_part, inputs, config=TrainConfig(seed=0))
    pred = threshold(predict(net, test), [0.5])
    line = f"{label:>22}: test F1 {f1(pred, test.y):.3f}"
    if set(CITATIONS) & set(inputs):
        ablated = threshold(predict(net, ablate(test, CITATIONS)), [0.5])
        line += f", citations zeroed {f1(ablated, test.y):.3f}"
    print(line)

    report = distill_audit(net, test, known_rule=CITATIONS).report
    print(f"{'':>24}student selects {report.selected} (D² {report.d_squared:.4f}) -> {report.outcome}")
