"""``circaudit`` command line: generate data, audit tables, audit teachers.

The audit and distill commands exit with the test outcome:
0 not-circular, 10 circular, 11 partially-circular, 12 inconclusive;
1 means the run failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .circularity import CIRCULAR, DELTA_CLOSE, EPS_NULL, INCONCLUSIVE, NOT_CIRCULAR, PARTIAL, AuditConfig, run_test
from .data import Dataset, read_csv, split, write_csv
from .gam import BINOMIAL, GAUSSIAN
from .report import panel_from_fit, render_ranking_table, render_svg
from .synth import RULES, GenConfig, ablate, gen_icu, gen_patent, get_rule, icu_view
from .teacher import (
    TrainConfig, accuracy, distill_audit, f1, learn_thresholds, predict, read_predictions, threshold, train,
)

EXIT_CODES = {NOT_CIRCULAR: 0, CIRCULAR: 10, PARTIAL: 11, INCONCLUSIVE: 12}
EXIT_FAILURE = 1
RULE_CHOICES = sorted(RULES) + ["patent", "liver", "kidney"]


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _names(text):
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else None


def _lambda(text):
    if text == "gcv":
        return "gcv"
    if text.startswith("fixed:"):
        try:
            v = float(text[len("fixed:"):])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad lambda value in {text!r}") from None
        if not v >= 0:
            raise argparse.ArgumentTypeError("fixed lambda must be >= 0")
        return v
    raise argparse.ArgumentTypeError("expected 'gcv' or 'fixed:<value>'")


def _knots(text):
    if text == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or an integer") from None
    if k < 2:
        raise argparse.ArgumentTypeError("knot count must be >= 2")
    return k


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _generate(rule_id: str, n: int, seed: int, noise_features: int = 0) -> tuple[Dataset, GenConfig]:
    rule = get_rule(rule_id)
    config = GenConfig(n_rows=n, seed=seed, noise_features=noise_features)
    if rule.rule_id.startswith("patent"):
        return gen_patent(config, rule.rule_id), config
    return icu_view(gen_icu(config), rule.rule_id), config


def _family(arg: str, y: np.ndarray) -> str:
    if arg != "auto":
        return arg
    return BINOMIAL if np.isin(y, (0.0, 1.0)).all() else GAUSSIAN


def _known_rule(text):
    """A rule id (its defining features) or a comma list of feature names."""
    if not text:
        return None, None
    try:
        rule = get_rule(text)
        return rule.features, rule
    except KeyError:
        return _names(text), None


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    return round(obj, 10) if isinstance(obj, float) else obj


def _write(out_dir: Path, name: str, text: str, written: dict) -> None:
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    written[name] = _sha256(path)


def _empty_svg(message: str) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="320" height="60" '
        'viewBox="0 0 320 60" font-family="sans-serif">\n'
        '<rect width="320" height="60" fill="white"/>\n'
        f'<text x="160" y="34" font-size="12" text-anchor="middle">{message}</text>\n'
        "</svg>\n"
    )


def _write_report_artifacts(report, out_dir: Path, rule, written: dict) -> None:
    _write(out_dir, "report.json", report.to_json(), written)
    _, table_csv = render_ranking_table(report)
    _write(out_dir, "ranking.csv", table_csv, written)
    full = report.models["full"]
    # rule overlays live on the label scale, which is the link scale only for Gaussian fits
    if full.family != GAUSSIAN:
        rule = None
    panels = [panel_from_fit(full, f, rule) for f in full.spec.feature_names]
    _write(out_dir, "shapes_with.svg", render_svg(panels, 2, "all features", share_y=True), written)
    comp = report.models.get("complement")
    if comp is None:
        svg = _empty_svg("no features outside the selected set")
    else:
        panels = [panel_from_fit(comp, f, rule) for f in comp.spec.feature_names]
        svg = render_svg(panels, 2, "without " + ", ".join(report.selected), share_y=True)
    _write(out_dir, "shapes_without.svg", svg, written)


def _manifest(command: str, config: dict, inputs: dict, written: dict) -> str:
    doc = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "versions": {
            "circaudit": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "inputs": inputs,
        "outputs": dict(sorted(written.items())),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _audit_config(args, family: str, known) -> AuditConfig:
    return AuditConfig(
        family=family,
        lam=args.lam,
        knots=args.knots,
        delta_close=args.delta_close,
        eps_null=args.eps_null,
        preselect=args.preselect,
        features=_names(args.features),
        exclude=_names(args.exclude) or (),
        known_rule=known,
        seed=args.seed,
    )


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    data, config = _generate(args.rule, args.n, args.seed, args.noise_features)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(args.out) if args.out else out_dir / "data.csv"
    write_csv(data, path)
    sidecar = {
        "rule": get_rule(args.rule).rule_id,
        "target": data.target,
        "features": data.features,
        "kinds": {k: data.kinds[k] for k in data.features},
        "config": config.to_dict(),
        "sha256": _sha256(path),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {data.n_rows} rows to {path}")
    return 0


def _target_for(path: Path, target):
    if target:
        return target
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        return json.loads(sidecar.read_text())["target"]
    raise CliError("no --target given and no JSON sidecar next to the data file")


def _load(path, target) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise CliError(f"data file not found: {path}")
    return read_csv(path, _target_for(path, target))


def cmd_audit(args) -> int:
    out_dir = Path(args.out_dir)
    inputs = {}
    if args.data:
        data = _load(args.data, args.target)
        inputs[Path(args.data).name] = _sha256(args.data)
    elif args.rule:
        data, _ = _generate(args.rule, args.n, args.seed, args.noise_features)
        if args.target:
            data = data.with_target(args.target)
    else:
        raise CliError("give --data or --rule")
    known, rule = _known_rule(args.known_rule)
    if rule is None and args.rule:
        rule = get_rule(args.rule)
    family = _family(args.family, data.y)
    config = _audit_config(args, family, known)
    report = run_test(data, data.target, config)

    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    _write_report_artifacts(report, out_dir, rule, written)
    run_cfg = {
        "data": args.data, "rule": args.rule, "n": args.n, "seed": args.seed, "target": data.target,
        "audit": config.to_dict(),
    }
    (out_dir / "manifest.json").write_text(_manifest("audit", run_cfg, inputs, written))
    text, _ = render_ranking_table(report, limit=5)
    print(text, end="")
    print(f"selected: {{{', '.join(report.selected)}}}  D² = {report.d_squared:.6f}  outcome: {report.outcome}")
    return EXIT_CODES[report.outcome]


def cmd_distill(args) -> int:
    out_dir = Path(args.out_dir)
    inputs = {}
    if args.data:
        data = _load(args.data, args.target)
        inputs[Path(args.data).name] = _sha256(args.data)
    else:
        args.rule = args.rule or "patent-binary"
        data, _ = _generate(args.rule, args.n, args.seed, args.noise_features)
    known, rule = _known_rule(args.known_rule)
    if known is None and args.rule:
        rule = get_rule(args.rule)
        known = rule.features
    y = data.y
    binary = bool(np.isin(y, (0.0, 1.0)).all())
    metrics = {}

    if args.predictions:
        test = data
        scores = read_predictions(args.predictions, data.n_rows)
        inputs[Path(args.predictions).name] = _sha256(args.predictions)
        teacher = scores
        cuts = None
        if binary:
            pred = threshold(scores, [0.5])
            metrics["f1"] = f1(pred, test.y)
            metrics["accuracy"] = accuracy(pred, test.y)
        else:
            binary = False
    else:
        train_data, test = split(data, args.train_fraction, args.seed, by_group=data.groups is not None)
        tfeats = _names(args.teacher_features) or tuple(data.features)
        loss = args.loss or ("logistic" if binary else "squared")
        activation = args.activation or ("tanh" if binary else "relu")
        tcfg = TrainConfig(args.batch_size, args.lr, args.epochs, args.dropout, loss, args.seed)
        net = train(train_data, tfeats, config=tcfg, activation=activation)
        cuts = None
        if loss == "squared":
            k = int(max(train_data.y.max(), test.y.max())) + 1
            cuts = learn_thresholds(predict(net, train_data), train_data.y.astype(int), k).cuts
        pred = threshold(predict(net, test), cuts if cuts is not None else [0.5])
        metrics["accuracy"] = accuracy(pred, test.y)
        if binary:
            metrics["f1"] = f1(pred, test.y)
        if args.ablate:
            ab = threshold(predict(net, ablate(test, _names(args.ablate))), cuts if cuts is not None else [0.5])
            metrics["ablated"] = {"features": list(_names(args.ablate)), "accuracy": accuracy(ab, test.y)}
            if binary:
                metrics["ablated"]["f1"] = f1(ab, test.y)
        teacher = net
        out_dir.mkdir(parents=True, exist_ok=True)
        net.save(out_dir / "teacher.json")

    student_feats = _names(args.features) or tuple(f for f in test.features)
    family = BINOMIAL if binary and cuts is None else GAUSSIAN
    config = _audit_config(args, family, known)
    config = dataclasses.replace(config, features=None)
    result = distill_audit(teacher, test, student_feats, cuts=cuts, binary=binary and cuts is None,
                           config=config, known_rule=known)
    report = result.report

    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if (out_dir / "teacher.json").exists() and not args.predictions:
        written["teacher.json"] = _sha256(out_dir / "teacher.json")
    _write_report_artifacts(report, out_dir, rule, written)
    metrics = _rounded(metrics)
    _write(out_dir, "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n", written)
    run_cfg = {
        "data": args.data, "rule": args.rule, "n": args.n, "seed": args.seed, "target": data.target,
        "predictions": args.predictions, "teacher_features": args.teacher_features, "ablate": args.ablate,
        "train": {
            "batch_size": args.batch_size, "lr": args.lr, "epochs": args.epochs, "dropout": args.dropout,
            "loss": args.loss, "activation": args.activation, "train_fraction": args.train_fraction,
        },
        "audit": report.config.to_dict(),
    }
    (out_dir / "manifest.json").write_text(_manifest("distill", run_cfg, inputs, written))
    for k, v in sorted(metrics.items()):
        print(f"{k}: {v}")
    print(f"selected: {{{', '.join(report.selected)}}}  D² = {report.d_squared:.6f}  outcome: {report.outcome}")
    return EXIT_CODES[report.outcome]


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="circaudit", description="Detect circular features in tabular data and models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common_data(sp, rule_required=False):
        sp.add_argument("--rule", choices=RULE_CHOICES, required=rule_required, help="label rule / generator")
        sp.add_argument("--n", type=int, default=20_000, help="rows to generate")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--noise-features", type=int, default=0, help="extra pure-noise columns")
        sp.add_argument("--out-dir", default=".", help="directory for all outputs")

    def common_audit(sp):
        sp.add_argument("--data", help="input CSV")
        sp.add_argument("--target", help="target column (default: from the JSON sidecar)")
        sp.add_argument("--family", choices=("auto", GAUSSIAN, BINOMIAL), default="auto")
        sp.add_argument("--lambda", dest="lam", type=_lambda, default="gcv", help="gcv or fixed:<value>")
        sp.add_argument("--knots", type=_knots, default="auto", help="auto or interior knots per spline")
        sp.add_argument("--preselect", type=int, help="keep the m features most correlated with the target")
        sp.add_argument("--delta-close", type=_positive, default=DELTA_CLOSE)
        sp.add_argument("--eps-null", type=_positive, default=EPS_NULL)
        sp.add_argument("--features", help="comma list of candidate features")
        sp.add_argument("--exclude", help="comma list of features to leave out")
        sp.add_argument("--known-rule", help="rule id or comma list of the rule's defining features")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common_data(g, rule_required=True)
    g.add_argument("--out", help="CSV path (default: <out-dir>/data.csv)")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("audit", help="run the circularity test on a table")
    common_data(a)
    common_audit(a)
    a.set_defaults(func=cmd_audit)

    d = sub.add_parser("distill", help="audit a teacher model through its predictions")
    common_data(d)
    common_audit(d)
    d.add_argument("--predictions", help="external predictions CSV (row_id,score) for --data")
    d.add_argument("--teacher-features", help="comma list of features the teacher sees")
    d.add_argument("--ablate", help="comma list of features zeroed for an extra test evaluation")
    d.add_argument("--epochs", type=int, default=5)
    d.add_argument("--lr", type=_positive, default=0.01)
    d.add_argument("--batch-size", type=int, default=64)
    d.add_argument("--dropout", type=float, default=0.0)
    d.add_argument("--loss", choices=("logistic", "squared"))
    d.add_argument("--activation", choices=("tanh", "relu"))
    d.add_argument("--train-fraction", type=float, default=0.75)
    d.set_defaults(func=cmd_distill)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"circaudit: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
