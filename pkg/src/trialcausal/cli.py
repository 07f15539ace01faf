"""Command-line pipeline: ingest, discover, bootstrap, survival, synth, report.

Every subcommand reads its inputs from files, writes only into ``--out``
and derives all randomness from ``--seed``.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import graphmetrics, heterogeneity, survival
from .discovery import DiscoveryConfig, TierKnowledge, markov_blanket, read_knowledge, run_pcmci
from .exceptions import ConfigError, ConvergenceError, DataError
from .panel import (
    PanelDataset,
    build_panel,
    panel_to_records,
    read_panel,
    read_variable_specs,
    read_visits_csv,
    split_by_region,
    write_panel,
    write_visits_csv,
)
from .synth import builtin_topcat_like, generate, read_scm, scm_to_dict

log = logging.getLogger("trialcausal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _dump(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _out_dir(args) -> Path:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)
    log.info("wrote %s", out / name)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _names(text: str | None) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _config(args) -> DiscoveryConfig:
    return DiscoveryConfig(alpha_pc=args.alpha_pc, alpha_mci=args.alpha_mci, tau_max=args.tau_max)


def _knowledge(args, panel: PanelDataset) -> TierKnowledge:
    if args.tiers:
        return read_knowledge(args.tiers)
    return TierKnowledge.from_specs(panel.variables)


def _regions(args, panel: PanelDataset) -> tuple[str, str] | None:
    labels = tuple(_names(args.regions))
    if len(labels) != 2:
        raise ConfigError("--regions needs exactly two comma-separated labels")
    return labels if set(labels) <= set(panel.regions) else None


def _scopes(args, panel: PanelDataset) -> dict[str, PanelDataset]:
    scopes = {"all": panel}
    labels = _regions(args, panel)
    if labels:
        a, b = split_by_region(panel, labels)
        scopes[labels[0]], scopes[labels[1]] = a, b
    return scopes


# --- subcommands -----------------------------------------------------------


def cmd_ingest(args) -> None:
    if not args.raw:
        raise ConfigError("ingest needs --raw (long-format visits CSV)")
    if not args.specs:
        raise ConfigError("ingest needs --specs")
    specs = read_variable_specs(args.specs)
    records, regions = read_visits_csv(args.raw)
    panel = build_panel(records, specs, args.bin_months, args.horizon_months, regions or None)
    out = _out_dir(args)
    write_panel(panel, out / "panel.json")
    _write(out, "ingest_summary.json", _dump({
        "patients": panel.n_patients,
        "periods": panel.n_periods,
        "variables": panel.names,
        "records": len(records),
    }))


def cmd_discover(args) -> None:
    panel = read_panel(_need(args.panel, "--panel"))
    config = _config(args)
    knowledge = _knowledge(args, panel)
    out = _out_dir(args)
    graphs = {}
    for scope, sub in _scopes(args, panel).items():
        g = run_pcmci(sub, knowledge, config, jobs=args.jobs)
        graphs[scope] = g
        _write(out, f"graph_{scope}.json", graphmetrics.to_json(g) + "\n")
        _write(out, f"graph_{scope}.dot", graphmetrics.to_dot(g, f"pcmci_{scope}"))
    rows = graphmetrics.outbound_table(graphs, args.treatment, panel.outcomes())
    _write(out, "table1.json", _dump({"source": args.treatment, "rows": rows}))
    header = ["target", "lag"] + [f"{s}_{k}" for s in graphs for k in ("score", "p_value")]
    flat = []
    for r in rows:
        line = [r["target"], r["lag"]]
        for s in graphs:
            cell = r[s]
            line += ["", ""] if cell is None else [f"{cell['score']:.4f}", f"{cell['p_value']:.3g}"]
        flat.append(line)
    _write(out, "table1.csv", _csv(flat, header))


def cmd_bootstrap(args) -> None:
    panel = read_panel(_need(args.panel, "--panel"))
    config = _config(args)
    knowledge = _knowledge(args, panel)
    labels = _regions(args, panel)
    if labels is None:
        raise DataError(f"panel has no patients labelled {args.regions}")
    report = heterogeneity.run_bootstrap(
        panel, knowledge, config, B=args.bootstrap_n, seed=args.seed, jobs=args.jobs,
        treatment=args.treatment, regions=labels,
    )
    out = _out_dir(args)
    _write(out, "bootstrap.json", _dump(heterogeneity.report_to_dict(report)))
    _write(out, "bootstrap.txt", heterogeneity.report_table(report))
    _write(out, "bootstrap_hist.csv", heterogeneity.histogram_csv(report))


def cmd_survival(args) -> None:
    panel = read_panel(_need(args.panel, "--panel"))
    outcomes = _names(args.outcomes) or panel.outcomes()
    orig = _names(args.orig_features)
    if not orig:
        raise ConfigError("survival needs --orig-features")
    out = _out_dir(args)
    comps, cox_rows = [], []
    for scope, sub in _scopes(args, panel).items():
        if args.mb_features:
            mb = _names(args.mb_features)
        elif args.graph_dir:
            path = Path(args.graph_dir) / f"graph_{scope}.json"
            try:
                g = graphmetrics.from_json(path.read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read {path}: {exc}") from None
            mb = {o: sorted(markov_blanket(g, o)) for o in outcomes}
        else:
            raise ConfigError("survival needs --mb-features or --graph-dir")
        comps.append(survival.compare_feature_sets(sub, outcomes, mb, orig, args.treatment, scope))
        for row in survival.cox_table(sub, outcomes, args.treatment):
            cox_rows.append({"scope": scope, **row})
    _write(out, "table4.csv", survival.comparison_to_csv(comps))
    _write(out, "table4.json", _dump(survival.comparison_to_dict(comps)))
    cols = ["scope", "outcome", "hazard_ratio", "ci_low", "ci_high", "p_value", "n", "events", "note"]
    _write(out, "table5.json", _dump({"treatment": args.treatment, "rows": cox_rows}))
    _write(out, "table5.csv", _csv(
        [
            [r["scope"], r["outcome"]] + ["" if r[c] is None else f"{r[c]:.4g}" for c in cols[2:6]]
            + [r["n"], r["events"], r["note"]]
            for r in cox_rows
        ],
        cols,
    ))


def cmd_synth(args) -> None:
    if args.spec:
        spec = read_scm(args.spec)
    else:
        spec = builtin_topcat_like(n_patients=args.n_patients, regional=not args.no_regional)
    panel, truth = generate(spec, args.seed)
    out = _out_dir(args)
    write_panel(panel, out / "panel.json")
    write_visits_csv(panel_to_records(panel), out / "visits.csv", dict(zip(panel.patient_ids, panel.regions)))
    _write(out, "truth.json", graphmetrics.to_json(truth) + "\n")
    _write(out, "truth.dot", graphmetrics.to_dot(truth, "truth"))
    _write(out, "scm.json", _dump(scm_to_dict(spec)))
    _write(out, "knowledge.json", _dump(spec.knowledge().to_dict()))
    _write(out, "specs.json", _dump({"variables": [
        {"name": s.name, "kind": s.kind, "tier": s.tier, "terminal": s.terminal} for s in spec.variables
    ]}))


REPORT_PARTS = [
    ("table1.csv", "Treatment outbound edges"),
    ("bootstrap.txt", "Regional comparison against the bootstrap distribution"),
    ("table4.csv", "AFT coefficients and BIC by feature set"),
    ("table5.csv", "Unadjusted Cox hazard ratios"),
    ("ingest_summary.json", "Ingest summary"),
]


def cmd_report(args) -> None:
    run = Path(_need(args.run_dir or args.out, "--run-dir"))
    if not run.is_dir():
        raise ConfigError(f"{run} is not a directory")
    parts = []
    for name, title in REPORT_PARTS:
        p = run / name
        if p.is_file():
            parts.append(f"## {title}\n\n```\n{p.read_text().rstrip()}\n```\n")
    if not parts:
        raise DataError(f"nothing to report in {run}")
    out = _out_dir(args) if args.out else run
    _write(out, "report.md", "# Run summary\n\n" + "\n".join(parts))


def _need(value, flag: str):
    if not value:
        raise ConfigError(f"missing required {flag}")
    return value


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--panel", help="panel JSON written by ingest or synth")
    common.add_argument("--specs", help="variable specs JSON")
    common.add_argument("--tiers", help="tier knowledge JSON (default: tiers from the panel's specs)")
    common.add_argument("--alpha-pc", type=float, default=0.01)
    common.add_argument("--alpha-mci", type=float, default=0.005)
    common.add_argument("--tau-max", type=int, default=1)
    common.add_argument("--bin-months", type=float, default=6.0)
    common.add_argument("--horizon-months", type=float, default=72.0)
    common.add_argument("--bootstrap-n", type=int, default=100)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", help="output directory")
    common.add_argument("--treatment", default="treatment")
    common.add_argument("--regions", default="West,East", help="two region labels to compare")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="trialcausal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("ingest", parents=[common], help="bin long-format visits into a panel")
    s.add_argument("--raw", help="CSV with patient_id,time_months,variable,value[,region]")
    s.set_defaults(func=cmd_ingest)
    s = sub.add_parser("discover", parents=[common], help="run PCMCI overall and per region")
    s.set_defaults(func=cmd_discover)
    s = sub.add_parser("bootstrap", parents=[common], help="regional discrepancy vs random splits")
    s.set_defaults(func=cmd_bootstrap)
    s = sub.add_parser("survival", parents=[common], help="AFT feature-set comparison and Cox baseline")
    s.add_argument("--outcomes", help="comma-separated outcomes (default: all)")
    s.add_argument("--mb-features", help="comma-separated features used for every outcome")
    s.add_argument("--graph-dir", help="discover output; Markov blankets are read from its graphs")
    s.add_argument("--orig-features", help="comma-separated baseline feature set")
    s.set_defaults(func=cmd_survival)
    s = sub.add_parser("synth", parents=[common], help="simulate a panel with known ground truth")
    s.add_argument("--spec", help="SCM spec JSON (default: the builtin trial-like model)")
    s.add_argument("--n-patients", type=int, default=1000)
    s.add_argument("--no-regional", action="store_true", help="builtin model without regional effects")
    s.set_defaults(func=cmd_synth)
    s = sub.add_parser("report", parents=[common], help="collect emitted tables into report.md")
    s.add_argument("--run-dir", help="directory holding earlier outputs")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.func is not cmd_report and not args.out:
            raise ConfigError("missing required --out")
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
