"""Command-line entry point: generate, run, analyze, compare, diagnostics."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import reference_estimates
from .agents import (DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT, AgentConfig, AgentConfigError,
                     CredentialError, RemoteConfig, RetryPolicy, ScriptedConfig, SimulatedConfig,
                     beta_vector, load_agent_config, read_records, run_experiment)
from .design import (DesignSpec, design_diagnostics, design_manifest, dumps_design,
                     generate_design, read_design)
from .inference import (FitError, MnlFit, attribute_importance, build_design_matrix, fit_mnl,
                        format_p, head_to_head_margin, load_fit, marginal_effects, save_fit,
                        wald_table, write_coefficients_csv, write_effects_csv,
                        write_importance_csv)
from .prompts import load_template
from .schema import SchemaError, load_schema

log = logging.getLogger("dceaudit")


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _design_path(args, out: Path) -> Path:
    return Path(args.design) if args.design else out / "design.jsonl"


# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    schema = load_schema(args.schema)
    spec = DesignSpec(n_sets=args.n, j_profiles=args.j, seed=args.seed, schema_ref=schema.version)
    out = _out_dir(args)
    text = dumps_design(generate_design(schema, spec), schema)
    (out / "design.jsonl").write_text(text, encoding="utf-8")
    _write_json(out / "design.manifest.json", design_manifest(spec, schema, text))
    print(f"wrote {spec.n_sets} choice sets to {out / 'design.jsonl'}")
    return 0


def load_beta(spec: str, schema) -> np.ndarray:
    """Coefficients from ``builtin:<chooser>``, a fit file, or a vector file."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        try:
            return beta_vector(schema, reference_estimates.estimates_by_level(name, schema))
        except KeyError as exc:
            raise CliError(str(exc)) from exc
    data = json.loads(Path(spec).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "beta" in data and isinstance(data["beta"], list):
        fit = MnlFit.from_json(data)
        if fit.columns != schema.parameter_labels():
            raise CliError("fit file does not match the schema's coefficients")
        return fit.beta
    return beta_vector(schema, data)


def _agent_from_args(args, schema) -> AgentConfig:
    if args.agent_config:
        return load_agent_config(args.agent_config)
    if args.agent == "simulated":
        if not args.beta:
            raise CliError("--agent simulated needs --beta")
        return AgentConfig("simulated", simulated=SimulatedConfig(
            beta=load_beta(args.beta, schema).tolist(), noise=args.noise, seed=args.sim_seed))
    if args.agent == "scripted":
        if not args.replies:
            raise CliError("--agent scripted needs --replies")
        return AgentConfig("scripted", scripted=ScriptedConfig(args.replies))
    if not args.model:
        raise CliError("--agent remote needs --model")
    params = json.loads(args.params) if args.params else {}
    return AgentConfig("remote", remote=RemoteConfig(
        model=args.model, endpoint=args.endpoint, params=params, api_key_env=args.api_key_env,
        max_in_flight=args.max_in_flight, retry=RetryPolicy(max_attempts=args.max_attempts)))


def cmd_run(args) -> int:
    schema = load_schema(args.schema)
    template = load_template(args.template)
    out = _out_dir(args)
    design_path = _design_path(args, out)
    design = read_design(design_path, schema)
    agent = _agent_from_args(args, schema)
    records = out / "records.jsonl"
    if records.exists() and not (args.resume or args.overwrite):
        raise CliError(f"{records} exists; pass --resume to continue it or --overwrite")
    ref = {"path": str(design_path), "sha256": _sha256(design_path), "n_sets": len(design)}
    man = design_path.with_name(design_path.name.replace(".jsonl", "") + ".manifest.json")
    if man.exists():
        dm = json.loads(man.read_text())
        ref.update(seed=dm.get("seed"), generator=dm.get("generator"))
    summary = run_experiment(design, agent, template, schema, records, resume=not args.overwrite,
                             manifest_path=out / "run.manifest.json", design_ref=ref)
    print(json.dumps(summary.__dict__))
    return 0


def _plot_rows(effects, importance):
    for r in effects:
        yield ["effects", r.attribute, r.level, repr(r.effect), repr(r.ci_low), repr(r.ci_high)]
    for r in importance or []:
        yield ["importance", r.attribute, "", repr(r.normalized_importance), "", ""]


def cmd_analyze(args) -> int:
    schema = load_schema(args.schema)
    out = _out_dir(args)
    design_path = _design_path(args, out)
    rec_path = Path(args.records) if args.records else out / "records.jsonl"
    design = read_design(design_path, schema)
    records = read_records(rec_path)
    dm = build_design_matrix(records, design, schema)
    if dm.n_sets == 0:
        raise CliError("no effective responses")
    fit = fit_mnl(dm, ridge=args.ridge, force_ridge=args.force_ridge)
    if fit.flagged and not args.force:
        save_fit(fit, out / "fit.json")
        raise CliError("fit did not converge (see fit.json); rerun with --force to report anyway")

    save_fit(fit, out / "fit.json")
    write_coefficients_csv(fit, out / "coefficients.csv", force=args.force)
    effects = marginal_effects(fit, ci=args.ci, force=args.force) if fit.j_profiles == 2 else []
    write_effects_csv(effects, out / "effects.csv")
    importance = attribute_importance(dm, fit, force=args.force)
    write_importance_csv(importance, out / "importance.csv")
    with open(out / "plotdata.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["panel", "attribute", "level", "value", "ci_low", "ci_high"])
        w.writerows(_plot_rows(effects, importance))

    n_rec = len(records)
    lines = [
        f"records: {n_rec}  effective: {dm.n_sets}  dropped: {dm.n_dropped}  "
        f"response rate: {dm.n_sets / n_rec:.4f}",
        f"log-likelihood: {fit.log_likelihood:.4f}  iterations: {fit.iterations}  "
        f"converged: {fit.converged}  ridge: {fit.ridge:g}",
        f"warnings: {len(fit.warnings)}",
    ]
    lines += [f"  - {w}" for w in fit.warnings]
    lines.append("")
    lines.append(f"{'attribute':<26}{'level':<60}{'Est.':>7}{'SE':>7}{'p':>7}")
    for r in wald_table(fit, force=args.force):
        lines.append(f"{r.attribute:<26}{r.level[:58]:<60}{r.estimate:>7.2f}{r.se:>7.2f}{format_p(r.p):>7}")
    lines.append("")
    lines.append("attribute importance (LR, max = 100)")
    for r in sorted(importance, key=lambda r: -r.lr_statistic):
        lines.append(f"  {r.attribute:<26}{r.normalized_importance:>7.1f}  LR={r.lr_statistic:.2f} df={r.df}")
    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary, encoding="utf-8")

    produced = ["fit.json", "coefficients.csv", "effects.csv", "importance.csv", "plotdata.csv",
                "summary.txt"]
    _write_json(out / "analysis.manifest.json", {
        "inputs": {str(design_path): _sha256(design_path), str(rec_path): _sha256(rec_path)},
        "options": {"ridge": args.ridge, "ci": args.ci, "force": args.force},
        "outputs": {name: _sha256(out / name) for name in produced},
    })
    sys.stdout.write(summary)
    return 0


def compare_fits(a: MnlFit, b: MnlFit) -> tuple[list[dict], float]:
    if a.schema_version != b.schema_version or a.columns != b.columns:
        raise CliError("fits were estimated on different schemas")
    rows = []
    ea, eb = head_to_head_margin(a.beta), head_to_head_margin(b.beta)
    for k, (attr, level) in enumerate(a.columns):
        rows.append({
            "attribute": attr, "level": level,
            "est_a": float(a.beta[k]), "est_b": float(b.beta[k]),
            "delta_est": float(b.beta[k] - a.beta[k]),
            "effect_a": float(ea[k]), "effect_b": float(eb[k]),
            "delta_effect": float(eb[k] - ea[k]),
            "same_sign": bool(np.sign(a.beta[k]) == np.sign(b.beta[k])),
        })
    agreement = sum(r["same_sign"] for r in rows) / len(rows)
    return rows, agreement


def cmd_compare(args) -> int:
    rows, agreement = compare_fits(load_fit(args.fit_a), load_fit(args.fit_b))
    if args.out:
        out = _out_dir(args)
        with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    for r in rows:
        print(f"{r['attribute']:<26}{r['level'][:50]:<52}{r['est_a']:>7.2f}{r['est_b']:>7.2f}"
              f"{r['delta_est']:>8.2f}{r['delta_effect']:>8.3f}")
    print(f"sign agreement: {100 * agreement:.1f}%")
    return 0


def cmd_diagnostics(args) -> int:
    schema = load_schema(args.schema)
    out = _out_dir(args)
    design = read_design(_design_path(args, out), schema)
    diag = design_diagnostics(design, schema)
    _write_json(out / "diagnostics.json", diag.to_dict())
    print("overlap histogram (sets sharing k attribute levels):")
    for k, c in enumerate(diag.overlap_histogram):
        print(f"  k={k}: {c}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dceaudit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, design=True):
        sp.add_argument("--schema", help="schema JSON (default: bundled immigrant DCE)")
        sp.add_argument("--out", default=".", help="output directory")
        if design:
            sp.add_argument("--design", help="design JSONL (default: <out>/design.jsonl)")

    g = sub.add_parser("generate", help="draw random choice sets")
    common(g, design=False)
    g.add_argument("--n", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--j", type=int, default=2, help="profiles per choice set")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="collect choices from an agent")
    common(r)
    r.add_argument("--template", help="prompt template (default: bundled)")
    r.add_argument("--agent", choices=["remote", "simulated", "scripted"], default="simulated")
    r.add_argument("--agent-config", help="agent config JSON (overrides the flags below)")
    r.add_argument("--beta", help="builtin:<human|gpt-3.5|gpt-4>, a fit.json, or a vector JSON")
    r.add_argument("--noise", choices=["gumbel", "none"], default="gumbel")
    r.add_argument("--sim-seed", type=int, default=0)
    r.add_argument("--replies", help="canned replies file for --agent scripted")
    r.add_argument("--model")
    r.add_argument("--endpoint", default=DEFAULT_ENDPOINT)
    r.add_argument("--params", help="extra request parameters as a JSON object")
    r.add_argument("--api-key-env", default=DEFAULT_API_KEY_ENV,
                   help=f"env var holding the bearer credential (default {DEFAULT_API_KEY_ENV})")
    r.add_argument("--max-in-flight", type=int, default=4)
    r.add_argument("--max-attempts", type=int, default=5)
    r.add_argument("--resume", action="store_true", help="continue an existing records file")
    r.add_argument("--overwrite", action="store_true", help="discard an existing records file")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="fit the MNL model and write report tables")
    common(a)
    a.add_argument("--records", help="records JSONL (default: <out>/records.jsonl)")
    a.add_argument("--ridge", type=float, default=1e-6)
    a.add_argument("--force-ridge", action="store_true", help="penalize from the first iteration")
    a.add_argument("--ci", choices=["transform", "delta"], default="transform")
    a.add_argument("--force", action="store_true", help="report even if the fit is flagged")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="side-by-side comparison of two fits")
    c.add_argument("fit_a")
    c.add_argument("fit_b")
    c.add_argument("--out", help="write compare.csv here")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("diagnostics", help="overlap and level-balance summary of a design")
    common(d)
    d.set_defaults(func=cmd_diagnostics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, CredentialError, AgentConfigError, SchemaError, FitError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
