"""Command-line entry point.

Every subcommand writes one JSON report (sorted keys, exact rationals as
strings, no timings) to stdout or ``--output``.  Exit codes: 0 success,
1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import brst, checks, feynman_rules as fr, heat_kernel as hk, inner_regulator as reg, one_loop_ledger as led
from .errors import GoldenMismatch, VpdError
from .tensor_core import parse, serialize

DEFAULT_SEED = 12345
SEED_ENV = "VPDQFT_SEED"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    inputs: dict[str, str] = dc_field(default_factory=dict)
    output: str | None = None
    seed: int = DEFAULT_SEED
    samples: int | None = None
    lam: float = 1.0
    rho: float | None = None
    xi: str = "1"
    matter: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None and k != "output"}


# ------------------------------------------------------------------ documents

def _schema() -> dict:
    return json.loads(resources.files("vpdqft").joinpath("data/input_schema.json").read_text())


def load_document(path: str | Path, kind: str):
    """Read a YAML or JSON document and validate it against the published schema."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"{path} is not a valid document: {exc}") from None
    schema = _schema()
    sub = dict(schema["$defs"][kind])
    sub["$defs"] = schema["$defs"]
    try:
        jsonschema.validate(doc, sub)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"{path}: {exc.message}") from None
    return doc


def _read_corpus(path: str):
    text = Path(path).read_text() if Path(path).exists() else None
    if text is None:
        raise UsageError(f"cannot read {path}")
    stripped = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if stripped and stripped[0].startswith("("):
        return [parse(ln) for ln in stripped]
    doc = load_document(path, "corpus")
    return [parse(s) for s in doc["expressions"]]


# ---------------------------------------------------------------- golden table

@dataclass
class GoldenEntry:
    name: str
    value: Fraction | float
    tol: float = 0.0
    provenance: str = ""


def default_golden_path() -> Path:
    return Path(str(resources.files("vpdqft").joinpath("data/golden_constants.txt")))


def load_golden(path: str | Path) -> tuple[dict[str, GoldenEntry], list[tuple[str, str, str]]]:
    """Parse ``name = value [+- tol]  # provenance`` lines; unparseable lines are returned as problems."""
    entries, problems = {}, []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        body, _, prov = line.partition("#")
        if not body.strip():
            continue
        name, eq, rhs = body.partition("=")
        try:
            if not eq or not name.strip():
                raise ValueError
            val_txt, pm, tol_txt = rhs.partition("+-")
            val_txt = val_txt.strip()
            if pm:
                value, tol = float(val_txt), float(tol_txt)
            else:
                value, tol = Fraction(val_txt), 0.0
        except (ValueError, ZeroDivisionError):
            problems.append((f"line {n}", "parseable entry", line.strip()))
            continue
        entries[name.strip()] = GoldenEntry(name.strip(), value, tol, prov.strip())
    return entries, problems


def compute_golden(config: reg.RegulatorConfig) -> dict[str, tuple]:
    """Recompute every golden quantity; floats come with a Monte Carlo error."""
    out: dict[str, tuple] = {}
    gen = hk.divergent_trace_general()
    for name in hk.BASIS_NAMES:
        out[f"heat_kernel.{name}"] = (gen.coefficients[name],)
    cov = hk.specialize_covariant()
    for name, c in cov.coefficients.items():
        out[f"heat_kernel.covariant.{name}"] = (c,)
    pure = checks.pure_theory().details
    mat = checks.matter_determinants().details
    out["ledger.gauge_determinant"] = (Fraction(pure["gauge_determinant"]),)
    out["ledger.ghost_determinant"] = (Fraction(pure["ghost_determinant"]),)
    out["ledger.pure_total"] = (Fraction(pure["one_loop_total"]),)
    out["ledger.pure_beta"] = (led.beta_function(led.MatterContent.pure()).coefficient,)
    out["ledger.sm_bracket"] = (led.sm_ledger()[1],)
    out["ledger.sm_beta"] = (led.beta_function(led.MatterContent.standard_model()).coefficient,)
    for key in ("yang_mills", "dirac", "chiral_dirac", "scalar_doublet"):
        out[f"ledger.{key}"] = (Fraction(mat[key]),)
    out["ledger.coupling_unit"] = (led.COUPLING_UNIT,)
    m0 = reg.regularized_moment(0, config, stream=(7,))
    m2 = reg.regularized_moment(2, config, stream=(7,))
    out["regulator.volume"] = (m0.value, m0.error)
    out["regulator.eta_coefficient2"] = (m2.value, m2.error)
    return out


def compare_golden(golden: dict[str, GoldenEntry], computed: dict[str, tuple], nsigma: float = 4.0):
    mismatches = []
    for name in sorted(set(golden) | set(computed)):
        if name not in golden:
            mismatches.append((name, "<missing>", _jsonable(computed[name][0])))
            continue
        if name not in computed:
            mismatches.append((name, _jsonable(golden[name].value), "<not computed>"))
            continue
        g, c = golden[name], computed[name]
        if len(c) == 1 and isinstance(g.value, Fraction):
            ok = Fraction(c[0]) == g.value
        elif len(c) == 2:
            ok = abs(float(c[0]) - float(g.value)) <= g.tol + nsigma * float(c[1])
        else:
            ok = False
        if not ok:
            mismatches.append((name, _jsonable(g.value), _jsonable(c[0])))
    return mismatches


# -------------------------------------------------------------------- reports

def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _report(config: RunConfig, results: dict, verdicts: list[tuple[str, bool]]) -> dict:
    return {
        "command": config.subcommand,
        "config": config.to_dict(),
        "results": results,
        "verdicts": [{"property": p, "passed": bool(ok)} for p, ok in verdicts],
        "passed": all(ok for _, ok in verdicts),
    }


def dumps(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- subcommands

def _cmd_vertex(args, config: RunConfig) -> dict:
    if args.graph:
        config.inputs["graph"] = args.graph
        doc = load_document(args.graph, "graph")
        expr = fr.assemble_amplitude(doc)
        results = {"expression": serialize(expr), "free_indices": [s.token() for s in expr.free_indices()]}
        if args.numeric:
            if not doc.get("momenta"):
                raise UsageError("--numeric needs a 'momenta' section in the graph document")
            k = {str(t): v["k"] for t, v in doc["momenta"].items()}
            K = {str(t): v["K"] for t, v in doc["momenta"].items()}
            results["value"] = fr.evaluate_numeric(expr, k, K, lam=args.lam)
        return _report(config, results, [("feynman.graph_assembly", True)])
    if not args.kind:
        raise UsageError("vertex needs --kind or --graph")
    builders = {"triGauge": fr.three_gauge_vertex, "quadGauge": fr.four_gauge_vertex,
                "ghostGauge": fr.ghost_gauge_vertex}
    expr = builders[args.kind]()
    results = {"kind": args.kind, "expression": serialize(expr),
               "free_indices": [s.token() for s in expr.free_indices()],
               "divergence_index": fr.vertex_divergence_index(args.kind)}
    if args.numeric:
        n = fr.VERTEX_KINDS[args.kind].legs
        rng = np.random.Generator(np.random.Philox(config.seed))
        k = rng.normal(size=(n, 4))
        K = rng.normal(size=(n, 4))
        k[-1] = -k[:-1].sum(axis=0)
        K[-1] = -K[:-1].sum(axis=0)
        _, val = fr.vertex_numeric(args.kind, k, K, args.lam)
        results.update(k=k, K=K, value=val)
    return _report(config, results, [("feynman.vertex_construction", True)])


def _cmd_power_count(args, config: RunConfig) -> dict:
    if args.external is None:
        results = {"vertex_indices": {k: fr.vertex_divergence_index(k) for k in sorted(fr.VERTEX_KINDS)}}
        return _report(config, results, [("feynman.power_counting", all(v == 0 for v in
                                                                         results["vertex_indices"].values()))])
    omega = fr.superficial_degree(args.external)
    results = {"external_lines": args.external, "omega": omega, "superficially_divergent": omega >= 0}
    return _report(config, results, [("feynman.power_counting", omega == 4 - args.external)])


def _cmd_divergence(args, config: RunConfig) -> dict:
    if args.operator:
        config.inputs["operator"] = args.operator
        doc = load_document(args.operator, "operator")
        coeffs = {k: parse(v) for k, v in (doc.get("coefficients") or {}).items()}
        spec = hk.FluctuationOperatorSpec(doc["form"], coeffs, xi=Fraction(str(doc.get("xi", 1))))
    else:
        spec = hk.FluctuationOperatorSpec(args.form)
    if spec.form == "covariantAE":
        res = hk.specialize_covariant(spec)
        prop = "heat_kernel.covariant_specialization"
    else:
        res = hk.divergent_trace_general(spec)
        prop = "heat_kernel.master_coefficients"
    results = {"form": spec.form, "expression": serialize(res.expr),
               "coefficients": res.coefficients, "residual": serialize(res.residual),
               "prefactor": "i Omega4/eps"}
    return _report(config, results, [(prop, res.residual.is_zero())])


def _matter(args, config: RunConfig) -> led.MatterContent:
    config.matter = args.matter
    if args.matter == "pure":
        return led.MatterContent.pure()
    if args.matter == "sm":
        return led.MatterContent.standard_model()
    config.inputs["matter"] = args.matter
    return led.MatterContent.from_mapping(load_document(args.matter, "matter") or {})


def _cmd_beta(args, config: RunConfig) -> dict:
    content = _matter(args, config)
    entries, bracket = led.ledger(content)
    beta = led.beta_function(content)
    rc = led.renormalized_coupling(content)
    results = {"entries": [e.to_dict() for e in entries], "bracket": bracket, "coupling_C": rc.C,
               "coupling_unit": "2 Omega4 Omega1 = 1/(180 4^5 pi^5)", "lambda_power": -2, "beta": beta.to_dict()}
    if args.command == "beta":
        results = {"bracket": bracket, "beta": beta.to_dict(), "coupling_C": rc.C, "lambda_power": -2}
    return _report(config, results, [("ledger.pipeline", True)])


def _reg_config(args, config: RunConfig) -> reg.RegulatorConfig:
    if args.samples <= 0 or args.lam <= 0:
        raise UsageError("--samples and --lambda must be positive")
    config.samples = args.samples
    config.lam = args.lam
    return reg.RegulatorConfig(lam=args.lam, samples=args.samples, seed=config.seed, workers=args.workers)


def _cmd_measure(args, config: RunConfig) -> dict:
    rc = _reg_config(args, config)
    m = reg.regularized_moment(args.rank, rc)
    results = m.to_dict()
    verdicts = []
    if args.rank == 0:
        ref = reg.analytic_volume(args.lam)
        results["analytic"] = ref
        verdicts.append(("regulator.volume", abs(m.value - ref) <= 4 * m.error))
    elif args.rank % 2:
        verdicts.append(("regulator.odd_moment_zero", abs(m.value) <= 3 * m.error))
    else:
        verdicts.append(("regulator.moment", True))
    return _report(config, results, verdicts)


def _cmd_scaling(args, config: RunConfig) -> dict:
    rc = _reg_config(args, config)
    config.rho = args.rho
    ranks = [args.rank] if args.rank is not None else [0, 2]
    reps = [reg.scaling_covariance_check(r, args.rho, rc) for r in ranks]
    return _report(config, {"checks": [r.to_dict() for r in reps]},
                   [(f"regulator.scaling_r{r.rank}", r.passed) for r in reps])


def _cmd_brst(args, config: RunConfig) -> dict:
    if args.corpus:
        config.inputs["corpus"] = args.corpus
        exprs = _read_corpus(args.corpus)
    else:
        exprs = None
    if args.check == "nilpotency":
        if exprs is None:
            exprs = list(brst.generators().values()) + brst.monomial_corpus(args.corpus_size, config.seed)
        rows = []
        for e in exprs:
            r = brst.nilpotency_check(e, args.metric)
            rows.append({"expression": serialize(e), "passed": r.passed, "residual": serialize(r.residual)})
        results = {"metric": args.metric, "count": len(rows), "failures": [r for r in rows if not r["passed"]]}
        return _report(config, results, [("brst.nilpotency", all(r["passed"] for r in rows))])
    if exprs is not None:
        red = brst.action_reducer()
        rows = []
        for e in exprs:
            res = red.reduce(brst.slope_operator(e, args.metric))
            rows.append({"expression": serialize(e), "invariant": res.is_zero(), "residual": serialize(res)})
        return _report(config, {"metric": args.metric, "rows": rows},
                       [("brst.invariance", all(r["invariant"] for r in rows))])
    inv = brst.brst_invariance_of_action(metric=args.metric)
    dec = brst.s_of_gauge_fermion()
    results = {"metric": args.metric, "classical_residual": serialize(inv.classical_residual),
               "gauge_fixing_residual": serialize(inv.gauge_fixing_residual),
               "gauge_fermion_residual": serialize(dec.residual)}
    return _report(config, results, [("brst.action_invariance", inv.passed),
                                     ("brst.gauge_fermion_decomposition", dec.passed)])


def verify_all(samples: int, seed: int, workers: int, corpus_size: int, golden_path: str | Path | None) -> dict:
    results = checks.run_all(samples=samples, seed=seed, workers=workers, corpus_size=corpus_size)
    golden_path = Path(golden_path) if golden_path else default_golden_path()
    golden, problems = load_golden(golden_path)
    computed = compute_golden(reg.RegulatorConfig(samples=samples, seed=seed, workers=workers))
    mismatches = problems + compare_golden(golden, computed)
    return {
        "checks": [r.to_dict() for r in results],
        "golden": {"file": golden_path.name, "entries": len(golden),
                   "mismatches": [{"name": n, "golden": g, "computed": c} for n, g, c in mismatches]},
    }


def _cmd_verify_all(args, config: RunConfig) -> dict:
    config.samples = args.samples
    if args.samples <= 0 or args.corpus_size < 0:
        raise UsageError("--samples must be positive and --corpus-size non-negative")
    out = verify_all(args.samples, config.seed, args.workers, args.corpus_size, args.golden)
    verdicts = [(c["id"], c["passed"]) for c in out["checks"]]
    verdicts.append(("golden_constants", not out["golden"]["mismatches"]))
    if out["golden"]["mismatches"]:
        err = GoldenMismatch((m["name"], m["golden"], m["computed"]) for m in out["golden"]["mismatches"])
        print(str(err), file=sys.stderr)
    return _report(config, out, verdicts)


# ----------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpdqft", description="One-loop analysis of the volume-preserving gauge theory.")
    p.add_argument("--output", "-o", help="write the JSON report here instead of stdout")
    p.add_argument("--seed", type=int, help=f"random seed (default ${SEED_ENV} or {DEFAULT_SEED})")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    v = sub.add_parser("vertex", help="vertex factor or tree amplitude")
    v.add_argument("--kind", choices=sorted(fr.VERTEX_KINDS))
    v.add_argument("--graph", help="graph description document")
    v.add_argument("--numeric", action="store_true")
    v.add_argument("--lambda", dest="lam", type=float, default=1.0)

    pc = sub.add_parser("power-count", help="superficial degree of divergence")
    pc.add_argument("--external", type=int)

    d = sub.add_parser("divergence", help="pole part of the one-loop trace log")
    d.add_argument("--operator", help="operator description document")
    d.add_argument("--form", choices=("generalBC", "covariantAE"), default="generalBC")

    for name in ("beta", "ledger"):
        b = sub.add_parser(name, help="beta-function ledger")
        b.add_argument("--matter", default="pure", help="pure, sm, or a matter document")

    for name in ("measure", "scaling"):
        m = sub.add_parser(name, help="inner-momentum regulator Monte Carlo")
        m.add_argument("--rank", type=int, default=None if name == "scaling" else 0)
        m.add_argument("--lambda", dest="lam", type=float, default=1.0)
        m.add_argument("--samples", type=int, default=1_000_000)
        m.add_argument("--workers", type=int, default=1)
        if name == "scaling":
            m.add_argument("--rho", type=float, required=True)

    br = sub.add_parser("brst", help="BRST nilpotency and invariance")
    br.add_argument("--check", choices=("nilpotency", "action"), required=True)
    br.add_argument("--corpus", help="expressions, one per line or a corpus document")
    br.add_argument("--corpus-size", type=int, default=500)
    br.add_argument("--metric", choices=("transforming", "frozen"), default="transforming")

    va = sub.add_parser("verify-all", help="run every acceptance check and the golden table")
    va.add_argument("--samples", type=int, default=10_000_000)
    va.add_argument("--corpus-size", type=int, default=500)
    va.add_argument("--workers", type=int, default=1)
    va.add_argument("--golden", help="golden constants file (default: packaged table)")
    return p


_COMMANDS = {
    "vertex": _cmd_vertex, "power-count": _cmd_power_count, "divergence": _cmd_divergence,
    "beta": _cmd_beta, "ledger": _cmd_beta, "measure": _cmd_measure, "scaling": _cmd_scaling,
    "brst": _cmd_brst, "verify-all": _cmd_verify_all,
}


def _seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        config = RunConfig(args.command, output=args.output, seed=_seed(args.seed))
        if hasattr(args, "workers") and args.workers < 1:
            raise UsageError("--workers must be at least 1")
        report = _COMMANDS[args.command](args, config)
    except (UsageError, VpdError, ValueError) as exc:
        print(f"vpdqft {args.command}: {exc}", file=sys.stderr)
        return 2
    text = dumps(report)
    if args.output:
        Path(args.output).write_text(text)
        for v in report["verdicts"]:
            print(f"{'PASS' if v['passed'] else 'FAIL'}  {v['property']}")
    else:
        sys.stdout.write(text)
    return 0 if report["passed"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
