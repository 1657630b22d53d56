"""Command-line runner for the debiasing experiments.

Every subcommand resolves flags and an optional JSON config into one
configuration, hashes it, runs, and writes results plus a manifest.  Exit
status: 0 when every asserted tolerance holds, 1 naming the failed
assertions, 2 for invalid input.
"""

import argparse
import csv
import datetime
import hashlib
import io
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, costs, experiments
from .decomposition import barycenter_decompose, entropic_interpolation, gaussian_identity_check
from .decomposition import negdef_lse_roundtrip, saddle_value_check
from .divergences import CSV_COLUMNS, debiased_uot, fmt, mmd_squared, sinkhorn_divergence
from .instances import pairwise_power, rng_for, squared_distances
from .kernels import is_negative_definite
from .solvers import ConvergenceError, sinkhorn

EXPERIMENTS = (
    "check-debias", "sinkhorn", "divergence", "uot", "mmd", "decompose", "interpolate",
    "gaussian-identity", "saddle-check", "kl-lemmas", "negdef-roundtrip", "counterexample", "suite",
)
ALWAYS_STOCHASTIC = {"kl-lemmas", "negdef-roundtrip", "suite"}
CONFIG_KEYS = {
    "experiment", "seed", "epsilon", "rho", "tol", "instance", "tolerances", "output",
    "x", "y", "t", "n_samples", "instances", "max_iter", "suite",
}
TOLERANCES = {
    "sinkhorn": {"duality_gap": 1e-8},
    "divergence": {"nonnegativity": 1e-8},
    "uot": {"nonnegativity": 1e-8},
    "mmd": {"nonnegativity": 1e-10},
    "decompose": {"gap": 1e-6},
    "interpolate": {"std_relative": 0.05},
    "gaussian-identity": {"relative_error": 1e-6},
    "saddle-check": {"value_gap": 1e-6, "stationarity": 1e-10},
    "negdef-roundtrip": {"z_score": 4.0},
    "counterexample": {"ot_mu_nu": 1e-9, "S_eps": -1e-3},
}


class ValidationError(Exception):
    """Invalid input; ``key`` locates the offending setting."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    p = _Parser(prog="debiasable", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="experiment", metavar="experiment")
    sub.required = True
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file; flags override its values")
        s.add_argument("--output", help="directory for results and manifest (default: stdout)")
        s.add_argument("--format", choices=("csv", "json"))
        s.add_argument("--seed", type=int)
        s.add_argument("--epsilon", type=_floats, help="comma-separated, 'inf' allowed")
        s.add_argument("--tol", type=float)
        if name == "uot":
            s.add_argument("--rho", type=float)
        if name in ("interpolate", "gaussian-identity"):
            s.add_argument("--x", type=_floats)
            s.add_argument("--y", type=_floats)
        if name == "interpolate":
            s.add_argument("--t", type=_floats)
        if name == "negdef-roundtrip":
            s.add_argument("--n-samples", dest="n_samples", type=int)
        if name == "kl-lemmas":
            s.add_argument("--instances", type=int)
        if name == "decompose":
            s.add_argument("--max-iter", dest="max_iter", type=int)
        if name == "suite":
            s.add_argument("suite", choices=("fast", "full"))
        if name not in ("counterexample", "interpolate", "gaussian-identity", "kl-lemmas", "suite"):
            s.add_argument("--n-points", dest="n_points", type=int)
            s.add_argument("--dimension", type=int)
            s.add_argument("--cost", help="sqeuclidean, euclidean or power:P")
    return p


def _line_of(text, key):
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 1


def _load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}")
    if not isinstance(data, dict):
        raise ValidationError(f"{path}:1: config must be a JSON object")
    return data, text


def _as_float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return np.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"not a number: {v!r}")
    return float(v)


def _float_list(v):
    return [_as_float(x) for x in (v if isinstance(v, list) else [v])]


def _matrix(v):
    a = np.array([[_as_float(x) for x in row] for row in v], dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a 2-D array")
    return a


def resolve(argv):
    """Parse flags and config into a plain, JSON-serializable configuration."""
    args = build_parser().parse_args(argv)
    exp = args.experiment
    cfg, text, path = {}, "", None
    if args.config:
        path = args.config
        cfg, text = _load_config(path)

    def where(key):
        return f"{path}:{_line_of(text, key)}" if path else f"--{key.replace('_', '-')}"

    try:
        unknown = sorted(set(cfg) - CONFIG_KEYS)
        if unknown:
            raise ValidationError(f"unknown config key {unknown[0]!r}", unknown[0])
        if "experiment" in cfg:
            if cfg["experiment"] not in EXPERIMENTS:
                raise ValidationError(f"unknown experiment {cfg['experiment']!r}", "experiment")
            if cfg["experiment"] != exp:
                raise ValidationError(
                    f"config names experiment {cfg['experiment']!r} but {exp!r} was requested", "experiment")
        out = {"experiment": exp}
        flags = {k: v for k, v in vars(args).items()
                 if v is not None and k not in ("config", "output", "format", "experiment")}
        merged = {k: v for k, v in cfg.items() if k not in ("experiment", "output")}
        merged.update(flags)
        for key in ("epsilon", "x", "y", "t"):
            if key in merged:
                try:
                    merged[key] = _float_list(merged[key])
                except ValueError as exc:
                    raise ValidationError(f"{key}: {exc}", key)
        for key in ("rho", "tol"):
            if key in merged:
                try:
                    merged[key] = _as_float(merged[key])
                except ValueError as exc:
                    raise ValidationError(f"{key}: {exc}", key)
        for key in ("seed", "n_samples", "instances", "max_iter"):
            if key in merged and (isinstance(merged[key], bool) or not isinstance(merged[key], int)):
                raise ValidationError(f"{key} must be an integer", key)
        if "seed" in merged and merged["seed"] < 0:
            raise ValidationError("seed must be nonnegative", "seed")
        out.update(merged)
        out["instance"] = _resolve_instance(exp, cfg.get("instance"), args)
        tol_defaults = TOLERANCES.get(exp, {})
        given = cfg.get("tolerances", {})
        if not isinstance(given, dict):
            raise ValidationError("tolerances must be an object", "tolerances")
        for k in given:
            if k not in tol_defaults:
                raise ValidationError(f"unknown tolerance {k!r} for {exp}", k)
        out["tolerances"] = {**tol_defaults, **{k: float(v) for k, v in given.items()}}
        stochastic = exp in ALWAYS_STOCHASTIC or (out["instance"] or {}).get("kind") in ("cloud", "lse")
        if stochastic and "seed" not in out:
            raise ValidationError(f"experiment {exp!r} is stochastic and needs an explicit seed", "seed")
        if exp == "uot" and "rho" not in out:
            raise ValidationError("uot needs rho", "rho")
        for key in ("epsilon",):
            for e in out.get(key, []):
                if not e >= 0:
                    raise ValidationError("epsilon values must be nonnegative", key)
        if exp in ("interpolate", "gaussian-identity"):
            for key in ("x", "y"):
                if key not in out:
                    raise ValidationError(f"{exp} needs --{key}", key)
            if len(out["x"]) != len(out["y"]):
                raise ValidationError("x and y must have the same dimension", "y")
        if exp == "interpolate" and any(not 0 < t < 1 for t in out.get("t", [0.5])):
            raise ValidationError("t values must lie in (0, 1)", "t")
    except ValidationError as exc:
        loc = where(exc.key) if exc.key else (path or "argv")
        raise ValidationError(f"{loc}: {exc}") from None
    output = cfg.get("output", {}) if isinstance(cfg.get("output"), dict) else {}
    out_dir = args.output or output.get("path")
    out_fmt = args.format or output.get("format", "csv")
    if out_fmt not in ("csv", "json"):
        raise ValidationError(f"{where('output')}: format must be csv or json")
    return out, out_dir, out_fmt


def _resolve_instance(exp, inst, args):
    if exp in ("counterexample", "interpolate", "gaussian-identity", "kl-lemmas", "suite"):
        return None
    gen = {"kind": "lse" if exp == "decompose" else "cloud", "n_points": 5, "dimension": 2,
           "cost": "sqeuclidean"}
    if exp == "decompose":
        gen["z_points"] = 10
    if inst is not None:
        if not isinstance(inst, dict):
            raise ValidationError("instance must be an object", "instance")
        if "kind" not in inst:
            return _inline_instance(exp, inst)
        if inst["kind"] not in ("cloud", "lse"):
            raise ValidationError(f"unknown instance kind {inst['kind']!r}", "kind")
        gen.update(inst)
    for key in ("n_points", "dimension", "cost"):
        if getattr(args, key, None) is not None:
            gen[key] = getattr(args, key)
    if not isinstance(gen["n_points"], int) or gen["n_points"] < 1:
        raise ValidationError("n_points must be a positive integer", "n_points")
    try:
        _cost_fn(gen["cost"])
    except ValueError as exc:
        raise ValidationError(str(exc), "cost")
    return gen


def _inline_instance(exp, inst):
    need = ("psi", "lambda", "mu", "nu") if exp == "decompose" else ("cost",)
    for key in need:
        if key not in inst:
            raise ValidationError(f"inline instance needs {key!r}", "instance")
    out = {"kind": "inline"}
    try:
        for key in ("cost", "psi"):
            if key in inst:
                out[key] = [[fmt(v) for v in row] for row in _matrix(inst[key])]
        for key in ("lambda", "mu", "nu"):
            if key in inst:
                out[key] = [_as_float(v) for v in inst[key]]
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"bad instance array: {exc}", "instance")
    if "cost" in out:
        n = len(out["cost"])
        if any(len(row) != n for row in out["cost"]):
            raise ValidationError("cost must be square", "cost")
        for key in ("mu", "nu"):
            if key in out and len(out[key]) != n:
                raise ValidationError(f"{key} length does not match the cost", key)
    return out


def _cost_fn(name):
    if name == "sqeuclidean":
        return squared_distances
    if name == "euclidean":
        return lambda x: pairwise_power(x, p=1)
    if isinstance(name, str) and name.startswith("power:"):
        p = float(name.split(":", 1)[1])
        return lambda x: pairwise_power(x, p=p)
    raise ValueError(f"unknown cost {name!r}")


def materialize(cfg):
    """Instance arrays from the resolved config; generated ones use ``rng_for(seed, experiment)``."""
    inst = cfg["instance"]
    if inst["kind"] == "inline":
        data = {k: np.array([[float(v) for v in row] for row in inst[k]]) for k in ("cost", "psi") if k in inst}
        data.update({k: np.array(inst[k]) for k in ("lambda", "mu", "nu") if k in inst})
        if "cost" in data:
            n = data["cost"].shape[0]
            data.setdefault("mu", np.full(n, 1 / n))
            data.setdefault("nu", np.full(n, 1 / n))
        return data
    rng = rng_for(cfg["seed"], cfg["experiment"])
    n, d = inst["n_points"], inst["dimension"]
    if inst["kind"] == "lse":
        nz = inst["z_points"]
        return {"psi": 2 * rng.random((n, nz)), "lambda": rng.dirichlet(np.ones(nz)),
                "mu": rng.dirichlet(np.ones(n)), "nu": rng.dirichlet(np.ones(n))}
    x = rng.random((n, d))
    return {"cost": _cost_fn(inst["cost"])(x), "mu": rng.dirichlet(np.ones(n)),
            "nu": rng.dirichlet(np.ones(n)), "points": x}


def _sanitize(obj):
    """JSON-safe copy: non-finite floats become ``"inf"``/``"-inf"``/``"nan"`` strings."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return _json_value(obj)


def config_hash(cfg):
    blob = json.dumps(_sanitize(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Run:
    """Records and named assertions for one experiment."""

    def __init__(self):
        self.records = []
        self.assertions = []

    def check(self, name, value, bound, relation="<="):
        value = float(value)
        ok = {"<=": value <= bound, ">=": value >= bound, "<": value < bound}[relation]
        self.assertions.append(experiments.Assertion(name, value, bound, relation, bool(ok)))


def _epsilons(cfg, default=(1.0,)):
    return cfg.get("epsilon", list(default))


def run_check_debias(cfg, run):
    c = costs.CostMatrix.from_array(materialize(cfg)["cost"])
    cert = costs.is_debiasable(c)
    strict = costs.is_debiasable(c, strict=True)
    row = {"debiasable": cert.verdict, "strictly_debiasable": strict.verdict, "min_c0": cert.value,
           "witness": "" if cert.witness is None else f"{cert.witness[0]}:{cert.witness[1]}"}
    if cert.verdict and c.symmetric:
        back = costs.eval_inf_rep(costs.constructive_inf_rep(c)).entries
        with np.errstate(invalid="ignore"):
            diff = np.abs(back - c.entries)
        diff[back == c.entries] = 0.0  # equal infinities count as exact
        err = float(np.nan_to_num(diff, nan=np.inf).max())
        row["roundtrip_error"] = err
        run.check("inf_rep_roundtrip", err, 0.0)
    run.records.append(row)


def run_sinkhorn(cfg, run):
    data = materialize(cfg)
    tol = cfg.get("tol", 1e-10)
    for eps in _epsilons(cfg):
        sol = sinkhorn(data["cost"], data["mu"], data["nu"], eps, tol)
        gap = abs(sol.primal_value - sol.dual_value) / (1 + abs(sol.primal_value))
        run.records.append({"epsilon": eps, "primal_value": sol.primal_value, "dual_value": sol.dual_value,
                            "iterations": sol.iterations, "marginal_error": sol.marginal_error})
        run.check(f"duality_gap[eps={fmt(eps)}]", gap, cfg["tolerances"]["duality_gap"])


def _divergence_rows(cfg, run, reports, c):
    negdef = is_negative_definite(c).verdict
    key = "nonnegativity"
    for r in reports:
        run.records.append({name: getattr(r, name) for name in CSV_COLUMNS})
        if negdef and key in cfg["tolerances"]:
            run.check(f"nonnegative[eps={fmt(r.epsilon)}]", r.debiased, -cfg["tolerances"][key], ">=")


def run_divergence(cfg, run):
    data = materialize(cfg)
    tol = cfg.get("tol", 1e-10)
    reports = [sinkhorn_divergence(data["cost"], data["mu"], data["nu"], e, tol) for e in _epsilons(cfg)]
    _divergence_rows(cfg, run, [_with_seed(r, cfg) for r in reports], data["cost"])


def run_uot(cfg, run):
    data = materialize(cfg)
    tol = cfg.get("tol", 1e-10)
    reports = [debiased_uot(data["cost"], data["mu"], data["nu"], e, cfg["rho"], tol) for e in _epsilons(cfg)]
    _divergence_rows(cfg, run, [_with_seed(r, cfg) for r in reports], data["cost"])


def run_mmd(cfg, run):
    data = materialize(cfg)
    _divergence_rows(cfg, run, [_with_seed(mmd_squared(data["cost"], data["mu"], data["nu"]), cfg)],
                     data["cost"])


def _with_seed(r, cfg):
    return replace(r, seed=cfg.get("seed"))


def run_decompose(cfg, run):
    data = materialize(cfg)
    for eps in _epsilons(cfg):
        sol = barycenter_decompose(data["psi"], data["lambda"], data["mu"], data["nu"], eps,
                                   tol=cfg.get("tol", 1e-9), max_iter=cfg.get("max_iter", 500))
        rec = sol.to_json()
        rec["flags"] = ",".join(rec["flags"])
        rec["side_values"] = ",".join(fmt(v) for v in rec["side_values"])
        run.records.append({"epsilon": eps, **rec})
        run.check(f"decomposition_gap[eps={fmt(eps)}]", sol.gap, cfg["tolerances"]["gap"])


def run_interpolate(cfg, run):
    x, y = np.array(cfg["x"]), np.array(cfg["y"])
    rel = cfg["tolerances"]["std_relative"]
    for eps in _epsilons(cfg):
        for r in entropic_interpolation(x, y, eps, cfg.get("t", [0.25, 0.5, 0.75])):
            rec = {"t": r.t, "epsilon": eps}
            for k in range(x.size):
                rec[f"mean_{k}"] = r.mean[k]
                rec[f"std_{k}"] = r.std[k]
                rec[f"mean_target_{k}"] = r.mean_target[k]
            rec.update({"std_target": r.std_stated, "std_gibbs": r.std_gibbs,
                        "mean_deviation": r.mean_deviation, "std_deviation": r.std_deviation,
                        "step": r.step})
            run.records.append(rec)
            tag = f"[eps={fmt(eps)},t={fmt(r.t)}]"
            run.check(f"mean_deviation{tag}", r.mean_deviation, 2 * r.step)
            run.check(f"std_deviation{tag}", r.std_deviation, rel * r.std_stated + r.step)


def run_gaussian_identity(cfg, run):
    for eps in _epsilons(cfg):
        r = gaussian_identity_check(cfg["x"], cfg["y"], eps)
        run.records.append({"epsilon": eps, "dimension": len(cfg["x"]), "lhs": r.lhs, "rhs": r.rhs,
                            "relative_error": r.relative_error})
        run.check(f"relative_error[eps={fmt(eps)}]", r.relative_error, cfg["tolerances"]["relative_error"])


def run_saddle(cfg, run):
    data = materialize(cfg)
    for eps in _epsilons(cfg):
        r = saddle_value_check(data["cost"], data["mu"], data["nu"], eps, cfg.get("tol", 1e-12))
        run.records.append({"epsilon": eps, "ot_value": r.ot_value, "lagrangian_value": r.lagrangian_value,
                            "stationarity_residual": r.stationarity_residual, "mass_bound": r.mass_bound,
                            "max_density": r.max_density})
        tag = f"[eps={fmt(eps)}]"
        run.check(f"saddle_value_gap{tag}", r.value_gap / (1 + abs(r.ot_value)), cfg["tolerances"]["value_gap"])
        run.check(f"stationarity{tag}", r.stationarity_residual, cfg["tolerances"]["stationarity"])


def run_kl_lemmas(cfg, run):
    res = experiments.CriterionResult(9, "kl-lemmas")
    worst = experiments.kl_lemmas(experiments._Checker(res), rng_for(cfg["seed"], "kl-lemmas"),
                                  n_instances=cfg.get("instances", 100))
    run.records.append({k: float(v) for k, v in worst.items()})
    run.assertions.extend(res.assertions)


def run_negdef_roundtrip(cfg, run):
    data = materialize(cfg)
    n = cfg.get("n_samples", 10**5)
    for eps in _epsilons(cfg):
        r = negdef_lse_roundtrip(data["cost"], eps, n, cfg["seed"])
        run.records.append({"epsilon": eps, "n_samples": n, "max_relative_error": r.max_relative_error,
                            "max_z_score": r.max_z_score, "max_cost_error": r.max_cost_error})
        run.check(f"z_score[eps={fmt(eps)}]", r.max_z_score, cfg["tolerances"]["z_score"])


def run_counterexample(cfg, run):
    for eps in _epsilons(cfg):
        r = sinkhorn_divergence(experiments.COUNTEREXAMPLE_COST, experiments.COUNTEREXAMPLE_MU,
                                experiments.COUNTEREXAMPLE_NU, eps)
        run.records.append({name: getattr(r, name) for name in CSV_COLUMNS})
        tag = f"[eps={fmt(eps)}]"
        run.check(f"abs_ot_mu_nu{tag}", abs(r.raw_xy), cfg["tolerances"]["ot_mu_nu"])
        run.check(f"S_eps{tag}", r.debiased, cfg["tolerances"]["S_eps"], "<")


def run_suite(cfg, run):
    results = experiments.run_suite(cfg["suite"], cfg["seed"])
    for r in results:
        print(r.summary_line(), file=sys.stderr)
        run.records.append({"number": r.number, "criterion": r.name, "passed": r.passed,
                            "failures": "; ".join(f for f in r.failures if not f.startswith("runtime"))})
        label = f"criterion {r.number} {r.name}"
        if not r.passed:
            label += " [" + "; ".join(r.failures) + "]"
        run.check(label, 0.0 if r.passed else 1.0, 0.0)


RUNNERS = {
    "check-debias": run_check_debias,
    "sinkhorn": run_sinkhorn,
    "divergence": run_divergence,
    "uot": run_uot,
    "mmd": run_mmd,
    "decompose": run_decompose,
    "interpolate": run_interpolate,
    "gaussian-identity": run_gaussian_identity,
    "saddle-check": run_saddle,
    "kl-lemmas": run_kl_lemmas,
    "negdef-roundtrip": run_negdef_roundtrip,
    "counterexample": run_counterexample,
    "suite": run_suite,
}


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return fmt(v)


def render(run, cfg, chash, out_fmt):
    if out_fmt == "json":
        body = {
            "experiment": cfg["experiment"],
            "config_hash": chash,
            "records": [{k: _json_value(v) for k, v in rec.items()} for rec in run.records],
            "assertions": [_sanitize(a.__dict__) for a in run.assertions],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"
    columns = []
    for rec in run.records:
        columns += [k for k in rec if k not in columns]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns + ["config_hash"])
    for rec in run.records:
        w.writerow([_cell(rec.get(k)) for k in columns] + [chash])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else fmt(v)
    return v


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg, out_dir, out_fmt = resolve(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    chash = config_hash(cfg)
    run = Run()
    try:
        RUNNERS[cfg["experiment"]](cfg, run)
    except ConvergenceError as exc:
        run.check("solver_convergence", exc.marginal_error, cfg.get("tol", 0.0))
    except (ValueError, costs.NotDebiasableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = render(run, cfg, chash, out_fmt)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        name = f"{cfg['experiment']}.{out_fmt}"
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(text)
        manifest = {
            "config": _sanitize(cfg),
            "config_hash": chash,
            "experiment": cfg["experiment"],
            "outputs": [name],
            "seed": cfg.get("seed"),
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "version": __version__,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w", newline="") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text)
    failed = [a for a in run.assertions if not a.passed]
    for a in failed:
        print(f"FAIL {a.describe()}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
