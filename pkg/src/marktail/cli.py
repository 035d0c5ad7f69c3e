"""Command-line front end.

Every subcommand prints a report to stdout.  With ``--out`` the report (or
table) is also written to that path together with ``<out>.manifest.json``,
which records the arguments, input and output hashes and the package
version; ``marktail replay <manifest>`` re-runs the command and checks that
the outputs are bit-identical.

Exit codes: 0 success, 2 invalid input, 3 no solution, 4 numerical failure.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import sys
from contextlib import redirect_stdout
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import MarktailError, NoSolutionError, NumericalError, ValidationError
from .mapmodel import ProcessSpec, to_shifted_scaled

EXIT_OK, EXIT_VALIDATION, EXIT_NO_SOLUTION, EXIT_NUMERICAL = 0, 2, 3, 4


def fmt(v):
    """Floats with 17 significant digits; everything else via ``str``."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


@dataclass
class RunManifest:
    command: str
    argv: list
    inputs: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    seed: int = None
    version: str = __version__
    outputs: dict = field(default_factory=dict)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs, parameters and outputs of one invocation."""

    def __init__(self, args, argv):
        self.args = args
        self.manifest = RunManifest(args.command, list(argv))

    def input(self, path):
        self.manifest.inputs[path] = sha256(path)
        return path

    def param(self, **kw):
        self.manifest.parameters.update(kw)

    def output(self, path):
        self.manifest.outputs[path] = None
        return path

    def finish(self):
        if not self.manifest.outputs:
            return
        for p in self.manifest.outputs:
            self.manifest.outputs[p] = sha256(p)
        main_out = next(iter(self.manifest.outputs))
        self.manifest.write(main_out + ".manifest.json")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _load_spec(run, path):
    return ProcessSpec.from_dict(_load_json(run.input(path)))


def _emit(run, text, out=None):
    print(text)
    if out:
        with open(run.output(out), "w") as fh:
            fh.write(text + "\n")


def _report(obj, as_json):
    if as_json:
        return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
    lines = []
    for k, v in obj.items():
        if isinstance(v, (list, tuple)):
            v = " ".join(fmt(x) for x in np.ravel(np.asarray(v, dtype=object)))
        lines.append(f"{k}: {fmt(v)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands

def cmd_solve(run):
    from .solver import (LOWER, UPPER, lower_tail_constants, solve, solve_exponent,
                         tauberian_bounds, TauberianInputs)
    a = run.args
    spec = _load_spec(run, a.spec)
    if a.tau:
        spec = spec.replace(Pi=a.tau * np.eye(spec.N) + (1 - a.tau) * spec.Pi)
    run.param(side=a.side, tau=a.tau, method=a.method)
    if a.side == "upper":
        sol = solve(spec, a.method)
        if sol.alpha is None:
            solve_exponent(spec, UPPER, a.method)  # re-raise with diagnostics
        d = sol.to_dict()
        if not a.bounds:
            d.pop("lower_bound")
            d.pop("upper_bound")
    else:
        beta = solve_exponent(spec, LOWER, a.method)
        C, B = lower_tail_constants(spec, beta)
        d = {"beta": beta, "C": C, "B": B}
        if a.bounds:
            d["lower_bound"], d["upper_bound"] = tauberian_bounds(TauberianInputs(C, B, beta))
    if not a.json:
        d.pop("perron_x", None)
        d.pop("perron_y", None)
    _emit(run, _report(d, a.json), a.out)


def cmd_compstat(run):
    from .compstat import finite_difference, persistence_counterexample, sensitivities
    a = run.args
    run.param(tau=a.tau, fd=a.fd, counterexample=a.counterexample)
    if a.counterexample:
        rows = persistence_counterexample(v=a.v, mu=a.mu)
        text = "tau,alpha,alpha_closed_form\n" + "\n".join(
            ",".join(fmt(float(x)) for x in r) for r in rows)
        _emit(run, text, a.out)
        return
    if not a.spec:
        raise ValidationError("compstat needs a model spec (or --counterexample)")
    spec = _load_spec(run, a.spec)
    spec = spec.replace(dists=[[to_shifted_scaled(d) for d in row] for row in spec.dists])
    rep = sensitivities(spec, a.tau)
    d = rep.to_dict()
    if a.fd:
        fd = finite_difference(spec, a.tau)
        d["fd_dAlpha_dV"] = fd.dAlpha_dV.tolist()
        d["fd_dAlpha_dMu"] = fd.dAlpha_dMu.tolist()
        d["fd_dAlpha_dSigma"] = fd.dAlpha_dSigma.tolist()
        d["fd_dAlpha_dTau"] = fd.dAlpha_dTau
    _emit(run, _report(d, a.json), a.out)


def cmd_simulate(run):
    from .sim import SimConfig, hill_estimate, simulate_stopped
    a = run.args
    spec = _load_spec(run, a.spec)
    cfg = SimConfig(paths=a.paths, seed=a.seed, max_steps=a.max_steps)
    run.param(paths=a.paths, max_steps=a.max_steps, backend=a.backend)
    run.manifest.seed = a.seed
    res = simulate_stopped(spec, cfg, backend=a.backend)
    d = {"paths": a.paths, "censor_rate": res.censor_rate,
         "mean_W": float(res.W.mean()), "mean_T": float(res.T.mean())}
    sizes = res.sizes()
    try:
        d["hill_alpha"] = hill_estimate(sizes, a.tail_fraction).alpha_hat
    except ValidationError:
        d["hill_alpha"] = math.nan
    if a.out:
        res.write_csv(run.output(a.out))
    print(_report(d, False))


def _read_values(path):
    """``value`` column, or the latest cross-section of a ``unit_id,period,size`` panel."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    head = [h.strip().lower() for h in rows[0]]
    body = rows[1:]
    try:
        if head == ["value"] or (len(head) == 1 and not _is_number(rows[0][0])):
            return np.array([float(r[0]) for r in body if r])
        if len(head) == 1:
            return np.array([float(r[0]) for r in rows if r])
        if head[:3] == ["unit_id", "period", "size"]:
            per = np.array([float(r[1]) for r in body if r])
            size = np.array([float(r[2]) for r in body if r])
            return size[per == per.max()]
    except (ValueError, IndexError):
        raise ValidationError(f"{path}: non-numeric data") from None
    raise ValidationError(f"{path}: expected a 'value' column or unit_id,period,size")


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_hill(run):
    from .sim import hill_estimate
    a = run.args
    x = _read_values(run.input(a.csv))
    run.param(tail_fraction=a.tail_fraction)
    t = hill_estimate(x, a.tail_fraction)
    d = {"alpha_hat": t.alpha_hat, "k": t.k, "threshold": t.threshold, "stderr": t.stderr}
    _emit(run, _report(d, a.json), a.out)


def cmd_fit(run):
    from .regimefit import em_fit, implied_exponent_from_lifespan, load_panel_csv
    a = run.args
    panel = load_panel_csv(run.input(a.panel), normalize=a.normalize)
    run.param(states=a.states, mean_age=a.mean_age, normalize=a.normalize,
              restarts=a.restarts, max_iter=a.max_iter)
    run.manifest.seed = a.seed
    fits = []
    for n in a.states:
        fit = em_fit(panel, n, restarts=a.restarts, seed=a.seed, max_iter=a.max_iter,
                     backend=a.backend)
        implied = {}
        for T in a.mean_age:
            try:
                implied[fmt(float(T))] = implied_exponent_from_lifespan(fit.model, T)
            except NoSolutionError:
                implied[fmt(float(T))] = None
        d = fit.to_dict()
        d.pop("loglik_trace")
        d["implied_exponent"] = implied
        fits.append(d)
    out = {"n_units": len(panel), "fits": fits}
    if a.json:
        text = json.dumps(out, indent=2, sort_keys=True)
    else:
        lines = ["states,mean_age,implied_exponent,loglik,aic,bic,converged"]
        for d in fits:
            for T, v in d["implied_exponent"].items():
                lines.append(",".join([str(d["model"]["N"]), T, fmt(v if v is not None else math.nan),
                                       fmt(d["loglik"]), fmt(d["aic"]), fmt(d["bic"]),
                                       str(d["converged"])]))
        for d in fits:
            m = d["model"]
            lines.append(f"# N={m['N']} mu={' '.join(fmt(x) for x in m['mu'])} "
                         f"sigma={' '.join(fmt(x) for x in m['sigma'])}")
            for row in m["Pi"]:
                lines.append("#   Pi " + " ".join(fmt(x) for x in row))
        text = "\n".join(lines)
    _emit(run, text, a.out)


def _economy(run, a):
    from .aiyagari import AiyagariEconomy, benchmark_calibration
    if a.config == "benchmark":
        run.param(config="benchmark", method=a.method)
        return benchmark_calibration(a.method)
    return AiyagariEconomy.from_dict(_load_json(run.input(a.config)))


def cmd_aiyagari(run):
    from .aiyagari import simulate_economy, solve_economy
    a = run.args
    econ = _economy(run, a)
    sol = solve_economy(econ)
    d = sol.to_dict()
    if a.simulate:
        run.param(agents=a.agents, periods=a.periods)
        run.manifest.seed = a.seed
        sim = simulate_economy(econ, sol, a.agents, a.periods, a.seed, backend=a.backend)
        d["hill_zeta"] = sim.tail.alpha_hat if sim.tail else None
        d["hill_k"] = sim.tail.k if sim.tail else None
        if a.panel_out:
            sim.write_csv(run.output(a.panel_out))
    if a.json:
        text = json.dumps(d, indent=2, sort_keys=True)
    else:
        keys = ["omega_star", "zeta", "phi_residual", "b_residual", "aggregate_radius",
                "spectral_condition", "hill_zeta", "hill_k"]
        text = "\n".join(f"{k}: {fmt(d[k])}" for k in keys if k in d)
        text += "\nR: " + " ".join(fmt(x) for x in d["R"])
        text += "\nGk: " + " ".join(fmt(x) for x in d["Gk"])
    _emit(run, text, a.out)


def cmd_plot_data(run):
    from . import plotdata
    a = run.args
    kind = a.kind
    run.param(kind=kind, seed=a.seed)
    run.manifest.seed = a.seed
    if kind == "exponent_vs_tau":
        spec = _load_spec(run, _need(a.spec, "--spec"))
        table = plotdata.exponent_vs_tau(spec, np.linspace(0.0, a.tau_max, a.num))
    elif kind == "tail_curve":
        from .sim import SimConfig, simulate_stopped
        from .solver import solve
        spec = _load_spec(run, _need(a.spec, "--spec"))
        sol = solve(spec)
        res = simulate_stopped(spec, SimConfig(paths=a.paths, seed=a.seed), backend=a.backend)
        table = plotdata.tail_curve(res.completed(), sol.alpha,
                                    (sol.lower_bound, sol.upper_bound), num=a.num)
    elif kind == "rank_size":
        if a.values:
            x = _read_values(run.input(a.values))
        else:
            from .aiyagari import simulate_economy, solve_economy
            econ = _economy(run, a)
            x = simulate_economy(econ, solve_economy(econ), a.agents, a.periods, a.seed,
                                 backend=a.backend).wealth
        table = plotdata.rank_size(x, a.top)
    elif kind == "implied_vs_N":
        from .regimefit import load_panel_csv
        panel = load_panel_csv(run.input(_need(a.panel, "--panel")), normalize=a.normalize)
        table = plotdata.implied_vs_N(panel, a.states, a.mean_age, seed=a.seed,
                                      backend=a.backend)
    else:  # pragma: no cover - argparse restricts the choices
        raise ValidationError(f"unknown plot kind {kind!r}")
    out = run.output(a.out)
    svg = run.output(a.svg) if a.svg else None
    plotdata.emit_plot_data(kind, table, out, svg)
    print(f"wrote {out}" + (f" and {svg}" if svg else ""))


def _need(value, flag):
    if not value:
        raise ValidationError(f"this plot kind needs {flag}")
    return value


def cmd_replay(run):
    m = RunManifest.read(run.input(run.args.manifest))
    if m.version != __version__:
        print(f"warning: manifest written by version {m.version}, running {__version__}",
              file=sys.stderr)
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(m.argv)
    if code != EXIT_OK:
        print(buf.getvalue())
        return code
    bad = [p for p, h in m.outputs.items() if sha256(p) != h]
    for p in m.outputs:
        print(f"{'MISMATCH' if p in bad else 'ok'} {p}")
    if bad:
        raise NumericalError(f"{len(bad)} output(s) differ from the manifest")


COMMANDS = {"solve": cmd_solve, "compstat": cmd_compstat, "simulate": cmd_simulate,
            "hill": cmd_hill, "fit": cmd_fit, "aiyagari": cmd_aiyagari,
            "plot-data": cmd_plot_data, "replay": cmd_replay}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    p = argparse.ArgumentParser(prog="marktail", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"marktail {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, seed=False, backend=False):
        if out:
            sp.add_argument("--out", help="also write the result here (plus a manifest)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if backend:
            sp.add_argument("--backend", choices=["numba", "numpy"], default=None)

    s = sub.add_parser("solve", help="tail exponents, constant C, gap B and bounds")
    s.add_argument("spec", help="model spec (JSON)")
    s.add_argument("--side", choices=["upper", "lower"], default="upper")
    s.add_argument("--bounds", action="store_true", help="report the sharp tail bounds")
    s.add_argument("--tau", type=float, default=0.0, help="blend Pi towards I by tau")
    s.add_argument("--method", choices=["hybrid", "bisect"], default="hybrid")
    s.add_argument("--json", action="store_true")
    common(s)

    s = sub.add_parser("compstat", help="sensitivities of the upper exponent")
    s.add_argument("spec", nargs="?")
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--fd", action="store_true", help="add finite-difference values")
    s.add_argument("--counterexample", action="store_true",
                   help="tabulate the transition-dependent persistence example")
    s.add_argument("--v", type=float, default=0.96)
    s.add_argument("--mu", type=float, default=0.02)
    s.add_argument("--json", action="store_true")
    common(s)

    s = sub.add_parser("simulate", help="Monte Carlo sample of stopped paths")
    s.add_argument("spec")
    s.add_argument("--paths", type=int, default=100_000)
    s.add_argument("--max-steps", type=int, default=1_000_000)
    s.add_argument("--tail-fraction", type=float, default=0.1)
    common(s, seed=True, backend=True)

    s = sub.add_parser("hill", help="Hill estimate from a CSV of sizes")
    s.add_argument("csv")
    s.add_argument("--tail-fraction", type=float, default=0.1)
    s.add_argument("--json", action="store_true")
    common(s)

    s = sub.add_parser("fit", help="regime-switching fit and implied exponents")
    s.add_argument("panel", help="CSV with unit_id,period,size")
    s.add_argument("--states", type=int, nargs="+", default=[1])
    s.add_argument("--mean-age", type=float, nargs="+", default=[400.0])
    s.add_argument("--normalize", action="store_true",
                   help="divide sizes by the cross-sectional total of each period")
    s.add_argument("--restarts", type=int, default=5)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--json", action="store_true")
    common(s, seed=True, backend=True)

    s = sub.add_parser("aiyagari", help="solve (and simulate) the production economy")
    s.add_argument("config", help="economy config (JSON) or 'benchmark'")
    s.add_argument("--method", choices=["rouwenhorst", "tauchen"], default="rouwenhorst",
                   help="AR(1) discretisation for the 'benchmark' calibration")
    s.add_argument("--simulate", action="store_true")
    s.add_argument("--agents", type=int, default=100_000)
    s.add_argument("--periods", type=int, default=1000)
    s.add_argument("--panel-out", help="write the simulated cross-section here")
    s.add_argument("--json", action="store_true")
    common(s, seed=True, backend=True)

    s = sub.add_parser("plot-data", help="CSV (and SVG) behind the standard figures")
    s.add_argument("kind", choices=["rank_size", "tail_curve", "exponent_vs_tau",
                                    "implied_vs_N"])
    s.add_argument("--out", required=True)
    s.add_argument("--svg")
    s.add_argument("--spec")
    s.add_argument("--values", help="CSV of sizes for rank_size")
    s.add_argument("--config", default="benchmark", help="economy for rank_size without --values")
    s.add_argument("--method", choices=["rouwenhorst", "tauchen"], default="rouwenhorst")
    s.add_argument("--panel")
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--states", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    s.add_argument("--mean-age", type=float, nargs="+", default=[150.0, 400.0, 1000.0])
    s.add_argument("--num", type=int, default=100)
    s.add_argument("--tau-max", type=float, default=0.99)
    s.add_argument("--paths", type=int, default=1_000_000)
    s.add_argument("--agents", type=int, default=100_000)
    s.add_argument("--periods", type=int, default=1000)
    s.add_argument("--top", type=int, default=None)
    common(s, out=False, seed=True, backend=True)

    s = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    s.add_argument("manifest")
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    run = Run(args, argv)
    try:
        COMMANDS[args.command](run)
        run.finish()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NoSolutionError as exc:
        print(f"no solution: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except (NumericalError, MarktailError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
