"""Command-line entry point: ``funcgan <command> [options]``.

Every command that writes files takes ``--out``. A path with a file suffix
names the primary output and its parent becomes the run directory;
otherwise ``--out`` is the run directory. Each run directory receives a
``manifest.json`` (command, config echo, seed, version, input digests,
timestamp). Without ``--out`` the primary result is printed to stdout.

Exit codes: 0 success, 1 domain error (one ``error: Kind: message`` line on
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import datasets as ds
from . import dynamics as dy
from . import formats as fm
from .errors import FormatError, FuncganError, MissingManifest
from .laplace import assemble, spectrum
from .lgan import LganCoefficients, lgan_eigenvalues, max_real_part, optimal_parameters
from .measure import (GridDensity, MixtureSpec, gaussian_density, mixture_density,
                      uniform_density)
from .poincare import (GraphEstimatorConfig, ParametricEstimatorConfig, estimate_graph,
                       estimate_grid_reference, estimate_parametric)

MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# -- output plumbing -------------------------------------------------------------

class Run:
    """Collects outputs of one command and writes the manifest last."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.inputs = {}
        self.outputs = []
        out = getattr(args, "out", None)
        if out is None:
            self.dir, self.primary = None, None
        else:
            out = Path(out)
            if out.suffix:
                self.dir, self.primary = out.parent, out
            else:
                self.dir, self.primary = out, None

    def read(self, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such input file: {path}")
        self.inputs[str(path)] = fm.sha256_file(path)
        return path

    def path(self, name, primary=False):
        if primary and self.primary is not None:
            return self.primary
        return self.dir / name

    def csv(self, name, header, rows, primary=False):
        if self.dir is None:
            if primary:
                w = csv.writer(sys.stdout, lineterminator="\n")
                w.writerow(header)
                w.writerows([[fm._fmt(v) for v in r] for r in rows])
            return
        p = fm.write_csv(self.path(name, primary), header, rows)
        self.outputs.append(p.name)

    def json(self, name, obj, primary=False):
        if self.dir is None:
            if primary:
                sys.stdout.write(fm.dumps_json(obj))
            return
        p = fm.write_json(self.path(name, primary), obj)
        self.outputs.append(p.name)

    def figure(self, name, draw):
        if self.dir is None:
            return
        p = draw(self.dir / name)
        self.outputs.append(p.name)

    def finish(self):
        if self.dir is None:
            return
        config = {k: v for k, v in vars(self.args).items() if k not in ("func",)}
        manifest = {"command": self.command, "config": config,
                    "seed": getattr(self.args, "seed", None), "version": __version__,
                    "inputs": self.inputs, "outputs": sorted(set(self.outputs)),
                    "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
        fm.write_json(self.dir / MANIFEST, manifest)


# -- shared builders -------------------------------------------------------------

def _add_density_args(p):
    p.add_argument("--density", default="gaussian",
                   help="gaussian | mixture | uniform | path to a grid CSV (default: gaussian)")
    p.add_argument("--dims", type=int, default=1, choices=(1, 2),
                   help="grid dimension for built-in densities (default: 1)")
    p.add_argument("--var", type=float, default=1.0,
                   help="component variance for gaussian/mixture (default: 1)")
    p.add_argument("--separation", type=float, default=3.0,
                   help="mixture separation D between the two means (default: 3)")
    p.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"),
                   help="interval per axis (default: mean +/- 10 sd for gaussian, "
                        "+/- 6 sd around the components for mixture, [0, 1] for uniform)")
    p.add_argument("--points", type=int,
                   help="grid points per axis (default: 2001 in 1-D, 61 in 2-D)")


def build_density(args, run: Run) -> GridDensity:
    spec = args.density
    if spec not in ("gaussian", "mixture", "uniform"):
        return fm.read_grid_csv(run.read(spec))
    d = args.dims
    n = args.points or (2001 if d == 1 else 61)
    sd = float(np.sqrt(args.var))
    if spec == "gaussian":
        dom = tuple(args.domain) if args.domain else (-10 * sd, 10 * sd)
        return gaussian_density([0.0] * d, [args.var] * d, [dom] * d, [n] * d)
    if spec == "mixture":
        if d != 1:
            raise UsageError("--density mixture supports --dims 1 only")
        mix = MixtureSpec.two_gaussians(args.separation, var=args.var)
        dom = tuple(args.domain) if args.domain else mix.default_domain()[0]
        return mixture_density(mix, dom, n)
    dom = tuple(args.domain) if args.domain else (0.0, 1.0)
    return uniform_density([dom] * d, [n] * d)


# -- commands ------------------------------------------------------------------------

def cmd_spectrum(args):
    run = Run(args, "spectrum")
    density = build_density(args, run)
    op = assemble(density)
    sp = spectrum(op, args.k, method=args.method)
    rows = [[i, float(x), float(r)] for i, (x, r) in enumerate(zip(sp.xis, sp.residuals))]
    run.csv("spectrum.csv", ["index", "xi", "residual"], rows, primary=True)
    run.json("summary.json", {**sp.summary(), "xis": sp.xis, "grid_shape": density.shape,
                              "domain": density.domain})
    if args.plot:
        from .plotting import spectrum_plot
        run.figure("spectrum.svg", lambda p: spectrum_plot(p, sp.xis))
    run.finish()


def cmd_optimal_params(args):
    run = Run(args, "optimal-params")
    c = optimal_parameters(args.beta, args.xi_min, args.alpha)
    out = {"alpha": c.alpha, "gamma": c.gamma, "beta": c.beta, "xi_min": args.xi_min,
           "eta": max_real_part(c, args.xi_min),
           "oscillatory": bool(lgan_eigenvalues(c, [args.xi_min]).oscillatory[0])}
    run.json("optimal.json", out, primary=True)
    run.finish()


def cmd_simulate(args):
    run = Run(args, "simulate")
    density = build_density(args, run)
    op = assemble(density)
    sp = spectrum(op, min(args.modes + 1, op.size))
    xi_min = sp.xi_min
    if args.optimal:
        coeffs = optimal_parameters(args.beta, xi_min)
    else:
        coeffs = LganCoefficients(args.alpha, args.beta, args.gamma)
    if args.init == "mode":
        u0, v0 = dy.mode_initial_data(sp, op, args.mode, args.v_scale)
    else:
        u0, v0 = dy.random_initial_data(sp, op, seed=args.seed, n_modes=args.init_modes,
                                        mean=args.mean)
    if args.scheme == "analytic":
        ex = dy.project_initial_conditions(sp, op, u0, v0, args.modes, coeffs)
        times = np.arange(args.steps + 1)[::args.record_every] * args.tau
        trace = dy.evolve_analytic(ex, coeffs, times, op=op)
    else:
        cfg = dy.IntegratorConfig(args.scheme, args.tau, args.steps, record_every=args.record_every)
        trace = dy.evolve_numeric(u0, v0, op, coeffs, cfg)
    rows = np.column_stack([trace.times, trace.u_norms, trace.V_norms, trace.mean_u]).tolist()
    run.csv("trace.csv", ["t", "u_norm", "V_norm", "mean_u"], rows, primary=True)
    summary = {"measured_rate": trace.measured_rate, "eta_predicted": max_real_part(coeffs, xi_min),
               "diverged": trace.diverged, "scheme": args.scheme, "xi_min": xi_min,
               **coeffs.as_dict()}
    run.json("summary.json", summary)
    if args.plot:
        from .plotting import decay_plot
        label = f"{args.scheme} a={coeffs.alpha:g} g={coeffs.gamma:g}"
        run.figure("decay.svg", lambda p: decay_plot(p, [(label, trace.times, trace.u_norms)]))
    run.finish()
    if run.dir is not None:
        sys.stdout.write(fm.dumps_json(summary))


def _graph_config(args):
    return GraphEstimatorConfig(k_neighbors=args.k_neighbors, bandwidth=args.bandwidth,
                                normalization=args.normalization, max_points=args.max_points,
                                sparsify=args.sparsify, seed=args.seed)


def _parametric_config(args):
    return ParametricEstimatorConfig(n_centers=args.n_centers, length_scale=args.length_scale,
                                     batch_size=args.batch_size, step_size=args.step_size,
                                     iterations=args.iterations, seed=args.seed)


def _estimator_config(args):
    if args.estimator == "graph":
        return _graph_config(args)
    if args.estimator == "parametric":
        return _parametric_config(args)
    return {"shape": args.grid_points} if args.grid_points else None


def cmd_estimate(args):
    run = Run(args, "estimate")
    samples = fm.load_samples(run.read(args.input))
    if args.estimator == "graph":
        est = estimate_graph(samples, _graph_config(args))
    elif args.estimator == "parametric":
        est = estimate_parametric(samples, _parametric_config(args))
    else:
        shape = None if args.grid_points is None else (args.grid_points,) * samples.d
        est = estimate_grid_reference(samples, shape=shape)
    run.json("estimate.json", est.summary(), primary=True)
    if est.loss_curve.size:
        run.csv("loss_curve.csv", ["iteration", "loss"],
                [[i, float(v)] for i, v in enumerate(est.loss_curve)])
    run.finish()


def parse_plan(obj):
    configs = []
    if not isinstance(obj, list) or not obj:
        raise FormatError("plan must be a nonempty JSON list")
    for item in obj:
        if not isinstance(item, dict):
            raise FormatError(f"plan entry {item!r} is not an object")
        if "instance_selection" in item:
            configs.append(ds.InstanceSelectionConfig(float(item["instance_selection"])))
        elif "kind" in item:
            configs.append(ds.AugmentationConfig(item["kind"], float(item.get("lambda", 0.0)),
                                                 sample_rule=item.get("sample_rule", "uniform")))
        else:
            raise FormatError(f"plan entry {item!r} needs 'kind' or 'instance_selection'")
    return configs


def cmd_scan(args):
    run = Run(args, "scan")
    est_cfg = _estimator_config(args)
    if args.mixture:
        report = ds.separation_scan(args.separations, n=args.n, estimator=args.estimator,
                                    estimator_config=est_cfg, seed=args.seed)
    else:
        if args.images is None or args.plan is None:
            raise UsageError("scan needs --images and --plan (or --mixture)")
        images = ds.ImageTensorSet(fm.read_lgi(run.read(args.images)))
        plan = parse_plan(json.loads(run.read(args.plan).read_text()))
        features = fm.load_samples(run.read(args.features)) if args.features else None
        report = ds.connectivity_scan(images, plan, estimator=args.estimator,
                                      estimator_config=est_cfg, seed=args.seed, features=features)
    rows = [[r.kind, r.param, r.xi_hat, r.xi_norm] for r in report.rows]
    run.csv("report.csv", ["kind", "param", "xi_hat", "xi_norm"], rows, primary=True)
    run.json("scan.json", {"baseline_xi": report.baseline_xi, "estimator": report.estimator,
                           "rows": report.as_records(), **report.meta})
    run.finish()


def read_scores(path, report_rows):
    header, rows = fm.read_csv_table(path)
    names = [h.strip() for h in header]
    if "score" not in names and len(names) == 1:
        names = ["score"]
        rows = [header] + rows
    if "score" not in names:
        raise FormatError(f"{path}: needs a 'score' column")
    j = names.index("score")
    if "kind" in names and "param" in names:
        lookup = {(r[names.index("kind")], float(r[names.index("param")])): float(r[j]) for r in rows}
        try:
            return [lookup[(k, float(p))] for k, p in report_rows]
        except KeyError as exc:
            raise FormatError(f"{path}: no score for report row {exc.args[0]}") from exc
    if len(rows) != len(report_rows):
        raise FormatError(f"{path}: {len(rows)} scores for {len(report_rows)} report rows")
    return [float(r[j]) for r in rows]


def read_report(path):
    header, rows = fm.read_csv_table(path)
    need = ["kind", "param", "xi_hat", "xi_norm"]
    if [h.strip() for h in header[:4]] != need:
        raise FormatError(f"{path}: expected columns {','.join(need)}")
    return [(r[0], float(r[1]), float(r[2]), float(r[3])) for r in rows]


def cmd_correlate(args):
    run = Run(args, "correlate")
    report = read_report(run.read(args.report))
    scores = read_scores(run.read(args.scores), [(k, p) for k, p, _, _ in report])
    rho = ds.spearman([r[2] for r in report], scores)
    run.json("correlation.json", {"spearman": rho, "n": len(report)}, primary=True)
    run.finish()


def _load_manifest(d):
    p = Path(d) / MANIFEST
    if not p.is_file():
        raise MissingManifest(f"{d}: no {MANIFEST}")
    return json.loads(p.read_text())


def cmd_report(args):
    from .plotting import decay_plot, xi_chart

    if not args.runs:
        raise UsageError("report needs at least one run directory")
    run = Run(args, "report")
    if run.dir is None:
        raise UsageError("report needs --out")
    curves, decay_rows, scan_series, scan_rows, est_rows = [], [], {}, [], []
    for d in args.runs:
        man = _load_manifest(d)
        run.inputs[str(Path(d) / MANIFEST)] = fm.sha256_file(Path(d) / MANIFEST)
        name = Path(d).name
        if man["command"] == "simulate":
            header, rows = fm.read_csv_table(run.read(Path(d) / "trace.csv"))
            arr = np.array(rows, dtype=float)
            curves.append((name, arr[:, 0], arr[:, 1]))
            decay_rows += [[name, t, u] for t, u in arr[:, :2].tolist()]
        elif man["command"] == "scan":
            primary = [o for o in man["outputs"] if o.endswith(".csv")]
            for kind, p, xi, xn in read_report(run.read(Path(d) / primary[0])):
                scan_series.setdefault(f"{name}:{kind}", ([], []))
                scan_series[f"{name}:{kind}"][0].append(p)
                scan_series[f"{name}:{kind}"][1].append(xi)
                scan_rows.append([name, kind, p, xi, xn])
        elif man["command"] == "estimate":
            primary = [o for o in man["outputs"] if o.endswith(".json")]
            est = json.loads(run.read(Path(d) / primary[0]).read_text())
            scan_series[f"{name}:{est['estimator']}"] = ([0.0], [est["xi_hat"]])
            est_rows.append([name, est["estimator"], est["xi_hat"]])
    if curves:
        run.csv("decay.csv", ["run", "t", "u_norm"], decay_rows)
        run.figure("decay.svg", lambda p: decay_plot(p, curves))
    if scan_rows:
        run.csv("scan.csv", ["run", "kind", "param", "xi_hat", "xi_norm"], scan_rows)
    if est_rows:
        run.csv("estimates.csv", ["run", "estimator", "xi_hat"], est_rows)
    if scan_series:
        run.figure("xi.svg", lambda p: xi_chart(p, scan_series))
    run.finish()


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="funcgan", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"funcgan {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("spectrum", help="eigenvalues of -Delta_mu on a grid density")
    _add_density_args(s)
    s.add_argument("--k", type=int, default=6, help="number of eigenpairs incl. zero (default: 6)")
    s.add_argument("--method", choices=("auto", "dense", "lanczos"), default="auto",
                   help="eigensolver (default: auto = dense up to 2000 unknowns)")
    s.add_argument("--plot", action="store_true", help="also write spectrum.svg")
    s.add_argument("--out", help="run directory or CSV path (default: print CSV)")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("simulate", help="evolve the linearized GAN flow")
    _add_density_args(s)
    s.add_argument("--scheme", choices=("euler", "heun", "analytic"), default="heun",
                   help="time integrator (default: heun)")
    s.add_argument("--tau", type=float, default=1e-3, help="time step (default: 1e-3)")
    s.add_argument("--steps", type=int, default=5000, help="number of steps (default: 5000)")
    s.add_argument("--alpha", type=float, default=1.0, help="loss curvature alpha (default: 1)")
    s.add_argument("--beta", type=float, default=1.0, help="loss slope beta (default: 1)")
    s.add_argument("--gamma", type=float, default=0.0,
                   help="gradient-penalty weight gamma (default: 0)")
    s.add_argument("--optimal", action="store_true",
                   help="use alpha=0, gamma=2|beta|/sqrt(xi_min) from the grid spectrum")
    s.add_argument("--init", choices=("random", "mode"), default="random",
                   help="initial data: random smooth modes or a single eigenmode")
    s.add_argument("--mode", type=int, default=1, help="eigenmode index for --init mode")
    s.add_argument("--v-scale", type=float, default=0.0,
                   help="v0 = v_scale * grad w_mode for --init mode (default: 0)")
    s.add_argument("--init-modes", type=int, default=6,
                   help="modes in random initial data (default: 6)")
    s.add_argument("--mean", type=float, default=0.0, help="mean of random u0 (default: 0)")
    s.add_argument("--modes", type=int, default=64,
                   help="spectral truncation for analytic runs (default: 64)")
    s.add_argument("--record-every", type=int, default=1, help="trace stride in steps")
    s.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    s.add_argument("--plot", action="store_true", help="also write decay.svg")
    s.add_argument("--out", help="run directory or CSV path (default: print CSV)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("optimal-params", help="optimal (alpha, gamma) for given beta, xi_min")
    s.add_argument("--beta", type=float, required=True, help="loss slope beta (nonzero)")
    s.add_argument("--xi-min", type=float, required=True, help="Poincare constant (> 0)")
    s.add_argument("--alpha", type=float, default=None,
                   help="alpha on the optimal segment, at most "
                        "|beta| min(sqrt(xi_min), 1/sqrt(xi_min)) (default: 0)")
    s.add_argument("--out", help="run directory or JSON path (default: print JSON)")
    s.set_defaults(func=cmd_optimal_params)

    def estimator_flags(s):
        s.add_argument("--estimator", choices=("graph", "parametric", "grid"), default="graph",
                       help="xi_min estimator (default: graph)")
        s.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
        g = s.add_argument_group("graph estimator")
        g.add_argument("--k-neighbors", type=int, default=None,
                       help="neighbour rank of the self-tuning bandwidth (default: ceil(0.2 m))")
        g.add_argument("--bandwidth", type=float, default=None,
                       help="fixed kernel width sigma in data units (default: self-tuning)")
        g.add_argument("--normalization", choices=("random-walk", "symmetric"),
                       default="random-walk", help="graph Laplacian normalization")
        g.add_argument("--max-points", type=int, default=2000,
                       help="subsample size m for the dense graph (default: 2000)")
        g.add_argument("--sparsify", action="store_true",
                       help="keep only k-nearest-neighbour edges")
        q = s.add_argument_group("parametric estimator")
        q.add_argument("--n-centers", type=int, default=64, help="RBF centres (default: 64)")
        q.add_argument("--length-scale", type=float, default=None,
                       help="RBF width in data units (default: median centre distance)")
        q.add_argument("--batch-size", type=int, default=1024, help="minibatch size (default: 1024)")
        q.add_argument("--step-size", type=float, default=0.5,
                       help="step relative to the largest curvature (default: 0.5)")
        q.add_argument("--iterations", type=int, default=2000, help="SGD steps (default: 2000)")
        q = s.add_argument_group("grid oracle")
        q.add_argument("--grid-points", type=int, default=None,
                       help="grid points per axis (default: 2001 in 1-D, 161 in 2-D)")

    s = sub.add_parser("estimate", help="estimate xi_min from samples")
    s.add_argument("--input", required=True, help="samples: CSV, LGS1 or LGI1 file")
    estimator_flags(s)
    s.add_argument("--out", help="run directory or JSON path (default: print JSON)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("scan", help="xi_min across augmentations or instance selection")
    s.add_argument("--images", help="image tensor file (LGI1)")
    s.add_argument("--plan", help="JSON list of {kind, lambda} or {instance_selection: psi}")
    s.add_argument("--features", help="feature file (CSV or LGS1) for instance selection")
    s.add_argument("--mixture", action="store_true",
                   help="scan two-Gaussian separations instead of images")
    s.add_argument("--separations", type=float, nargs="+", default=[0, 1, 2, 3, 4, 5],
                   help="separations D for --mixture (default: 0..5)")
    s.add_argument("--n", type=int, default=10000, help="samples per separation (default: 1e4)")
    estimator_flags(s)
    s.add_argument("--out", help="run directory or CSV path (default: print CSV)")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("correlate", help="Spearman correlation of a scan with external scores")
    s.add_argument("--report", required=True, help="scan report CSV")
    s.add_argument("--scores", required=True,
                   help="CSV with a 'score' column (optionally keyed by kind,param)")
    s.add_argument("--out", help="run directory or JSON path (default: print JSON)")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("report", help="figures and tables from run directories")
    s.add_argument("runs", nargs="*", help="run directories containing manifest.json")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_report)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FuncganError, ValueError, OSError, json.JSONDecodeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
