"""Command line front end.

Thin argparse wrappers over the library: quick single computations
(build, spectrum, f2, autocorr, overlap, fit, hydro, gap-ratio), the
full pipeline (run), and plot-script emission from a manifest (plots).

Exit codes: 0 success, 1 configuration error, 2 task failure,
3 resource cap exceeded.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import store, workflow
from .analysis import powerlaw_fit
from .errors import CapExceeded, ConfigError, TaskError
from .hydro import HydroSetup, correlator_series, decay_exponent, plateau_scaling
from .lattice import (
    build_hamiltonian,
    build_observable,
    hilbert_dim,
    make_spec,
    preset_spec,
    spectral_bounds,
)
from .moments import moment_table, overlap_order
from .spectra import (
    diagonal_ensemble_variance,
    diagonal_matrix_elements,
    ed_autocorrelator,
    f2_binned,
    gap_ratio,
)
from .typicality import (
    TimeSeries,
    default_realizations,
    dqt_autocorrelator,
    make_run,
)
from .workflow import RunConfig, parse_observable


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; here that is a config error (1)
    def error(self, message):
        raise ConfigError(message)


def _ints(text):
    return tuple(int(x) for x in workflow._split_list(text))


def _floats(text):
    return tuple(float(x) for x in workflow._split_list(text))


def _couplings(pairs):
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"coupling {p!r} is not K=V")
        k, v = p.split("=", 1)
        out[k.strip()] = float(v)
    return out


# ============================================================
# shared flag groups
# ============================================================


def _add_model_flags(p, single_length=True):
    p.add_argument("--preset", help="named model preset")
    p.add_argument("--model", help="explicit model name (with --coupling)")
    p.add_argument("--coupling", action="append", default=[],
                   metavar="K=V", help="explicit coupling, repeatable")
    if single_length:
        p.add_argument("--length", "-L", type=int, default=6)
    else:
        p.add_argument("--lengths", "-L", type=_ints, default=(6,),
                       metavar="L1,L2,...")


def _spec_from(args, length=None):
    L = length if length is not None else args.length
    if args.model:
        return make_spec(args.model, L, **_couplings(args.coupling))
    return preset_spec(args.preset or "tilted-ising-paper", L)


def _route_for(args, length):
    route = getattr(args, "route", None) or "auto"
    if route != "auto":
        return route
    return "dense" if hilbert_dim(length) <= workflow.DENSE_ROUTE_LIMIT \
        else "sectors"


def _blocks_from(args, spec, h_op):
    cache = os.path.join(args.out_dir, "cache")
    notices = []
    blocks, _ = store.load_or_build_blocks(
        spec, h_op, _route_for(args, spec.length), cache,
        want_vectors=True, notices=notices)
    for n in notices:
        print(n, file=sys.stderr)
    return blocks


def _add_out_flags(p):
    p.add_argument("--out-dir", default="ethydro-run")
    p.add_argument("--route", choices=workflow.ROUTES, default="auto")


# ============================================================
# subcommands
# ============================================================


def _cmd_build(args):
    spec = _spec_from(args)
    h = build_hamiltonian(spec)
    lo, hi = spectral_bounds(h)
    print(f"model: {spec.model}")
    print(f"length: {spec.length}")
    print(f"dim: {h.dim}")
    print(f"couplings: {dict(spec.couplings)}")
    print(f"spectral bounds: [{lo:.6f}, {hi:.6f}]")
    print(f"spec hash: {spec.hash()}")


def _cmd_spectrum(args):
    spec = _spec_from(args)
    h = build_hamiltonian(spec)
    blocks = _blocks_from(args, spec, h)
    total = 0
    for basis, spectrum in blocks:
        token = "all" if basis is None else basis.label.token()
        total += spectrum.dim
        print(f"sector {token}: dim {spectrum.dim}, "
              f"E in [{spectrum.energies.min():.6f}, {spectrum.energies.max():.6f}]")
    print(f"total states: {total}")
    print(f"cache: {os.path.join(args.out_dir, 'cache')}")


def _cmd_diag_eth(args):
    spec = _spec_from(args)
    h = build_hamiltonian(spec)
    blocks = _blocks_from(args, spec, h)
    o = build_observable(spec.length, parse_observable(args.observable))
    energies, diags = diagonal_matrix_elements(blocks, o)
    out = args.out or os.path.join(
        args.out_dir, f"diag-L{spec.length}-{args.observable}.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    store.write_diagonal_profile(out, energies, diags,
                                 comments=[f"observable: {args.observable}"])
    var = diagonal_ensemble_variance(blocks, o, beta=args.beta)
    print(f"wrote {out}")
    print(f"states: {energies.size}")
    print(f"infinite-time plateau (beta={args.beta:g}): {var:.6e}")


def _cmd_f2(args):
    spec = _spec_from(args)
    h = build_hamiltonian(spec)
    blocks = _blocks_from(args, spec, h)
    o = build_observable(spec.length, parse_observable(args.observable))
    prof = f2_binned(blocks, o, spec.length, beta=args.beta,
                     bin_width=args.bin_width)
    out = args.out or os.path.join(
        args.out_dir, f"f2-ed-L{spec.length}-b{args.beta:g}-{args.observable}.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    store.write_frequency_profile(out, prof,
                                  comments=[f"observable: {args.observable}"])
    print(f"wrote {out}")
    print(f"bins: {prof.omega.size}, populated: {int((prof.counts > 0).sum())}")


def _cmd_autocorr(args):
    spec = _spec_from(args)
    h = build_hamiltonian(spec)
    o = build_observable(spec.length, parse_observable(args.observable))
    n_steps = int(round(args.t_max / args.dt))
    if args.method == "ed":
        blocks = _blocks_from(args, spec, h)
        times = np.arange(n_steps + 1) * args.dt
        values = ed_autocorrelator(blocks, o, times, beta=args.beta)
        series = TimeSeries(times=times, values=values,
                            stderr=np.zeros(times.size), beta=args.beta,
                            observable=args.observable, length=spec.length)
        comment = "route: ed"
    else:
        n_p = args.n_p or default_realizations(spec.length)
        run_desc = make_run(args.seed_base, n_p, beta=args.beta, dt=args.dt,
                            n_steps=n_steps)
        series = dqt_autocorrelator(h, o, run_desc)
        comment = f"route: dqt n_p={n_p} seed={args.seed_base}"
    out = args.out or os.path.join(
        args.out_dir,
        f"autocorr-{args.method}-L{spec.length}-b{args.beta:g}-{args.observable}.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    store.write_time_series(out, series, comments=[comment])
    print(f"wrote {out}")
    print(f"C(0) = {np.asarray(series.values).real[0]:.6f}")


def _cmd_overlap(args):
    spec = _spec_from(args)
    h = build_hamiltonian(spec)
    o = build_observable(spec.length, parse_observable(args.observable))
    method = workflow._overlap_method(spec.length, args.beta)
    seeds = None
    if method == "stochastic-trace":
        seeds = [args.seed_base + k for k in range(24)]
    result = overlap_order(h, o, beta=args.beta, m_max=args.m_max,
                           threshold=args.threshold, method=method,
                           seeds=seeds)
    print(f"method: {method}")
    print(f"overlap order: {result.m}")
    print(f"witness: {result.witness:.6e}")
    print(f"threshold: {result.threshold:.3e}")
    if result.ambiguous:
        print("note: values near the threshold; order is ambiguous")
    for m in sorted(result.normalized):
        print(f"  normalized cumulant m={m}: {result.normalized[m]:.6e}")
    if args.moments_out:
        table = moment_table(h, o, max(args.m_max, 2), beta=args.beta,
                             method=method, seeds=seeds)
        store.write_moment_table(args.moments_out, table,
                                 comments=[f"observable: {args.observable}"])
        print(f"wrote {args.moments_out}")


def _cmd_fit(args):
    names, cols, _ = store.read_csv(args.csv)
    xname = args.x_col or names[0]
    yname = args.y_col or names[1]
    if xname not in cols or yname not in cols:
        raise ConfigError(f"{args.csv} lacks columns {xname!r}/{yname!r}")
    x = cols[xname]
    y = cols[yname] - args.subtract
    if args.absolute:
        y = np.abs(y)
    fit = powerlaw_fit(x, y, window=args.window, with_log=args.with_log)
    print(fit.report())


def _cmd_hydro(args):
    setup = HydroSetup(n=args.n, z=args.z, diffusion=args.diffusion,
                       mu=args.mu, width=args.width, volume=args.volume)
    did = False
    if args.decay:
        fit = decay_exponent(setup, t_window=args.window or (50.0, 2000.0),
                             n_points=args.points)
        print("decay exponent fit:")
        print(fit.report())
        did = True
    if args.plateau_sizes:
        fit = plateau_scaling(setup, args.plateau_sizes)
        print("plateau-vs-volume fit:")
        print(fit.report())
        sizes = np.asarray(args.plateau_sizes, dtype=float)
        if args.out:
            vals = [float(np.real(
                correlator_series(dataclasses.replace(setup, volume=float(s)),
                                  args.x, [np.inf])[0])) for s in sizes]
            store.write_plateaus(args.out, sizes, vals)
            print(f"wrote {args.out}")
        did = True
    if args.times:
        lo, hi, n = args.times
        times = np.geomspace(lo, hi, int(n))
        vals = np.real(correlator_series(setup, args.x, times))
        out = args.out or "hydro-series.csv"
        store.write_hydro_series(out, times, vals,
                                 comments=[f"x: {args.x!r}", f"z: {setup.z!r}",
                                           f"mu: {setup.mu!r}"])
        print(f"wrote {out}")
        did = True
    if not did:
        raise ConfigError("nothing to do: pass --decay, --plateau-sizes, or --times")


def _cmd_gap_ratio(args):
    rows = []
    for L in args.lengths:
        spec = _spec_from(args, length=L)
        h = build_hamiltonian(spec)
        cache = os.path.join(args.out_dir, "cache")
        energies, _ = store.symmetric_sector_energies(spec, h, cache)
        r = float(gap_ratio(energies))
        rows.append((L, r))
        print(f"L={L}: mean gap ratio {r:.4f} ({energies.size} levels)")
    if args.out:
        store.write_csv(args.out, ["L", "r"],
                        [[r[0] for r in rows], [r[1] for r in rows]],
                        comments=["zero-momentum reflection-even block"])
        print(f"wrote {args.out}")


def _config_overrides(args):
    kw = {}
    if args.preset:
        kw["preset"] = args.preset
    if args.model:
        kw["model"] = args.model
        kw["couplings"] = _couplings(args.coupling)
        kw.setdefault("preset", None)
    for flag, key in [
        ("lengths", "lengths"), ("betas", "betas"),
        ("observables", "observables"), ("method", "method"),
        ("route", "route"), ("dt", "dt"), ("t_max", "t_max"),
        ("bin_width", "bin_width"), ("fit_window", "fit_window"),
        ("filter_scale", "filter_scale"), ("n_p", "n_p"),
        ("seed_base", "seed_base"), ("cheb_tol", "cheb_tol"),
        ("m_max", "m_max"), ("overlap_threshold", "overlap_threshold"),
        ("roi_tol", "roi_tol"), ("dynamical_z", "dynamical_z"),
        ("out_dir", "out_dir"), ("workers", "workers"),
    ]:
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    return kw


def _cmd_run(args):
    if args.manifest:
        manifest = workflow.rerun(args.manifest, out_dir=args.out_dir)
    else:
        kw = _config_overrides(args)
        if args.config:
            base = workflow.from_ini(args.config)
            if "model" in kw and "preset" not in kw:
                kw["preset"] = None
            elif "preset" in kw and "model" not in kw:
                kw["model"] = None
                kw["couplings"] = ()
            config = dataclasses.replace(base, **kw)
        else:
            config = RunConfig.make(**kw)
        manifest = workflow.run(config, out_dir=args.out_dir)
    failed = [t for t in manifest.tasks if t["status"] == "failed"]
    skipped = [t for t in manifest.tasks if t["status"] == "skipped"]
    for t in manifest.tasks:
        mark = {"done": "ok", "failed": "FAIL", "skipped": "skip"}[t["status"]]
        extra = f" ({t['error_kind']}: {t['error']})" if t["error"] else ""
        print(f"[{mark}] {t['id']}  {t['wall_clock_s']:.2f}s{extra}")
    for n in manifest.notices:
        print(f"note: {n}")
    print(f"manifest: {os.path.join(manifest.out_dir, 'manifest.json')}")
    print(f"outputs: {len(manifest.outputs)} files")
    if any(t["error_kind"] == "CapExceeded" for t in failed):
        return 3
    if failed or skipped:
        return 2
    return 0


def _cmd_plots(args):
    manifest = workflow.RunManifest.load(args.manifest)
    out_dir = args.out_dir or manifest.out_dir
    notices = []
    scripts = store.emit_plots(manifest, out_dir=out_dir, notices=notices)
    for n in notices:
        print(f"note: {n}")
    for s in scripts:
        print(f"wrote {s}")
    if not scripts:
        print("no figure families present; nothing written")


# ============================================================
# parser assembly
# ============================================================


def build_parser():
    parser = _Parser(prog="ethydro",
                     description="spin-1 chain correlation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="assemble a Hamiltonian")
    _add_model_flags(p)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("spectrum", help="diagonalize (through the cache)")
    _add_model_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("diag-eth", help="diagonal matrix-element profile")
    _add_model_flags(p)
    _add_out_flags(p)
    p.add_argument("--observable", default="sx1")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_diag_eth)

    p = sub.add_parser("f2", help="binned off-diagonal strength")
    _add_model_flags(p)
    _add_out_flags(p)
    p.add_argument("--observable", default="sx1")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--bin-width", type=float)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_f2)

    p = sub.add_parser("autocorr", help="autocorrelation function")
    _add_model_flags(p)
    _add_out_flags(p)
    p.add_argument("--observable", default="sx1")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--method", choices=("ed", "dqt"), default="ed")
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--t-max", type=float, default=20.0)
    p.add_argument("--n-p", type=int)
    p.add_argument("--seed-base", type=int, default=7041)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_autocorr)

    p = sub.add_parser("overlap", help="overlap order from joint cumulants")
    _add_model_flags(p)
    p.add_argument("--observable", default="sx1")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--m-max", type=int, default=6)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed-base", type=int, default=7041)
    p.add_argument("--moments-out")
    p.set_defaults(func=_cmd_overlap)

    p = sub.add_parser("fit", help="power-law or log fit of a CSV column")
    p.add_argument("--csv", required=True)
    p.add_argument("--window", type=_floats)
    p.add_argument("--with-log", action="store_true")
    p.add_argument("--x-col")
    p.add_argument("--y-col")
    p.add_argument("--absolute", action="store_true")
    p.add_argument("--subtract", type=float, default=0.0)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("hydro", help="hydrodynamic reference solution")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--z", type=float, default=2.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--diffusion", type=float, default=1.0)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--volume", type=float)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--decay", action="store_true")
    p.add_argument("--window", type=_floats)
    p.add_argument("--points", type=int, default=30)
    p.add_argument("--plateau-sizes", type=_floats)
    p.add_argument("--times", type=_floats, metavar="LO,HI,N")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_hydro)

    p = sub.add_parser("gap-ratio", help="mean adjacent-gap ratio per size")
    _add_model_flags(p, single_length=False)
    p.add_argument("--out-dir", default="ethydro-run")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gap_ratio)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--manifest", help="re-run a recorded manifest")
    p.add_argument("--preset")
    p.add_argument("--model")
    p.add_argument("--coupling", action="append", default=[], metavar="K=V")
    p.add_argument("--lengths", "-L", type=_ints)
    p.add_argument("--betas", type=_floats)
    p.add_argument("--observables", type=lambda v: tuple(workflow._split_list(v)))
    p.add_argument("--method", choices=workflow.METHODS)
    p.add_argument("--route", choices=workflow.ROUTES)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--bin-width", type=float)
    p.add_argument("--fit-window", type=_floats)
    p.add_argument("--filter-scale", type=float)
    p.add_argument("--n-p", type=int)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--cheb-tol", type=float)
    p.add_argument("--m-max", type=int)
    p.add_argument("--overlap-threshold", type=float)
    p.add_argument("--roi-tol", type=float)
    p.add_argument("--dynamical-z", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plots", help="emit plot scripts from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_plots)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        rc = args.func(args)
        return 0 if rc is None else int(rc)
    except (ConfigError, OSError, ValueError) as exc:
        # bad flags, unreadable inputs, malformed files: all usage errors
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TaskError as exc:
        print(f"task failed: {exc}", file=sys.stderr)
        return 2
    except (CapExceeded, MemoryError) as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
