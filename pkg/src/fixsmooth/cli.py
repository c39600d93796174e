"""Command-line front end.

Exit status: 0 on success, 1 on a domain error (its class name is printed),
2 on a usage error.  A ``--config`` file holds ``key = value`` lines using
the flag names; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from fixsmooth import __version__
from fixsmooth.exceptions import FixSmoothError

STOCHASTIC = {"simulate", "bootstrap", "upsilon", "erp", "power", "rates", "expand", "test"}
LIST_KEYS = {"model", "T", "K", "alpha", "delta", "b"}


class UsageError(Exception):
    pass


def _parser():
    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared")
    g.add_argument("--config")
    g.add_argument("--model", action="append", help="ar1:RHO[:VAR] | ma1:THETA[:VAR] | iid[:VAR] | custom:PATH")
    g.add_argument("--T", action="append", type=int)
    g.add_argument("--K", action="append", type=int)
    g.add_argument("--kernel", help="bartlett|parzen|qs|daniel|tukey|cosine:PATH")
    g.add_argument("--b", action="append", type=float)
    g.add_argument("--demean", action="store_true", default=None)
    g.add_argument("--l", type=int)
    g.add_argument("--reps", type=int)
    g.add_argument("--inner-reps", dest="inner_reps", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--alpha", action="append", type=float)
    g.add_argument("--mu0", type=float)
    g.add_argument("--out")
    g.add_argument("--x", type=float)
    g.add_argument("--series", help="text file, one value per line")
    g.add_argument("--delta", action="append", type=float)
    g.add_argument("--n", type=int, help="quadrature size for eigensystems")
    g.add_argument("--J", type=int, help="eigen truncation")
    g.add_argument("--what", help="expansion term for the expand command")
    g.add_argument("--method", help="mc or quad where applicable")

    p = argparse.ArgumentParser(prog="fixsmooth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("simulate", "draw a series from a model"),
        ("test", "compute a test statistic for a series"),
        ("eigs", "kernel eigenvalues"),
        ("expand", "evaluate an expansion term"),
        ("bootstrap", "Gaussian dependent bootstrap"),
        ("upsilon", "Upsilon/K surface"),
        ("erp", "rejection-rate experiment"),
        ("power", "power under local alternatives"),
        ("rates", "doubling-T rate diagnostics"),
    ]:
        sub.add_parser(name, parents=[shared], help=helptext)
    return p


def _read_config(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        out[key] = value
    return out


def _coerce(key, text, parser_types):
    conv = parser_types.get(key, str)
    if key in LIST_KEYS:
        return [conv(v.strip()) for v in text.split(",") if v.strip()]
    if key == "demean":
        return text.lower() in ("1", "true", "yes", "on")
    return conv(text)


def resolve(argv):
    """Parse ``argv`` and merge the config file; returns ``(command, dict)``."""
    parser = _parser()
    ns = parser.parse_args(argv)
    args = vars(ns)
    command = args.pop("command")
    cfg_path = args.pop("config")
    types = {"T": int, "K": int, "b": float, "alpha": float, "delta": float, "l": int, "reps": int,
             "inner_reps": int, "seed": int, "mu0": float, "x": float, "n": int, "J": int}
    if cfg_path:
        for key, value in _read_config(cfg_path).items():
            if key not in args:
                raise UsageError(f"unknown config key {key!r}")
            if args[key] is None:
                try:
                    args[key] = _coerce(key, value, types)
                except ValueError as err:
                    raise UsageError(f"bad value for {key}: {value!r}") from err
    if command in STOCHASTIC and args["seed"] is None and not (command == "test" and args["series"]):
        raise UsageError(f"{command} requires --seed")
    return command, args


def _echo(command, args):
    lines = [f"# command = {command}"] + [f"{k} = {v}" for k, v in sorted(args.items()) if v is not None]
    print("\n".join(lines), file=sys.stderr)


def _one(args, key, default=None):
    v = args.get(key)
    if v is None:
        if default is None:
            raise UsageError(f"--{key} is required")
        return default
    return v[0] if isinstance(v, list) else v


def _kernel(args):
    from fixsmooth.kernels import KernelSpec, load_cosine_coefficients

    spec = args.get("kernel")
    if spec is None:
        raise UsageError("--kernel is required")
    b = _one(args, "b", 1.0)
    demeaned = bool(args.get("demean"))
    if spec.startswith("cosine:"):
        return KernelSpec.cosine(load_cosine_coefficients(spec.split(":", 1)[1]), b=b, demeaned=demeaned)
    return KernelSpec.difference(spec, b=b, demeaned=demeaned)


def _model(args):
    from fixsmooth.models import ProcessModel

    return ProcessModel.parse(_one(args, "model"))


def _series(args):
    from fixsmooth.models import simulate
    from fixsmooth.statistics import load_series

    if args.get("series"):
        return load_series(args["series"])
    return simulate(_model(args), _one(args, "T"), _one(args, "seed"))


def _write(rows, header, out):
    if out:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(header)
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_simulate(args):
    from fixsmooth.models import simulate

    x = simulate(_model(args), _one(args, "T"), _one(args, "seed"))
    text = "\n".join(repr(float(v)) for v in x) + "\n"
    if args.get("out"):
        Path(args["out"]).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_test(args):
    from fixsmooth.distributions import t_abs_cdf
    from fixsmooth.statistics import subsampling_t, wald_F

    x = _series(args)
    mu0 = args.get("mu0") or 0.0
    if args.get("K"):
        K = _one(args, "K")
        r = subsampling_t(x, K, mu0)
        p = 1.0 - t_abs_cdf(K - 1, abs(r.statistic))
        _write([("T_K", len(x), K, _fmt(r.statistic), _fmt(p))], ["statistic", "T", "K", "value", "p_value_first_order"],
               args.get("out"))
    else:
        k = _kernel(args)
        r = wald_F(x, k, np.inf, mu0)
        _write([("F_T", len(x), k.name, _fmt(r.statistic), _fmt(r.ingredients["D"]))],
               ["statistic", "T", "kernel", "value", "lrv"], args.get("out"))


def cmd_eigs(args):
    from fixsmooth.kernels import nystrom_eigs

    k = _kernel(args)
    eig = nystrom_eigs(k, n=args.get("n") or 512, J=args.get("J"), allow_coarse=True)
    if args.get("out"):
        eig.to_text(args["out"])
    _write([(j + 1, _fmt(v)) for j, v in enumerate(eig.eigenvalues)], ["j", "lambda"], None)


def cmd_expand(args):
    from fixsmooth import expansion as ex
    from fixsmooth.kernels import demean, nystrom_eigs

    what = (args.get("what") or "psi").lower()
    x = args.get("x")
    if x is None:
        raise UsageError("--x is required")
    reps = args.get("reps") or ex.DEFAULT_REPS
    seed = args.get("seed")
    method = args.get("method") or "mc"
    if what == "upsilon":
        est = ex.upsilon(x, _one(args, "K"), reps, seed, method)
    elif what == "psi":
        est = ex.psi(x, _one(args, "K"), _model(args), _one(args, "T"), reps, seed, method)
    elif what == "upsilon_local":
        est = ex.upsilon_local(x, _one(args, "K"), _one(args, "delta"), reps, seed)
    elif what == "exact":
        est = ex.exact_coeff_expansion(x, _one(args, "K"), _model(args), _one(args, "T"), reps, seed, method)
    elif what == "increasing_k":
        est = ex.increasing_K_expansion(x, _one(args, "K"), _model(args), _one(args, "T"))
    elif what in ("aleph", "fixed_b"):
        eig = nystrom_eigs(demean(_kernel(args)), n=args.get("n") or 512, allow_coarse=True)
        if what == "aleph":
            est = ex.aleph(x, eig, _model(args), _one(args, "T"), np.inf, reps, seed)
        else:
            est = ex.fixed_b_limit_cdf(eig, x, reps, seed)
    elif what in ("small_b", "fix_small"):
        k = _kernel(args)
        m, T = _model(args), _one(args, "T")
        if what == "small_b":
            est = ex.small_b_second_order(x, k.b, T, m, k.form)
        else:
            est = ex.ExpansionEstimate(ex.fix_small_leading(x, k.b, T, m, k.form))
    else:
        raise UsageError(f"unknown --what {what!r}")
    scalars = {k: v for k, v in est.components.items() if np.ndim(v) == 0}
    header = ["term", "x", "value", "se", "reps", *scalars]
    _write([(what, _fmt(x), _fmt(est.value), _fmt(est.mc_std_error), est.reps, *map(_fmt, scalars.values()))], header,
           args.get("out"))


def cmd_bootstrap(args):
    from fixsmooth.bootstrap import SubsamplingT, WaldF, bootstrap_test, write_outcome_csv

    x = _series(args)
    stat = SubsamplingT(_one(args, "K")) if args.get("K") else WaldF(_kernel(args))
    alphas = args.get("alpha") or [0.05]
    rows = []
    outcome = None
    for a in alphas:
        reject, p, outcome = bootstrap_test(x, args.get("mu0") or 0.0, stat, a, args.get("l"),
                                            args.get("reps") or 999, args.get("seed"))
        rows.append((a, _fmt(outcome.critical_values[float(a)]), _fmt(p), _fmt(outcome.observed), int(reject)))
    if args.get("out"):
        write_outcome_csv(outcome, args["out"])
    _write(rows, ["alpha", "critical_value", "p_value", "statistic", "reject"], None)


def cmd_upsilon(args):
    from fixsmooth.harness import run_upsilon_surface

    Ks = args.get("K") or [2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 24, 28, 32]
    alphas = args.get("alpha") or [0.01, 0.05, 0.1]
    rows = run_upsilon_surface(Ks, alphas, args.get("reps") or 500_000, args.get("seed"), args.get("out"),
                               args.get("method") or "mc")
    if not args.get("out"):
        _write([tuple(map(_fmt, r)) for r in rows],
               ["K", "alpha", "x", "upsilon_over_K", "se", "limit_at_x", "limit_at_z", "reps"], None)


def _experiment(args, name):
    from fixsmooth.harness import ExperimentConfig

    if args.get("kernel"):
        bs = args.get("b") or [1.0]
        smoothing = tuple((args["kernel"], b, bool(args.get("demean"))) for b in bs)
    else:
        smoothing = tuple(args.get("K") or [8])
    kw = dict(
        experiment=name,
        seed=args["seed"],
        models=tuple(args.get("model") or ["ar1:0.5"]),
        T=tuple(args.get("T") or [256]),
        smoothing=smoothing,
        alphas=tuple(args.get("alpha") or [0.05]),
        l=args.get("l"),
        out=args.get("out"),
        deltas=tuple(args.get("delta") or [0.0, 1.0, 2.0, 3.0]),
    )
    for key in ("reps", "inner_reps"):
        if args.get(key):
            kw[key] = args[key]
    if name == "rates" and not args.get("reps"):
        kw["reps"] = 200_000
    return ExperimentConfig(**kw)


def _dump(rows, header, out):
    import dataclasses

    if not out:
        _write([tuple(map(_fmt, dataclasses.astuple(r) if dataclasses.is_dataclass(r) else r)) for r in rows],
               header, None)


def cmd_erp(args):
    import dataclasses

    from fixsmooth.harness import ErpRow, run_erp

    cfg = _experiment(args, "erp")
    _dump(run_erp(cfg), [f.name for f in dataclasses.fields(ErpRow)], cfg.out)


def cmd_power(args):
    from fixsmooth.harness import run_power

    cfg = _experiment(args, "power")
    _dump(run_power(cfg), ["model", "T", "K", "alpha", "delta", "rate", "se", "first_order", "predicted",
                           "upsilon_delta_se", "reps"], cfg.out)


def cmd_rates(args):
    from fixsmooth.harness import run_rate_diagnostics

    cfg = _experiment(args, "rates")
    _dump(run_rate_diagnostics(cfg), ["quantity", "model", "setting", "T", "value", "se", "ratio_to_previous",
                                      "ratio_se"], cfg.out)


COMMANDS = {
    "simulate": cmd_simulate,
    "test": cmd_test,
    "eigs": cmd_eigs,
    "expand": cmd_expand,
    "bootstrap": cmd_bootstrap,
    "upsilon": cmd_upsilon,
    "erp": cmd_erp,
    "power": cmd_power,
    "rates": cmd_rates,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, args = resolve(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    _echo(command, args)
    try:
        COMMANDS[command](args)
    except FixSmoothError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
