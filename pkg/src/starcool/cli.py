"""``starcool`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 model-domain error,
4 missing input file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .coherence import (NoiseModel, decay_window, extract_rate, fit_q2, simulate_decay,
                        write_curve, write_rates)
from .config import ConfigError, RunConfig, load_config
from .core import HbacSchedule, StarSystem, run_schedule, steady_state
from .pulse import (BandSpec, EnsembleSpec, OptimizerConfig, design_pulse, simulate_profile,
                    write_profile, write_pulse)
from .sweeps import (EtaFitProblem, ScheduleTemplate, SweepSpec, fit_eta, grid_sweep,
                     best_of, read_measured, two_level_profile)

log = logging.getLogger("starcool")

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_MISSING = 0, 2, 3, 4


class MissingInput(Exception):
    pass


def _header(cfg: RunConfig, command: str, seed) -> str:
    return f"starcool {__version__} command={command} config_sha256={cfg.sha256} seed={seed}"


def _system(cfg: RunConfig) -> StarSystem:
    s = cfg["system"]
    return StarSystem(s["n_reset"], s["gamma"], s["t1_comp"], s["t1_reset"], s["j_rc"],
                      s["temperature"])


def _schedule(cfg: RunConfig, n_reset: int, iterations: int | None = None) -> HbacSchedule:
    sc = cfg["schedule"]
    iterations = sc["iterations"] if iterations is None else iterations
    ms, taus = sc["m"], sc["tau_hb"]
    if len(ms) == 1:
        ms = ms * iterations
    if len(taus) == 1:
        taus = taus * iterations
    if len(ms) != iterations or len(taus) != iterations:
        raise ValueError("schedule.m and schedule.tau_hb must hold 1 or `iterations` values")
    entries = tuple((two_level_profile(n_reset, m, sc["eta_low"], sc["eta_high"]), t)
                    for m, t in zip(ms, taus))
    return HbacSchedule(entries)


def _explicit(cfg: RunConfig) -> bool:
    return cfg["schedule"]["swap_model"] == "explicit"


def _write_table(path, header_line, columns, rows, footer=()):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        for line in footer:
            fh.write(f"# {line}\n")


def cmd_simulate(cfg, args):
    sys_ = _system(cfg)
    trace = run_schedule(sys_, _schedule(cfg, sys_.n_reset), cfg["system"]["background"],
                         explicit=_explicit(cfg))
    _write_table(args.output, _header(cfg, "simulate", "none"),
                 ["n", "magnetization", "spin_temperature_k"], trace.rows())
    log.info("M_%d = %.6g", trace.n[-1], trace.magnetization[-1])


def cmd_steady_state(cfg, args):
    sys_ = _system(cfg)
    sc = cfg["schedule"]
    profile = two_level_profile(sys_.n_reset, sc["m"][0], sc["eta_low"], sc["eta_high"])
    state, m_inf = steady_state(sys_, profile, sc["tau_hb"][0], cfg["system"]["background"],
                                explicit=_explicit(cfg))
    rows = [(j, float(a), float(b)) for j, (a, b) in enumerate(zip(state.p0, state.p1))]
    _write_table(args.output, _header(cfg, "steady-state", "none"), ["j", "p0", "p1"], rows,
                 [f"m_inf={m_inf!r}", f"spin_temperature_k={sys_.temperature / m_inf!r}"])
    log.info("M_inf = %.6g", m_inf)


def cmd_sweep(cfg, args):
    sw = cfg["sweep"]
    sc = cfg["schedule"]
    tpl = ScheduleTemplate(m=sc["m"][0], tau_hb=sc["tau_hb"][0], eta_low=sc["eta_low"],
                           eta_high=sc["eta_high"], randomize=sw["randomize"],
                           seed=sw["seed"], explicit=_explicit(cfg))
    spec = SweepSpec(sw["axis"], tuple(sw["grid"]), _system(cfg), tpl, sw["metric"],
                     sw["m_rule"])
    table = grid_sweep(spec, threads=args.threads)
    best, best_m = best_of(table)
    rows = [(int(v) if spec.axis in ("n_reset", "m") else float(v), float(m))
            for v, m in table.rows()]
    _write_table(args.output, _header(cfg, "sweep", sw["seed"]),
                 [spec.axis, f"m{spec.metric}"], rows,
                 [f"best {spec.axis}={best!r} magnetization={best_m!r}"])
    log.info("best %s = %s (M_%d = %.6g)", spec.axis, best, spec.metric, best_m)


def cmd_fit_eta(cfg, args):
    if not args.data or not os.path.exists(args.data):
        raise MissingInput(f"data file not found: {args.data}")
    measured = read_measured(args.data)
    sys_ = _system(cfg)
    n_max = max(n for n, _ in measured)
    iterations = max(cfg["schedule"]["iterations"], n_max)
    # the split between swapped and unswapped levels comes from the ideal schedule
    sc = dict(cfg["schedule"])
    ideal = RunConfig({**cfg.values, "schedule": {**sc, "eta_low": 0.0, "eta_high": 1.0}})
    fc = cfg["fit"]
    problem = EtaFitProblem(tuple(measured), _schedule(ideal, sys_.n_reset, iterations),
                            fc["parametrization"], fc["smoothness"], n_starts=fc["starts"],
                            seed=fc["seed"], max_evals=fc["max_evals"])
    fit = fit_eta(problem, sys_)
    rows = [(j, float(e)) for j, e in enumerate(fit.profile.eta)]
    footer = [f"residual={fit.residual!r}", f"converged={str(fit.converged).lower()}",
              "params=" + ",".join(repr(float(p)) for p in fit.params)]
    _write_table(args.output, _header(cfg, "fit-eta", fc["seed"]), ["j", "eta"], rows, footer)
    log.info("fit residual = %.3g", fit.residual)


def cmd_design_pulse(cfg, args):
    pc = cfg["pulse"]
    bands = BandSpec(tuple(pc["bands"]), pc["margin"])
    ensemble = EnsembleSpec(tuple(pc["offsets"]), tuple(pc["rf_scales"]))
    opt = OptimizerConfig(max_iterations=pc["max_iterations"], tolerance=pc["tolerance"],
                          gradient_tolerance=pc["gradient_tolerance"], shrink=pc["shrink"],
                          init_scale=pc["init_scale"], seed=pc["seed"],
                          amplitude_cap=pc["amplitude_cap"], method=pc["method"],
                          threads=args.threads)
    result = design_pulse(bands, ensemble, pc["segments"], pc["duration"], opt)
    head = _header(cfg, "design-pulse", pc["seed"])
    write_pulse(result.pulse, args.output, head)
    if args.profile:
        write_profile(simulate_profile(result.pulse, ensemble), args.profile, head)
    log.info("final fidelity = %.6f after %d iterations", result.fidelity, result.log[-1][0])


def cmd_coherence(cfg, args):
    cc = cfg["coherence"]
    noise = NoiseModel(cc["rms"], cc["correlation_time"], cc["trajectories"], cc["seed"])
    head = _header(cfg, "coherence", cc["seed"])
    rates = []
    for q in cc["q"]:
        curve = simulate_decay(q, noise, decay_window(noise, q, cc["points"], cc["depth"]),
                               threads=args.threads)
        g, se = extract_rate(curve, cc["floor"])
        rates.append((q, g, se))
        if args.curves:
            os.makedirs(args.curves, exist_ok=True)
            write_curve(curve, os.path.join(args.curves, f"decay_q{q}.csv"), head)
    fit = fit_q2([(q, g) for q, g, _ in rates]) if len(set(cc["q"])) >= 3 else None
    write_rates(rates, fit, args.output, head)
    if fit is not None:
        log.info("gamma_q vs q^2: slope %.4g, R^2 %.6f", fit.slope, fit.r2)


COMMANDS = {
    "simulate": (cmd_simulate, "run an HBAC schedule and write the cooling trace"),
    "sweep": (cmd_sweep, "evaluate M_n over a one-parameter grid"),
    "fit-eta": (cmd_fit_eta, "estimate swap factors from a measured n,magnetization table"),
    "steady-state": (cmd_steady_state, "fixed point of repeated iterations"),
    "design-pulse": (cmd_design_pulse, "optimize a band-selective inversion pulse"),
    "coherence": (cmd_coherence, "simulate q-quantum coherence decay and fit rates vs q^2"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="starcool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"starcool {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="run configuration file")
        p.add_argument("-o", "--output", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (results do not depend on this)")
        p.add_argument("-q", "--quiet", action="store_true")
        if name == "fit-eta":
            p.add_argument("--data", required=True, help="measured n,magnetization CSV")
        if name == "design-pulse":
            p.add_argument("--profile", help="also write the inversion profile CSV here")
        if name == "coherence":
            p.add_argument("--curves", help="directory for per-order decay curves")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        log.error("config file not found: %s", args.config)
        return EXIT_MISSING
    except ConfigError as exc:
        log.error("%s: %s", args.config, exc)
        return EXIT_CONFIG
    if args.seed is not None:
        for section in cfg.values.values():
            if "seed" in section:
                section["seed"] = args.seed
    handler = COMMANDS[args.command][0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            handler(cfg, args)
    except MissingInput as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        return EXIT_MISSING
    except ValueError as exc:
        log.error("model error: %s", exc)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
