"""
Command-line front end.

    holoidem {pattern,resolve,solve,sweep,validate} [--config FILE] [--seed N]
             [--out FILE] [--parallel N] [--mode MODE] [--scaled | --no-scaled]
             [--global-search]

Output is UTF-8 CSV preceded by ``#`` metadata lines (package version,
command, SHA-256 of the effective config, seed, arctangent convention and
attenuation sign). Floats are written with 17 significant digits.

CSV columns
-----------
pattern   axis1, axis2, value
resolve   n_antennas, r1, theta1, phi1, r2, theta2, phi2, exact, closed_form,
          upper_bound, series_terms, converged, in_fresnel_region
solve     quantity, index, value
sweep     row_type, value, value_si, scheme, trial, mean_min_rate, mean_min_energy_w,
          feasible_fraction, n_ok, n_failed, error
validate  check, passed, detail

Exit codes: 0 success, 1 failed self-test, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from . import beamforming as bf
from .config import (ConfigError, RunConfig, config_hash, parse_config, plane_spec, scenario_template,
                     sweep_spec)
from .evaluation import (LinearArray, beam_pattern, build_scenario, linear_array_pattern, multi_focus_beam,
                         run_sweep)
from .geometry import CircularArray, PolarPoint, propagation_matrix, steering_vector
from .resolution import (BesselSeriesConfig, SeriesNotConverged, bessel_series, closed_form_series,
                         resolution_exact, resolution_params, resolution_upper_bound)

COMMANDS = ("pattern", "resolve", "solve", "sweep", "validate")


@dataclass
class OutputTable:
    header: list
    rows: list
    metadata: dict
    footer: list = None


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def render(table: OutputTable) -> str:
    buf = io.StringIO()
    for k, v in table.metadata.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.header)
    for row in table.rows:
        w.writerow([_fmt(v) for v in row])
    for line in table.footer or ():
        buf.write(f"# {line}\n")
    return buf.getvalue()


def metadata(command: str, cfg: RunConfig) -> dict:
    return {
        "holoidem": __version__,
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "xi_convention": cfg.resolve.convention,
        "attenuation": "exp(-gamma*l)",
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_pattern(cfg: RunConfig, parallel: int = 1) -> OutputTable:
    p = cfg.pattern
    plane = plane_spec(cfg)
    tpl = scenario_template(cfg)
    focus = [PolarPoint(*pt) for pt in p.focus]
    if p.array_type == "circular":
        array = tpl.array
        f = multi_focus_beam([steering_vector(array, pt) for pt in focus])
        grid = beam_pattern(array, f, plane)
    else:
        lam = tpl.array.wavelength
        spacing = p.linear_spacing or lam / 2
        ula = LinearArray(p.linear_antennas, spacing, lam)
        f = multi_focus_beam([ula.steering(np.array([pt.to_cartesian()]))[0] for pt in focus])
        grid = linear_array_pattern(p.linear_antennas, spacing, f, plane, lam)
    rows = [tuple(r) for r in grid.long_form()]
    return OutputTable(["axis1", "axis2", "value"], rows, metadata("pattern", cfg))


def _resolve_pairs(cfg: RunConfig):
    r = cfg.resolve
    if r.kind == "n_sweep":
        return [(n, r.p1, r.p2) for n in r.n_values]
    pairs = list(r.pairs)
    if r.pairs_file:
        try:
            data = np.loadtxt(r.pairs_file, delimiter=",", ndmin=2, comments="#")
        except (OSError, ValueError) as exc:
            raise ConfigError("resolve.pairs_file", str(exc)) from None
        if data.shape[1] != 6:
            raise ConfigError("resolve.pairs_file", "expected 6 columns r1,theta1,phi1,r2,theta2,phi2")
        pairs.extend(tuple(map(float, row)) for row in data)
    if not pairs:
        raise ConfigError("resolve.pairs", "no point pairs given")
    return [(cfg.array.n_antennas, tuple(pr[:3]), tuple(pr[3:])) for pr in pairs]


def cmd_resolve(cfg: RunConfig, parallel: int = 1) -> OutputTable:
    lam = scenario_template(cfg).array.wavelength
    rows = []
    for n, a, b in _resolve_pairs(cfg):
        radius = cfg.array.radius if cfg.resolve.kind == "pairs" else None
        array = CircularArray(n, lam, radius)
        p1, p2 = PolarPoint(*a), PolarPoint(*b)
        exact = resolution_exact(array, p1, p2)
        bound = resolution_upper_bound(resolution_params(array, p1, p2, cfg.resolve.convention))
        try:
            res = closed_form_series(array, p1, p2, BesselSeriesConfig(), cfg.resolve.convention)
            closed, terms, ok, region = res.value, res.n_max, True, res.in_fresnel_region
        except SeriesNotConverged:
            closed, terms, ok, region = math.nan, 0, False, min(p1.r, p2.r) >= array.fresnel_bound
        rows.append((n, p1.r, p1.theta, p1.phi, p2.r, p2.theta, p2.phi, exact, closed, bound, terms, ok, region))
    header = ["n_antennas", "r1", "theta1", "phi1", "r2", "theta2", "phi2", "exact", "closed_form",
              "upper_bound", "series_terms", "converged", "in_fresnel_region"]
    return OutputTable(header, rows, metadata("resolve", cfg))


def cmd_solve(cfg: RunConfig, parallel: int = 1) -> OutputTable:
    tpl = scenario_template(cfg)
    h = cfg.hardware
    scenario = build_scenario(tpl, cfg.seed, 0)
    P = propagation_matrix(tpl.array, tpl.n_rf, tpl.gamma, tpl.beta)
    mode = bf.ControlMode(h.mode, h.scaled)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, _, rep = bf.alternating_optimize(scenario, P, mode, tpl.solver)
    rows = [("mode", 0, str(mode)), ("min_rate", 0, rep.min_rate), ("target_min_rate", 0, rep.target_min_rate),
            ("feasible", 0, rep.feasible), ("converged", 0, rep.converged), ("iterations", 0, rep.iterations),
            ("scale_a", 0, rep.scale_a), ("relative_residual", 0, rep.relative_residual)]
    rows += [("du_rate", i, v) for i, v in enumerate(rep.per_du_rates)]
    rows += [("eu_energy_w", i, v) for i, v in enumerate(rep.per_eu_energy)]
    rows += [("residual", i, v) for i, v in enumerate(rep.residual_history)]
    rows += [("min_rate_history", i, v) for i, v in enumerate(rep.rate_history)]
    return OutputTable(["quantity", "index", "value"], rows, metadata("solve", cfg))


def cmd_sweep(cfg: RunConfig, parallel: int = 1) -> OutputTable:
    spec = sweep_spec(cfg)
    shown = dict(zip(spec.grid, cfg.sweep.grid))

    def progress(done, total):
        sys.stderr.write(f"\r{done}/{total}")
        if done == total:
            sys.stderr.write("\n")

    res = run_sweep(spec, scenario_template(cfg), parallel=parallel,
                    progress=progress if sys.stderr.isatty() else None)
    rows = [("mean", shown[r.value], r.value, r.scheme, "", r.mean_min_rate, r.mean_min_energy,
             r.feasible_fraction, r.n_ok, r.n_failed, "") for r in res.summary]
    rows += [("trial", shown[r.value], r.value, r.scheme, r.trial, r.min_rate, r.min_energy,
              float(r.feasible), int(not r.error), int(bool(r.error)), r.error) for r in res.trials]
    header = ["row_type", "value", "value_si", "scheme", "trial", "mean_min_rate", "mean_min_energy_w",
              "feasible_fraction", "n_ok", "n_failed", "error"]
    return OutputTable(header, rows, metadata("sweep", cfg))


# ---------------------------------------------------------------------------
# Self-tests
# ---------------------------------------------------------------------------

def _check_convention(array: CircularArray):
    # Fresnel-region pairs where eta4 takes both signs: the atan2 series must
    # equal the phase model as a complex number and track the direct sum
    pairs = [((15.0, 1.2, 0.3), (18.0, 1.9, 2.5)), ((20.0, 1.5708, 4.0), (16.0, 1.0, 5.5)),
             ((25.0, 0.7, 1.0), (30.0, 2.2, 3.9)), ((15.0, 1.5708, 0.0), (20.0, 0.5236, 1.0472))]
    x = np.linspace(0.0, 2 * np.pi, 8192, endpoint=False)
    model_err = value_err = 0.0
    for a, b in pairs:
        p1, p2 = PolarPoint(*a), PolarPoint(*b)
        prm = resolution_params(array, p1, p2, "atan2")
        phase = prm.eta1 * np.cos(x) + prm.eta2 * np.sin(x) + prm.eta3 * np.cos(2 * x) + prm.eta4 * np.sin(2 * x)
        series, _, _ = bessel_series(prm)
        model_err = max(model_err, abs(series / prm.xi5 - np.mean(np.exp(-1j * phase))))
        value_err = max(value_err, abs(closed_form_series(array, p1, p2).value - resolution_exact(array, p1, p2)))
    ok = model_err < 1e-9 and value_err < 1e-2
    return ok, f"series vs phase model {model_err:.2g}; closed vs exact {value_err:.2g}"


def _check_truncation(array: CircularArray):
    p1, p2 = PolarPoint(15.0, np.pi / 2, 0.0), PolarPoint(20.0, np.pi / 6, np.pi / 3)
    base = closed_form_series(array, p1, p2)
    tight = closed_form_series(array, p1, p2, BesselSeriesConfig(abs_tolerance=1e-15, max_terms=4 * base.n_max + 64))
    d = abs(base.value - tight.value)
    return d < 1e-10, f"tolerance 1e-12 vs 1e-15 differ by {d:.3g}"


def _orthogonal_scenario(n: int, k: int, l: int, rng) -> bf.Scenario:
    raw = rng.standard_normal((n, k + l)) + 1j * rng.standard_normal((n, k + l))
    qmat, _ = np.linalg.qr(raw)
    gains = rng.uniform(0.02, 0.1, k + l)
    hs = [qmat[:, i] * gains[i] for i in range(k + l)]
    return bf.Scenario(hs[:k], hs[k:], 1.0, 1e-6, 1e-4)


def _check_orthogonal(array: CircularArray):
    sc = _orthogonal_scenario(array.n_antennas, 3, 2, np.random.default_rng(0))
    f = bf.fd_asymptotic(sc)
    rep = bf.digital_report(sc, f)
    norm_err = abs(np.linalg.norm(f) - 1.0)
    rate_spread = float(np.ptp(rep.per_du_rates) / rep.per_du_rates.max())
    e_err = float(np.max(np.abs(rep.per_eu_energy / sc.energy_floor - 1.0)))
    ok = norm_err < 1e-9 and rate_spread < 1e-9 and e_err < 1e-9
    return ok, f"|1-||f|||={norm_err:.2g} rate spread={rate_spread:.2g} energy error={e_err:.2g}"


def _check_descale(cfg: RunConfig):
    tpl = replace(scenario_template(cfg), n_antennas=min(cfg.array.n_antennas, 200))
    sc = build_scenario(replace(tpl, solver=replace(tpl.solver, on_infeasible="saturate")), cfg.seed, 0)
    P = propagation_matrix(tpl.array, tpl.n_rf, tpl.gamma, tpl.beta)
    opts = replace(tpl.solver, on_infeasible="saturate", max_iterations=20)
    worst = 0.0
    for kind in bf.ControlKind:
        mode = bf.ControlMode(kind, True)
        f = bf.fd_asymptotic(sc, "saturate")
        q = bf.initial_analog(f.shape[0], mode)
        b = bf.digital_ls_update(P, q, f)
        q = bf.analog_update(bf.analog_target(f, P, b), mode, opts)
        b = bf.normalize_digital(b, q, P)
        r0, e0 = bf.link_metrics(sc, bf.effective_beam(q, P, b))
        q1, b1 = bf.descale(q, b)
        r1, e1 = bf.link_metrics(sc, bf.effective_beam(q1, P, b1))
        worst = max(worst, float(np.max(np.abs(r1 - r0) / r0)), float(np.max(np.abs(e1 - e0) / e0)),
                    q1.constraint_violation())
    return worst < 1e-10, f"max relative change / violation = {worst:.2g}"


def _check_steering(array: CircularArray):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        p = PolarPoint(rng.uniform(1.0, 50.0), rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi))
        worst = max(worst, abs(np.linalg.norm(steering_vector(array, p)) - 1.0))
    return worst < 1e-12, f"max |norm-1| = {worst:.2g}"


def cmd_validate(cfg: RunConfig, parallel: int = 1) -> OutputTable:
    array = scenario_template(cfg).array
    checks = [("xi_sign_convention", lambda: _check_convention(array)),
              ("series_truncation", lambda: _check_truncation(array)),
              ("orthogonal_identities", lambda: _check_orthogonal(array)),
              ("descale_invariance", lambda: _check_descale(cfg)),
              ("steering_norm", lambda: _check_steering(array))]
    rows = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))
    passed = sum(r[1] for r in rows)
    return OutputTable(["check", "passed", "detail"], rows, metadata("validate", cfg),
                       footer=[f"passed {passed}/{len(rows)}"])


_DISPATCH = {"pattern": cmd_pattern, "resolve": cmd_resolve, "solve": cmd_solve, "sweep": cmd_sweep,
             "validate": cmd_validate}


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    hw = cfg.hardware
    if args.mode is not None:
        try:
            hw = replace(hw, mode=bf.ControlKind.parse(args.mode).value)
        except ValueError as exc:
            raise ConfigError("--mode", str(exc)) from None
    if args.scaled is not None:
        hw = replace(hw, scaled=args.scaled)
    if args.global_search:
        hw = replace(hw, global_search=True)
    cfg = replace(cfg, hardware=hw)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=args.seed)
    return cfg


def execute(command: str, cfg: RunConfig, parallel: int = 1) -> tuple[OutputTable, int]:
    """Run ``command``; the exit code is 1 only when a self-test fails."""
    table = _DISPATCH[command](cfg, parallel)
    code = 0
    if command == "validate" and not all(r[1] for r in table.rows):
        code = 1
    return table, code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="holoidem", description="Circular-array near-field beamforming toolkit.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file (defaults if omitted)")
    ap.add_argument("--seed", type=int, help="master seed (overrides config)")
    ap.add_argument("--out", help="output CSV path (default: stdout)")
    ap.add_argument("--parallel", type=int, default=1, help="worker processes for sweep")
    ap.add_argument("--mode", help="analog control mode: amplitude, binary or lorentzian")
    ap.add_argument("--scaled", dest="scaled", action="store_true", default=None)
    ap.add_argument("--no-scaled", dest="scaled", action="store_false")
    ap.add_argument("--global-search", action="store_true", help="grid search for the Lorentzian scale")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError("--config", str(exc)) from None
        cfg = apply_flags(parse_config(text), args)
        if args.parallel < 1:
            raise ConfigError("--parallel", "must be at least 1")
        table, code = execute(args.command, cfg, args.parallel)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except bf.EnergyInfeasible as exc:
        print(f"infeasible: {exc} (set solver.on_infeasible to \"saturate\" to continue)", file=sys.stderr)
        return 1
    out = render(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
