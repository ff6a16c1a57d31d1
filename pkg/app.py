import argparse
import logging
import os
import sys

import numpy as np
from dotenv import load_dotenv

# Import custom modules
from config import HypothesesConfig, load_config, resolve_model
from history import clear_run_history, history_frame, save_run_history
from kfplab.discrete_complex import (GridSpec, adjoint_symmetry_check, assemble_complex, export_triplets,
                                     verify_complex)
from kfplab.errors import BadFit, HypothesisFails, LabError, NotAGraph, NoPositiveEpsilon
from kfplab.hypothesis_checker import hypothesis_report
from kfplab.landscape import classify_landscape, find_critical_points
from kfplab.spectral_lab import (fit_splitting, jackknife_slope, lattice_candidates, localization_check,
                                 low_spectrum, match_lattice, pairing_check, predict_prefactor,
                                 probe_points, resolvent_probe, saddle_concentration, spectral_window_check,
                                 splitting_vector, sweep_splitting)
from kfplab.symbol_geometry import escape_form, lattice_report, stable_quadratic_form, transport_direction
from reports import summary_frame, write_csv, write_json

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

# Constants
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
COMMANDS = ("analyze", "check", "spectrum", "splitting", "complex-verify", "resolvent", "history")


def _solver_kwargs(config):
    s = config.solver
    return {"k": s.count, "window": s.window, "basis": s.basis, "tol": s.tol,
            "max_restarts": s.max_restarts, "seed": config.seed}


def _complex(config, model, h=None):
    h = config.h if h is None else h
    grid = GridSpec.for_h(model.dim, h, config.grid.half_width, config.grid.multiplier)
    logger.info(f"Assembling {model.name} on {grid.points} at h = {h}")
    return assemble_complex(grid, model, h)


def _wells_or_none(points):
    try:
        return classify_landscape(points)
    except LabError as e:
        logger.info(f"No double-well structure: {e}")
        return None


def _point_dict(cp):
    return {"location": cp.location.tolist(), "value": cp.value, "index": cp.index,
            "hessian": cp.hessian.matrix.tolist(), "inertia": list(cp.hessian.inertia)}


def cmd_analyze(config, out):
    """Landscape and symbol geometry reports."""
    model = resolve_model(config)
    points = find_critical_points(model)
    landscape = {"model": model.to_dict(), "critical_points": [_point_dict(cp) for cp in points]}
    outputs = []
    try:
        wells = classify_landscape(points)
    except LabError:
        landscape["double_well"] = False
        outputs.append(write_json(landscape, os.path.join(out, "landscape.json")))
        raise
    landscape.update({
        "double_well": True,
        "actions": {str(j): s for j, s in wells.actions.items()},
        "s_min": wells.s_min,
        "shallow": wells.shallow,
    })
    outputs.append(write_json(landscape, os.path.join(out, "landscape.json")))

    lattice = lattice_report(model, points, (0, 1), config.solver.window)
    geometry = {}
    saddle = wells.saddle
    kappa, zeta = transport_direction(model, saddle)
    geometry["saddle"] = {"kappa": kappa, "zeta": zeta.tolist()}
    for direction in ("outgoing", "incoming"):
        try:
            geometry["saddle"][direction] = stable_quadratic_form(model, saddle, direction).matrix.tolist()
        except NotAGraph as e:
            geometry["saddle"][direction] = {"error": str(e)}
    geometry["escape"] = []
    for cp in points:
        entry = {"location": cp.location.tolist()}
        try:
            cert = escape_form(model, cp)
            entry.update({"epsilon_star": cert.epsilon_star, "margin": cert.margin,
                          "G": cert.G.matrix.tolist(), "G_tilde": cert.G_tilde.matrix.tolist()})
        except NoPositiveEpsilon as e:
            entry["error"] = str(e)
        geometry["escape"].append(entry)
    outputs.append(write_json({"lattice": lattice, "geometry": geometry}, os.path.join(out, "lattice.json")))

    saddle_entry = lattice[points.index(saddle)]
    summary = {"S_min": wells.s_min, "saddle lambdas": [complex(*z) for z in saddle_entry["lambdas"]]}
    return outputs, True, summary


def cmd_check(config, out):
    """Hypothesis certificates on the configured sample ring."""
    model = resolve_model(config)
    points = find_critical_points(model)
    hc = config.hypotheses
    doc, averages = hypothesis_report(model, points, hc.T0, hc.ring_radius, hc.exclusion, hc.threshold,
                                      tuple(hc.eps_grid), hc.ring_count, hc.bump_radius, hc.far_radius)
    doc["notes"] = ["defaults used"] if hc == HypothesesConfig() else []
    outputs = [write_json(doc, os.path.join(out, "hypotheses.json")),
               write_csv(averages.to_frame(), os.path.join(out, "hypotheses.csv"))]
    if not doc["pass"]:
        failed = [e["null_direction"] for e in doc["ny17"] if not e["pass"]]
        raise HypothesisFails("hypothesis certificates failed", direction=failed[0] if failed else None,
                              report=averages)
    return outputs, True, {"ny17 points": len(doc["ny17"]), "min average": float(averages.averages.min())}


def cmd_spectrum(config, out):
    """Low-lying spectrum at one h, matched against the lattice."""
    model = resolve_model(config)
    points = find_critical_points(model)
    wells = _wells_or_none(points)
    h, degree = config.h, config.degree
    solver = _solver_kwargs(config)
    cx = _complex(config, model)
    candidates = lattice_candidates(model, points, degree, config.solver.window)
    spectrum = low_spectrum(cx, degree, candidates=candidates, **solver)
    match = match_lattice(spectrum.eigenvalues / h, candidates)
    doc = {
        "h": h,
        "degree": degree,
        "grid": list(cx.grid.points),
        "shifts": [[s.real, s.imag] for s in spectrum.shifts],
        "match": match.to_dict(),
        "window": spectral_window_check(spectrum.eigenvalues, h, config.solver.window, lattice=candidates),
    }
    checks = [doc["window"]["pass"]]
    if degree == 1:
        base = low_spectrum(cx, 0, candidates=lattice_candidates(model, points, 0, config.solver.window),
                            **solver)
        doc["pairing"] = pairing_check(base, spectrum)
        checks.append(doc["pairing"]["pass"])
        if wells is not None and spectrum.eigenvalues.size:
            _, u1 = splitting_vector(spectrum)
            doc["saddle_mass"] = saddle_concentration(cx, wells, u1)
    elif wells is not None and spectrum.nonzero().size:
        _, u0 = splitting_vector(spectrum)
        doc["localization"] = localization_check(cx, wells, u0)

    outputs = [write_csv(spectrum.to_frame(match), os.path.join(out, "spectrum.csv")),
               write_json(doc, os.path.join(out, "spectrum.json"))]
    nonzero = spectrum.nonzero()
    smallest = complex(nonzero[np.argmin(np.abs(nonzero))]) if nonzero.size else None
    return outputs, all(checks), {"values": len(spectrum.eigenvalues), "smallest nonzero": smallest,
                                  "max lattice deviation": match.max_deviation}


def cmd_splitting(config, out):
    """Sweep h, fit the exponential law and compare with the predicted prefactor."""
    model = resolve_model(config)
    wells = classify_landscape(find_critical_points(model))
    solver = _solver_kwargs(config)
    solver["keep_vectors"] = False
    table = sweep_splitting(model, config.sweep.h, config.grid.half_width, config.grid.multiplier, **solver)
    outputs = [write_csv(table, os.path.join(out, "splitting.csv"))]

    try:
        fit = fit_splitting(table, slope_target=2.0 * wells.s_min)
    except BadFit as e:
        outputs.append(write_json(e.fit.to_dict(), os.path.join(out, "fit.json")))
        raise
    doc = fit.to_dict()
    doc["jackknife"] = jackknife_slope(table)
    try:
        prefactor = predict_prefactor(model, wells, config.prefactor.r0, config.prefactor.trust_angle)
        doc["predicted_prefactor"] = prefactor.predicted_total
        doc["prefactor_ratio"] = fit.prefactor / prefactor.predicted_total
        outputs.append(write_json(prefactor.to_dict(), os.path.join(out, "prefactor.json")))
    except LabError as e:
        logger.warning(f"Prefactor prediction failed: {e}")
        doc["predicted_prefactor"] = None
        doc["prefactor_error"] = str(e)
    outputs.append(write_json(doc, os.path.join(out, "fit.json")))

    if not fit.passed:
        raise BadFit(f"slope {fit.slope:.6f} misses 2 S_min = {fit.slope_target:.6f}", fit=fit)
    return outputs, True, {"slope": fit.slope, "slope target": fit.slope_target, "prefactor": fit.prefactor,
                           "R^2": fit.r2}


def cmd_complex_verify(config, out):
    """Structural defects of the assembled complex."""
    model = resolve_model(config)
    cx = _complex(config, model)
    report = verify_complex(cx, seed=config.seed)
    transposed = assemble_complex(cx.grid, model.transposed(), cx.h)
    report["adjoint_symmetry"] = {"defect": adjoint_symmetry_check(cx, transposed)}
    outputs = [write_json(report, os.path.join(out, "defects.json"))]
    if config.output.triplets:
        for name in ("d0", "d1", "lap0", "weight1", "stiffness1"):
            path = os.path.join(out, f"{name}.txt")
            export_triplets(getattr(cx, name), path)
            outputs.append(path)
    return outputs, report["pass"], {"d1 d0": report["d1d0"]["defect"], "kernel": report["kernel"]["defect"],
                                     "accretivity": report["accretivity"]["min_value"]}


def cmd_resolvent(config, out):
    """Resolvent norm estimates on the probe circle."""
    model = resolve_model(config)
    cx = _complex(config, model)
    spectrum = low_spectrum(cx, 0, keep_vectors=False, **_solver_kwargs(config))
    rc = config.resolvent
    points = probe_points(cx.h, rc.radius_factor, rc.probes)
    df = resolvent_probe(cx, points, spectrum.eigenvalues, rc.C)
    outputs = [write_csv(df, os.path.join(out, "resolvent.csv"))]
    finite = bool(np.isfinite(df["norm_estimate"]).all())
    return outputs, finite, {"max h * norm": float(df["h_times_estimate"].max())}


def cmd_history(args):
    if args.clear:
        clear_run_history()
        print("Run history cleared.")
        return 0
    df = history_frame()
    if df.empty:
        print("No run history available.")
    else:
        print(df.to_string(index=False))
    return 0


HANDLERS = {
    "analyze": cmd_analyze,
    "check": cmd_check,
    "spectrum": cmd_spectrum,
    "splitting": cmd_splitting,
    "complex-verify": cmd_complex_verify,
    "resolvent": cmd_resolvent,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="kfplab",
                                     description="Spectral lab for Witten and Kramers-Fokker-Planck Laplacians")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--model", help="registry model name")
    parser.add_argument("--h", type=float, help="semiclassical parameter")
    parser.add_argument("--degree", type=int, help="form degree (0 or 1)")
    parser.add_argument("--seed", type=int, help="random seed (default 42)")
    parser.add_argument("--log-level", help="logging level (default INFO)")
    parser.add_argument("--clear", action="store_true", help="with 'history': remove the run ledger")
    return parser


def _overrides(args):
    overrides = {}
    if args.out is not None:
        overrides["output"] = {"directory": args.out}
    if args.model is not None:
        overrides["model"] = {"name": args.model, "inline": None}
    for key in ("h", "degree", "seed"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.log_level is not None:
        overrides["log_level"] = args.log_level.upper()
    return overrides


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "history":
        return cmd_history(args)

    try:
        config = load_config(args.config, _overrides(args))
    except LabError as e:
        print(f"Error {args.command}: {e}")
        return e.exit_code

    logging.basicConfig(level=getattr(logging, config.log_level, logging.INFO), format=LOG_FORMAT)
    out = config.output.directory
    os.makedirs(out, exist_ok=True)
    outputs = [write_json(config.to_dict(), os.path.join(out, "config_used.json"))]
    model_name = config.model.inline["name"] if config.model.inline else config.model.name

    try:
        written, passed, summary = HANDLERS[args.command](config, out)
    except (LabError, ValueError) as e:
        code = e.exit_code if isinstance(e, LabError) else 1
        print(f"Error {args.command}: {e}")
        save_run_history(args.command, model_name, outputs, "error")
        return code

    outputs.extend(written)
    status = "passed" if passed else "failed"
    save_run_history(args.command, model_name, outputs, status)
    print(f"{args.command} {model_name}: {status}")
    print(summary_frame(summary).to_string(index=False))
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
