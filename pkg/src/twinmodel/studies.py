"""End-to-end experiment pipelines behind the command-line driver.

Every stage reads and writes files in a fixed run-directory layout::

    config.json  gray/  twin/  gradients/  report/

so stages can be rerun independently. All JSON is written with sorted keys
and floats in ``repr`` form, which keeps repeated runs byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .adjoint import (GradientReport, ObjectiveSpec, adjoint_gradient_wrt_geometry,
                      reverse_sweep)
from .config import dump_json
from .eos import ParamEos, ReferenceEos, StateHull, build_param_eos
from .fields import Grid1D, excited_range, mismatch_spacetime, read_field_csv, write_field_csv
from .flux import BuckleyLeverettFlux, SigmoidFluxBasis, TwinFlux
from .fv1d import ControlField, SolverConfig, initial_condition, run_forward
from .inference import (FluxData, InferenceProblem, SteadyEosData, WeightSet, calibrate_weights,
                        eos_recovery_report, eos_sample_sets, flux_recovery_report,
                        gray_state_cloud, steady_sq_norms, train)
from .nozzle import (BsplineArea, FlowBc, NozzleConfig, mass_flux_inlet, mass_flux_outlet,
                     read_steady_csv, solve_steady)

logger = logging.getLogger(__name__)

SUBDIRS = ("gray", "twin", "gradients", "report")


class MissingInputError(FileNotFoundError):
    """Required artifacts of an earlier stage are absent."""

    def __init__(self, missing):
        self.missing = sorted(str(m) for m in missing)
        super().__init__("missing input files:\n  " + "\n  ".join(self.missing))


class NumericalFailure(RuntimeError):
    pass


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _require(paths):
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        raise MissingInputError(missing)


def prepare_run_dir(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for d in SUBDIRS:
        (out / d).mkdir(exist_ok=True)
    dump_json(cfg, out / "config.json")


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _training_problem(cfg: dict, mode: str, initial=None, lam_rel=None) -> InferenceProblem:
    t = cfg["training"]
    return InferenceProblem(mode=mode, lam=t["lambda"],
                            lam_rel=t["lambda_rel"] if lam_rel is None else lam_rel,
                            memory=t["memory"], max_iter=t["max_iter"], gtol=t["gtol"],
                            initial_guess=initial)


def _train_summary(res) -> dict:
    last = res.trace[-1] if res.trace else None
    return {"status": res.status, "n_iter": res.n_iter, "lambda": res.lam,
            "objective": None if last is None else last.objective,
            "mismatch": None if last is None else last.mismatch,
            "proj_grad_inf": None if last is None else last.proj_grad_inf}


# -- porous 1-D case ----------------------------------------------------------------

def porous_grid(cfg: dict) -> Grid1D:
    g = cfg["porous1d"]["grid"]
    return Grid1D.uniform(g["nx"], g["nt"], length=g["length"], horizon=g["horizon"])


def porous_basis(cfg: dict) -> SigmoidFluxBasis:
    b = cfg["porous1d"]["basis"]
    return SigmoidFluxBasis.default(b["m"], b["lo"], b["hi"])


def porous_truth(cfg: dict):
    t = cfg["porous1d"]["truth"]
    if t["kind"] == "buckley_leverett":
        return BuckleyLeverettFlux(float(t.get("A", 2.0)))
    return TwinFlux(porous_basis(cfg), np.asarray(t["xi"], float))


def porous_solver(cfg: dict) -> SolverConfig:
    s = cfg["porous1d"]["solver"]
    return SolverConfig(newton_tol=s["newton_tol"], newton_max_iter=s["newton_max_iter"],
                        limiter=s["limiter"])


def porous_control(cfg: dict, grid: Grid1D, index: int) -> ControlField:
    c = cfg["porous1d"]["control"]
    if c["kind"] == "zero":
        return ControlField.zeros(grid)
    if c["kind"] == "constant":
        return ControlField(np.full(grid.shape, float(c["value"])), grid)
    rng = np.random.default_rng([cfg["seed"], index])
    return ControlField(c["amplitude"] * rng.uniform(-1.0, 1.0, grid.shape), grid)


def porous_objective(cfg: dict) -> ObjectiveSpec:
    o = cfg["porous1d"]["objective"]
    return ObjectiveSpec.tracking(o["target"], o["control_weight"])


def _ic_values(ic: dict, grid: Grid1D) -> np.ndarray:
    x = (grid.cell_centers - grid.x0) / grid.length
    return initial_condition(ic["kind"], x, ic["low"], ic["high"], ic["center"], ic["width"])


def _porous_generate_one(args):
    cfg, out, index = args
    ic = cfg["porous1d"]["initial_conditions"][index]
    grid = porous_grid(cfg)
    truth = porous_truth(cfg)
    solver = porous_solver(cfg)
    control = porous_control(cfg, grid, index)
    run = run_forward(_ic_values(ic, grid), truth, control, grid, solver)
    fld = run.field
    mass = fld.total_mass()
    src = 0.5 * (control.values[1:] + control.values[:-1]) @ grid.cell_widths * grid.time_steps[:-1]
    drift = float(np.max(np.abs(mass - mass[0] - np.concatenate([[0.0], np.cumsum(src)]))))
    tol = solver.newton_tol * grid.nx
    if drift > tol:
        raise NumericalFailure(f"{ic['name']}: mass drift {drift:.3e} exceeds {tol:.3e}")
    gray = Path(out) / "gray"
    write_field_csv(gray / f"{ic['name']}.csv", fld)
    lo, hi = excited_range(fld)
    meta = {"initial_condition": ic, "grid": grid.to_dict(), "truth": truth.to_dict(),
            "truth_fingerprint": fingerprint(truth.to_dict()), "seed": cfg["seed"],
            "control": cfg["porous1d"]["control"], "excited_range": [lo, hi],
            "mass_drift": drift}
    dump_json(meta, gray / f"{ic['name']}.meta.json")
    return ic["name"]


def _ic_names(cfg):
    return [ic["name"] for ic in cfg["porous1d"]["initial_conditions"]]


def porous_generate(cfg: dict, out: Path, jobs: int = 1):
    n = len(cfg["porous1d"]["initial_conditions"])
    return _map(_porous_generate_one, [(cfg, str(out), i) for i in range(n)], jobs)


def _load_gray(cfg, out, index):
    name = _ic_names(cfg)[index]
    path = Path(out) / "gray" / f"{name}.csv"
    _require([path])
    grid = porous_grid(cfg)
    return read_field_csv(path, grid)


def _perturbed_truth(cfg, basis):
    """Perturbed copy of a twin truth (self-consistency studies); ``None`` otherwise."""
    rel = cfg["training"]["perturb_truth"]
    truth = cfg["porous1d"]["truth"]
    if rel is None or truth["kind"] != "twin":
        return None
    rng = np.random.default_rng([cfg["seed"], 7919])
    xi = np.asarray(truth["xi"], float)
    return np.maximum(xi * (1.0 + rel * rng.standard_normal(xi.size)), 0.0)


def _porous_train_one(args):
    cfg, out, index, lam_rel, dest = args
    name = _ic_names(cfg)[index]
    gray = _load_gray(cfg, out, index)
    basis = porous_basis(cfg)
    data = FluxData(gray, basis, porous_control(cfg, gray.grid, index), porous_solver(cfg))
    model_path = Path(dest) / f"{name}.model.json"
    init = None
    if cfg["training"]["resume"] and model_path.exists():
        init = TwinFlux.load(model_path).xi
    elif (p := _perturbed_truth(cfg, basis)) is not None:
        init = p
    res = train(_training_problem(cfg, "spacetime-flux", init, lam_rel), data)
    res.model.save(model_path)
    res.write_trace(Path(dest) / f"{name}.trace.csv")
    summary = _train_summary(res)
    dump_json(summary, Path(dest) / f"{name}.train.json")
    return name, summary, [float(v) for v in res.coeffs]


def porous_train(cfg: dict, out: Path, jobs: int = 1):
    _require([Path(out) / "gray" / f"{n}.csv" for n in _ic_names(cfg)])
    items = [(cfg, str(out), i, None, str(Path(out) / "twin")) for i in range(len(_ic_names(cfg)))]
    return _map(_porous_train_one, items, jobs)


def _porous_gradient_one(args):
    cfg, out, index, truth_mode = args
    name = _ic_names(cfg)[index]
    gray = _load_gray(cfg, out, index)
    model = TwinFlux.load(Path(out) / "twin" / f"{name}.model.json")
    control = porous_control(cfg, gray.grid, index)
    solver = porous_solver(cfg)
    obj = porous_objective(cfg)
    twin_run = run_forward(gray.values[0], model, control, gray.grid, solver)
    g_twin = reverse_sweep(twin_run, obj).grad_control
    ref = None
    if truth_mode:
        truth_run = run_forward(gray.values[0], porous_truth(cfg), control, gray.grid, solver)
        ref = reverse_sweep(truth_run, obj).grad_control
    rep = GradientReport(g_twin, ref, {"case": "porous1d", "initial_condition": name,
                                       "wrt": "control", "objective": obj.to_dict()})
    gdir = Path(out) / "gradients"
    rep.write(gdir / f"{name}.csv")
    summary = rep.summary()
    summary["threshold"] = cfg["gradient"]["threshold"]
    summary["within_threshold"] = (None if ref is None
                                   else bool(rep.rel_l2_err <= cfg["gradient"]["threshold"]))
    dump_json(summary, gdir / f"{name}.json")
    return name, summary


def porous_gradient(cfg: dict, out: Path, truth_mode: bool = False, jobs: int = 1):
    names = _ic_names(cfg)
    _require([Path(out) / "twin" / f"{n}.model.json" for n in names]
             + [Path(out) / "gray" / f"{n}.csv" for n in names])
    return _map(_porous_gradient_one, [(cfg, str(out), i, truth_mode) for i in range(len(names))], jobs)


def porous_expected_files(cfg: dict, out: Path):
    out = Path(out)
    files = []
    for n in _ic_names(cfg):
        files += [out / "gray" / f"{n}.csv", out / "gray" / f"{n}.meta.json",
                  out / "twin" / f"{n}.model.json", out / "gradients" / f"{n}.json"]
    return files


def porous_report(cfg: dict, out: Path) -> dict:
    out = Path(out)
    _require(porous_expected_files(cfg, out))
    truth = porous_truth(cfg)
    solver = porous_solver(cfg)
    rdir = out / "report"
    runs = {}
    for index, name in enumerate(_ic_names(cfg)):
        gray = _load_gray(cfg, out, index)
        model = TwinFlux.load(out / "twin" / f"{name}.model.json")
        lo, hi = excited_range(gray)
        fr = flux_recovery_report(model, truth, (lo, hi))
        with open(rdir / f"{name}_flux_derivative.csv", "w") as fh:
            fh.write("u,dF_twin,dF_truth\n")
            for row in zip(fr["u"], fr["dF_trained"], fr["dF_truth"]):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        twin = run_forward(gray.values[0], model, porous_control(cfg, gray.grid, index),
                           gray.grid, solver).field
        with open(rdir / f"{name}_mismatch.csv", "w") as fh:
            fh.write("t,x,gray,twin,diff\n")
            t, x = gray.grid.time_points, gray.grid.cell_centers
            for k in range(gray.grid.nt):
                for i in range(gray.grid.nx):
                    a, b = gray.values[k, i], twin.values[k, i]
                    fh.write(f"{t[k]!r},{x[i]!r},{a!r},{b!r},{b - a!r}\n")
        grad = json.loads((out / "gradients" / f"{name}.json").read_text())
        runs[name] = {
            "flux_derivative": {k: fr[k] for k in ("excited", "in_rel_l2", "in_rel_sup",
                                                   "out_rel_l2", "recovered_width")}
                               | {"csv": f"{name}_flux_derivative.csv"},
            "mismatch": {"value": mismatch_spacetime(twin, gray), "csv": f"{name}_mismatch.csv"},
            "gradient": grad,
        }
    widths = [r["flux_derivative"]["excited"][1] - r["flux_derivative"]["excited"][0] for r in runs.values()]
    recovered = [r["flux_derivative"]["recovered_width"] for r in runs.values()]
    trend = {"excited_width": widths, "recovered_width": recovered, "spearman": None}
    if len(runs) >= 3 and np.ptp(widths) > 0 and np.ptp(recovered) > 0:
        trend["spearman"] = float(spearmanr(widths, recovered).statistic)
    report = {"case": "porous1d", "truth": truth.to_dict(), "runs": runs, "trend": trend}
    dump_json(report, rdir / "report.json")
    return report


# -- nozzle EOS case -------------------------------------------------------------------

def nozzle_setup(cfg: dict):
    n = cfg["nozzle"]
    spline = BsplineArea.from_ordinates(n["ordinates"], length=n["length"])
    bc = FlowBc(**n["bc"])
    ncfg = NozzleConfig(n_cells=n["n_cells"], steady_tol=n["steady_tol"])
    e = n["eos"]
    truth = ReferenceEos(e["kind"], e.get("gamma", 1.4), e.get("a"), e.get("b"))
    return spline, bc, ncfg, truth


def nozzle_generate(cfg: dict, out: Path):
    spline, bc, ncfg, truth = nozzle_setup(cfg)
    state = solve_steady(truth, spline, bc, ncfg)
    gray = Path(out) / "gray"
    state.write_csv(gray / "steady.csv", spline)
    spline.save(gray / "geometry.json")
    j_in, j_out = mass_flux_inlet(state, spline), mass_flux_outlet(state, spline)
    if abs(j_in - j_out) >= 10.0 * ncfg.steady_tol:
        raise NumericalFailure(f"inlet/outlet mass flux disagree: {j_in!r} vs {j_out!r}")
    meta = {"truth": truth.to_dict(), "truth_fingerprint": fingerprint(truth.to_dict()),
            "seed": cfg["seed"], "bc": bc.to_dict(), "n_cells": ncfg.n_cells,
            "mass_flux_inlet": j_in, "mass_flux_outlet": j_out,
            "residual_history": [float(h) for h in state.history]}
    dump_json(meta, gray / "meta.json")
    return ["steady"]


def _nozzle_data(cfg, out) -> SteadyEosData:
    spline, bc, ncfg, _ = nozzle_setup(cfg)
    _require([Path(out) / "gray" / "steady.csv"])
    gray = read_steady_csv(Path(out) / "gray" / "steady.csv")
    rho, U = gray_state_cloud(gray)
    nb = cfg["nozzle"]["basis"]
    skeleton = build_param_eos(rho, U, nb["N_rho"], nb["N_U"])
    return SteadyEosData(gray, skeleton, spline, bc, ncfg)


def _nozzle_train_into(cfg, out, dest: Path, lam_rel=None):
    data = _nozzle_data(cfg, out)
    wpath = Path(out) / "twin" / "weights.json"
    if wpath.exists() and dest != Path(out) / "twin":
        data.weights = WeightSet(**json.loads(wpath.read_text()))
    else:
        data.weights = calibrate_weights(data, cfg["nozzle"]["calibration"]["n_random"], cfg["seed"])
    dump_json(data.weights.to_dict(), dest / "weights.json")
    model_path = dest / "eos.model.json"
    init = ParamEos.load(model_path).params if cfg["training"]["resume"] and model_path.exists() else None
    res = train(_training_problem(cfg, "steady-eos", init, lam_rel), data)
    res.model.save(model_path)
    res.write_trace(dest / "trace.csv")
    rho, U = gray_state_cloud(data.gray)
    dump_json(StateHull.from_cloud(rho, U).to_dict(), dest / "hull.json")
    summary = _train_summary(res)
    dump_json(summary, dest / "train.json")
    return summary, res


def nozzle_train(cfg: dict, out: Path):
    summary, _ = _nozzle_train_into(cfg, out, Path(out) / "twin")
    return [("eos", summary, None)]


def nozzle_gradient(cfg: dict, out: Path, truth_mode: bool = False):
    out = Path(out)
    _require([out / "twin" / "eos.model.json", out / "gray" / "steady.csv"])
    data = _nozzle_data(cfg, out)
    model = ParamEos.load(out / "twin" / "eos.model.json")
    try:
        state = data.solve_twin(model)
    except Exception as exc:
        raise NumericalFailure(f"twin steady solve failed: {exc}") from exc
    spline, bc, ncfg, truth = data.spline, data.bc, data.config, nozzle_setup(cfg)[3]
    gt = adjoint_gradient_wrt_geometry(state, model, spline, bc)
    ref = None
    if truth_mode:
        tstate = solve_steady(truth, spline, bc, ncfg)
        ref = adjoint_gradient_wrt_geometry(tstate, truth, spline, bc)
    rep = GradientReport(gt.as_vector(), None if ref is None else ref.as_vector(),
                         {"case": "nozzle-eos", "wrt": "control points (A then x)",
                          "points": [int(p) for p in gt.points]})
    gdir = out / "gradients"
    rep.write(gdir / "geometry.csv")
    with open(gdir / "geometry_table.csv", "w") as fh:
        fh.write("point,x,A,dJdx_twin,dJdA_twin,dJdx_truth,dJdA_truth\n")
        for k, p in enumerate(gt.points):
            tx = "" if ref is None else repr(float(ref.grad_x[k]))
            ta = "" if ref is None else repr(float(ref.grad_A[k]))
            fh.write(f"{int(p)},{float(spline.x[p])!r},{float(spline.A[p])!r},"
                     f"{float(gt.grad_x[k])!r},{float(gt.grad_A[k])!r},{tx},{ta}\n")
    summary = rep.summary()
    summary["mass_flux_twin"] = gt.value
    if ref is not None:
        summary["mass_flux_truth"] = ref.value
        summary["rel_l2_err_A"] = _rel(gt.grad_A, ref.grad_A)
        summary["rel_l2_err_x"] = _rel(gt.grad_x, ref.grad_x)
    dump_json(summary, gdir / "geometry.json")
    return [("geometry", summary)]


def _rel(a, b):
    d = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / d) if d > 0 else float(np.linalg.norm(a - b))


def nozzle_expected_files(out: Path):
    out = Path(out)
    return [out / "gray" / "steady.csv", out / "gray" / "meta.json", out / "twin" / "eos.model.json",
            out / "twin" / "weights.json", out / "gradients" / "geometry.json"]


def nozzle_report(cfg: dict, out: Path) -> dict:
    out = Path(out)
    _require(nozzle_expected_files(out))
    data = _nozzle_data(cfg, out)
    truth = nozzle_setup(cfg)[3]
    model = ParamEos.load(out / "twin" / "eos.model.json")
    rho, U = gray_state_cloud(data.gray)
    rec = eos_recovery_report(model, truth, rho, U)
    hull = StateHull.from_cloud(rho, U)
    rdir = out / "report"
    (ri, ui), (ro, uo) = eos_sample_sets(hull, rho, U)
    with open(rdir / "eos_lattice.csv", "w") as fh:
        fh.write("rho,U,p_twin,p_truth,in_hull\n")
        for r, u, inside in [(a, b, 1) for a, b in zip(ri, ui)] + [(a, b, 0) for a, b in zip(ro, uo)]:
            fh.write(f"{float(r)!r},{float(u)!r},{float(model.pressure(r, u))!r},"
                     f"{float(truth.pressure(r, u))!r},{inside}\n")
    state = data.solve_twin(model)
    weights = WeightSet(**json.loads((out / "twin" / "weights.json").read_text()))
    norms, _ = steady_sq_norms(state.Q, data.gray, state.grid.cell_widths)
    with open(rdir / "mismatch.csv", "w") as fh:
        fh.write("x,rho_gray,rho_twin,u_gray,u_twin,E_gray,E_twin\n")
        for i, x in enumerate(state.grid.cell_centers):
            vals = [x, data.gray["rho"][i], state.rho[i], data.gray["u"][i], state.u[i],
                    data.gray["E"][i], state.E[i]]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")
    report = {
        "case": "nozzle-eos",
        "truth": truth.to_dict(),
        "eos": {k: rec[k] for k in ("in_hull_rel_l2", "out_hull_rel_l2", "n_in", "n_out")}
               | {"lattice_csv": "eos_lattice.csv", "hull": hull.to_dict()},
        "mismatch": {"weighted": float(np.dot(weights.as_tuple(), norms)),
                     "sq_norms": {"rho": float(norms[0]), "u": float(norms[1]), "E": float(norms[2])},
                     "csv": "mismatch.csv"},
        "gradient": json.loads((out / "gradients" / "geometry.json").read_text()),
    }
    dump_json(report, rdir / "report.json")
    return report


# -- lambda sweep ----------------------------------------------------------------------

def _sweep_one(args):
    cfg, out, k, lam_rel = args
    dest = Path(out) / "twin" / "sweep" / f"lambda_{k}"
    dest.mkdir(parents=True, exist_ok=True)
    if cfg["case"] == "porous1d":
        names = _ic_names(cfg)
        target = cfg["sweep"].get("initial_condition", names[0])
        if target not in names:
            raise ValueError(f"sweep initial condition {target!r} is not configured")
        _, summary, coeffs = _porous_train_one((cfg, out, names.index(target), lam_rel, str(dest)))
        reg = np.asarray(coeffs)
    else:
        summary, res = _nozzle_train_into(cfg, out, dest, lam_rel)
        reg = res.coeffs[:-1]
    return {"lambda_rel": lam_rel, "lambda": summary["lambda"], "status": summary["status"],
            "n_iter": summary["n_iter"], "coeff_sum": float(np.sum(reg)),
            "n_coeffs": int(reg.size), "n_below_1e-8": int(np.sum(reg < 1e-8))}


def run_sweep(cfg: dict, out: Path, jobs: int = 1) -> dict:
    out = Path(out)
    if cfg["case"] == "porous1d":
        _require([out / "gray" / f"{n}.csv" for n in _ic_names(cfg)])
    else:
        _require([out / "gray" / "steady.csv"])
    lams = sorted(cfg["sweep"]["lambda_rel"])
    rows = _map(_sweep_one, [(cfg, str(out), k, lam) for k, lam in enumerate(lams)], jobs)
    sums = [r["coeff_sum"] for r in rows]
    result = {"case": cfg["case"], "runs": rows,
              "coeff_sum_non_increasing": bool(all(b <= a for a, b in zip(sums, sums[1:])))}
    dump_json(result, out / "report" / "sweep.json")
    return result
