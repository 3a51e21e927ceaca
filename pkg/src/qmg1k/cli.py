"""Command-line experiment runner.

Subcommands: demo, grid, sensitivity, census, des. Every command is seeded;
identical arguments give byte-identical output.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytic, circuit, metrics, qcore
from .des import DesConfig, replicate_seed, run_des
from .dist import Exponential, from_config
from .exceptions import InvalidParameterError

EXIT_CONFIG = 2
EXIT_IO = 3

DEFAULT_DISTS = (
    {"type": "normal", "mean": 1.0, "variance": 0.05},
    {"type": "exponential", "rate": 1.0},
    {"type": "uniform", "lo": 0.5, "hi": 1.5},
    {"type": "phase_type"},
)


class ConfigError(Exception):
    pass


@dataclass
class ScenarioGrid:
    K_list: list = field(default_factory=lambda: [2 ** i - 1 for i in range(2, 13)])
    lambda_list: list = field(default_factory=lambda: [0.1, 0.5, 0.95])
    dists: list = field(default_factory=lambda: [dict(d) for d in DEFAULT_DISTS])
    shots: int = 10_000
    des_events: int = 100_000
    trials: int = 5
    seed: int = 0
    T: int = 100
    dt: float | None = None
    engine: str = "auto"
    schedule: str = "optimal"
    rejection: bool = True
    workers: int = 1

    def validate(self):
        if not self.K_list or not self.lambda_list or not self.dists:
            raise ConfigError("K_list, lambda_list and dists must be nonempty")
        if self.trials < 1 or self.shots < 1:
            raise ConfigError("trials and shots must be >= 1")
        try:
            for lam in self.lambda_list:
                for d in self.dists:
                    from_config(d, lam=lam)
            for K in self.K_list:
                circuit.QueueParams(lam=self.lambda_list[0], service=Exponential(), K=K, T=self.T,
                                    dt=self.dt, shots=self.shots, engine=self.engine)
            DesConfig(self.lambda_list[0], Exponential(), self.K_list[0], self.des_events)
        except InvalidParameterError as exc:
            raise ConfigError(str(exc)) from exc


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(rows, header, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) for h in header])
    _write_text(buf.getvalue(), path)


def _write_text(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n"


def _dist_label(record):
    return record["type"] if isinstance(record, dict) else record.kind


# -- demo ---------------------------------------------------------------------

DEMO_LAMBDA, DEMO_DT, DEMO_K = 0.25, 0.3, 3


def _ket(index, Q, n_anc):
    q = index & ((1 << Q) - 1)
    anc = index >> Q
    anc_bits = "".join(str((anc >> i) & 1) for i in range(n_anc))
    return f"|{q:0{Q}b};{anc_bits}>"


def _nonzero(state, Q, n_anc, tol=1e-12):
    out = []
    for i in np.nonzero(np.abs(state.amplitudes) > tol)[0]:
        out.append({"ket": _ket(int(i), Q, n_anc), "index": int(i), "amplitude": float(state.amplitudes[i].real)})
    return out


def demo_report():
    """The four-state worked example: one slice from the steady-state amplitudes."""
    p_c = analytic.mm1k_steady_state(DEMO_LAMBDA, DEMO_K)
    params = circuit.QueueParams(lam=DEMO_LAMBDA, service=Exponential(1.0), K=DEMO_K, dt=DEMO_DT, T=1,
                                 engine="exact", initial=tuple(p_c))
    p_lam, p_mu = circuit.slice_probabilities(params)
    th_arr, th_srv = qcore.theta_for_prob(p_lam), qcore.theta_for_prob(p_mu)
    trace = []
    p_one = circuit.exact_slice(p_c, params, trace=trace)
    stages = dict(trace)
    Q = params.Q
    fixed = circuit.run_slices_traced(params, T=2000)
    half, l1 = metrics.tv_distance(p_one, p_c)
    half_fp, l1_fp = metrics.tv_distance(fixed, p_c)
    return {
        "lambda": DEMO_LAMBDA, "mu": 1.0, "dt": DEMO_DT, "K": DEMO_K,
        "v0": [float(x) for x in np.sqrt(p_c)],
        "p_lambda": p_lam, "p_mu": p_mu,
        "theta_arr": th_arr, "theta_srv": th_srv,
        "ry_arr": qcore.ry_matrix(th_arr).tolist(),
        "ry_srv": qcore.ry_matrix(th_srv).tolist(),
        "ancilla_order": "a_a a_s c_inc c_dec",
        "after_arrival": _nonzero(stages["arrival"], Q, 4),
        "after_inc_dec": _nonzero(stages["inc_dec"], Q, 4),
        "P_c": [float(x) for x in p_c],
        "P_q_one_slice": [float(x) for x in p_one],
        "tv_halved_one_slice": half, "l1_one_slice": l1,
        "P_q_fixed_point": [float(x) for x in fixed],
        "tv_halved_fixed_point": half_fp, "l1_fixed_point": l1_fp,
        "fidelity_one_slice": metrics.fidelity(p_one, p_c),
    }


def _print_demo(rep, out):
    w = out.write
    w("M/M/1/3 demonstration, rho = 0.25, dt = 0.3\n")
    w("v0 = [" + ", ".join(f"{x:.4f}" for x in rep["v0"]) + "]\n")
    w(f"theta_arr = {rep['theta_arr']:.4f}   theta_srv = {rep['theta_srv']:.4f}\n")
    for name in ("ry_arr", "ry_srv"):
        m = rep[name]
        w(f"{name} = [[{m[0][0]:.4f}, {m[0][1]:.4f}], [{m[1][0]:.4f}, {m[1][1]:.4f}]]\n")
    w(f"amplitudes after the arrival rotation ({rep['ancilla_order']}):\n")
    for a in rep["after_arrival"]:
        w(f"  {a['amplitude']:.4f} {a['ket']}\n")
    w("amplitudes after INC/DEC:\n")
    for a in rep["after_inc_dec"]:
        w(f"  {a['amplitude']:.4f} {a['ket']}\n")
    w(" n   P_q(1 slice)   P_c      |diff|\n")
    for n, (a, b) in enumerate(zip(rep["P_q_one_slice"], rep["P_c"])):
        w(f" {n}   {a:.4f}         {b:.4f}   {abs(a - b):.4f}\n")
    w(f"one slice: TV (halved) = {rep['tv_halved_one_slice']:.4f}, L1 = {rep['l1_one_slice']:.4f}\n")
    w(f"slice-chain fixed point: TV (halved) = {rep['tv_halved_fixed_point']:.4f}, "
      f"L1 = {rep['l1_fixed_point']:.4f}\n")


def cmd_demo(args):
    rep = demo_report()
    if args.out:
        _print_demo(rep, sys.stdout)
        _write_text(_json(rep), args.out)
    else:
        _print_demo(rep, sys.stdout)
        sys.stdout.write(_json(rep))
    return 0


# -- grid ---------------------------------------------------------------------

GRID_HEADER = [
    "scenario_id", "K", "Q", "lambda", "dist", "trial", "engine", "F", "JSD", "tv_halved", "l1_gap",
    "L_quantum", "L_des", "W_quantum", "W_des", "rel_err_L", "rel_err_W", "p_block_quantum",
    "p_block_des", "R_used", "p_succ", "acceptance_rate", "bound_dkw", "bound_main",
    "bound_correctness", "bound_expected", "bound_discretization", "bound_discretization_proof",
    "bound_rejection_decay", "seed",
]


def row_seed(base, cell_index, trial):
    return int(np.random.SeedSequence([base, cell_index, trial]).generate_state(1, dtype=np.uint64)[0] >> 1)


def run_cell(cell):
    """One grid row; `cell` is a plain dict so it can cross process boundaries."""
    lam, K, record = cell["lambda"], cell["K"], cell["dist"]
    service = from_config(record, lam=lam)
    seed = cell["seed"]
    params = circuit.QueueParams(
        lam=lam, service=service, K=K, T=cell["T"], dt=cell["dt"], shots=cell["shots"],
        engine=cell["engine"], grover_schedule=cell["schedule"], rejection=cell["rejection"], seed=seed,
    )
    res = circuit.qmg1_run(params)
    des = run_des(DesConfig(lam, service, K, horizon_events=cell["des_events"], seed=replicate_seed(seed, 1)))
    rep = metrics.compare(res.p_q, des.p_c, res.L_hat, des.L, res.W_hat, des.W_sojourn)
    bounds = analytic.all_bounds(N=params.shots, delta=0.05, K=K, lam=lam, dist=service, dt=params.step,
                                 m_size=len(res.marked), R=res.R_used)
    return {
        "scenario_id": cell["scenario_id"], "K": K, "Q": params.Q, "lambda": lam,
        "dist": _dist_label(record), "trial": cell["trial"], "engine": res.engine,
        "F": rep.fidelity, "JSD": rep.jsd, "tv_halved": rep.tv_halved, "l1_gap": rep.l1_gap,
        "L_quantum": res.L_hat, "L_des": des.L, "W_quantum": res.W_hat, "W_des": des.W_sojourn,
        "rel_err_L": rep.rel_err_L, "rel_err_W": rep.rel_err_W,
        "p_block_quantum": res.p_block_hat, "p_block_des": des.p_block,
        "R_used": res.R_used, "p_succ": res.p_succ_measured, "acceptance_rate": res.acceptance_rate,
        "bound_dkw": bounds.statistical_tv_dkw, "bound_main": bounds.statistical_tv_main,
        "bound_correctness": bounds.statistical_tv_correctness, "bound_expected": bounds.expected_tv,
        "bound_discretization": bounds.discretization,
        "bound_discretization_proof": bounds.discretization_proof,
        "bound_rejection_decay": bounds.rejection_decay, "seed": seed,
    }


def grid_cells(grid):
    cells = []
    idx = 0
    for K in grid.K_list:
        for lam in grid.lambda_list:
            for record in grid.dists:
                sid = f"K{K}-lam{lam}-{_dist_label(record)}"
                for trial in range(grid.trials):
                    cells.append({
                        "scenario_id": sid, "K": int(K), "lambda": float(lam), "dist": record,
                        "trial": trial, "seed": row_seed(grid.seed, idx, trial), "T": grid.T,
                        "dt": grid.dt, "shots": grid.shots, "des_events": grid.des_events,
                        "engine": grid.engine, "schedule": grid.schedule, "rejection": grid.rejection,
                    })
                idx += 1
    return cells


def run_grid(grid):
    cells = grid_cells(grid)
    if grid.workers > 1:
        with ProcessPoolExecutor(max_workers=grid.workers) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(c) for c in cells]


def cmd_grid(args):
    grid = _load_grid(args)
    grid.validate()
    rows = run_grid(grid)
    write_csv(rows, GRID_HEADER, args.out)
    return 0


# -- sensitivity --------------------------------------------------------------

SENS_HEADER = ["lambda", "trial", "dist", "K", "F", "F_R", "log10_F_R", "JSD", "log10_JSD", "seed"]


def sensitivity_rows(dist_record, K, trials, seed, shots=10_000, des_events=100_000, T=100, dt=None,
                     engine="auto", schedule="optimal", rejection=True, workers=1):
    lambdas = [round(0.1 * i, 1) for i in range(1, 10)]
    cells = []
    for li, lam in enumerate(lambdas):
        for trial in range(trials):
            cells.append({
                "scenario_id": f"sens-lam{lam}", "K": K, "lambda": lam, "dist": dist_record, "trial": trial,
                "seed": row_seed(seed, li, trial), "T": T, "dt": dt, "shots": shots,
                "des_events": des_events, "engine": engine, "schedule": schedule, "rejection": rejection,
            })
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            full = list(pool.map(run_cell, cells))
    else:
        full = [run_cell(c) for c in cells]
    rows = []
    for r in full:
        f_r = metrics.fidelity_residual(r["F"])
        rows.append({
            "lambda": r["lambda"], "trial": r["trial"], "dist": r["dist"], "K": r["K"], "F": r["F"],
            "F_R": f_r, "log10_F_R": metrics.log_offset(f_r), "JSD": r["JSD"],
            "log10_JSD": metrics.log_offset(r["JSD"]), "seed": r["seed"],
        })
    return rows


def cmd_sensitivity(args):
    cfg = _load_json(args.config) if args.config else {}
    record = _dist_arg(args.dist) if args.dist else cfg.get("dist", {"type": "exponential", "rate": 1.0})
    K = _pick(args.K, cfg, "K", 15)
    trials = _pick(args.trials, cfg, "trials", 100)
    seed = _pick(args.seed, cfg, "seed", 0)
    rows = sensitivity_rows(
        record, int(K), int(trials), int(seed),
        shots=_pick(args.shots, cfg, "shots", 10_000),
        des_events=_pick(args.des_events, cfg, "des_events", 100_000),
        T=_pick(args.T, cfg, "T", 100), dt=_pick(args.dt, cfg, "dt", None),
        engine=_pick(args.engine, cfg, "engine", "auto"),
        schedule=_pick(_schedule(args.schedule), cfg, "schedule", "optimal"),
        rejection=_onoff(args.rejection, cfg.get("rejection", True)),
        workers=args.workers,
    )
    write_csv(rows, SENS_HEADER, args.out)
    return 0


# -- census / des -------------------------------------------------------------

def _scenario_params(args, cfg):
    lam = _pick(args.lam, cfg, "lambda", DEMO_LAMBDA)
    record = _dist_arg(args.dist) if args.dist else cfg.get("dist", {"type": "exponential", "rate": 1.0})
    try:
        return circuit.QueueParams(
            lam=float(lam), service=from_config(record, lam=lam), K=int(_pick(args.K, cfg, "K", DEMO_K)),
            T=int(_pick(args.T, cfg, "T", 100)), dt=_pick(args.dt, cfg, "dt", None),
            shots=int(_pick(args.shots, cfg, "shots", 10_000)),
            engine=_pick(args.engine, cfg, "engine", "traced"),
            grover_schedule=_pick(_schedule(args.schedule), cfg, "schedule", "optimal"),
            rejection=_onoff(args.rejection, cfg.get("rejection", True)),
            seed=int(_pick(args.seed, cfg, "seed", 0)),
        )
    except (InvalidParameterError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def census_report(params):
    counts = circuit.gate_census(params)
    marked = circuit.marked_set(params)
    R = circuit.grover_iterations(params.K, len(marked), params.grover_schedule)
    return {
        "K": params.K, "Q": params.Q, "T": params.T, "cap_mode": params.cap_mode,
        "service_mode": params.service_mode, "R_used": R,
        "counts": dict(sorted(counts.items())), "by_module": circuit.census_by_module(counts),
    }


def cmd_census(args):
    cfg = _load_json(args.config) if args.config else {}
    params = _scenario_params(args, cfg)
    _write_text(_json(census_report(params)), args.out)
    return 0


def cmd_des(args):
    cfg = _load_json(args.config) if args.config else {}
    lam = _pick(args.lam, cfg, "lambda", DEMO_LAMBDA)
    record = _dist_arg(args.dist) if args.dist else cfg.get("dist", {"type": "exponential", "rate": 1.0})
    try:
        config = DesConfig(float(lam), from_config(record, lam=lam), int(_pick(args.K, cfg, "K", DEMO_K)),
                           horizon_events=int(_pick(args.des_events, cfg, "des_events", 100_000)),
                           seed=int(_pick(args.seed, cfg, "seed", 0)))
    except (InvalidParameterError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    res = run_des(config)
    out = res.to_dict()
    if isinstance(config.service, Exponential) and config.lam > 0:
        exact = analytic.mm1k_steady_state(config.lam / config.service.rate, config.K)
        out["tv_vs_analytic"] = metrics.tv_distance(res.p_c, exact)[0]
    _write_text(_json(out), args.out)
    return 0


# -- argument plumbing --------------------------------------------------------

def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _pick(flag, cfg, key, default):
    """Command-line flag, then config entry, then default."""
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _dist_arg(text):
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid --dist JSON: {exc}") from exc
    return {"type": text}


def _onoff(value, default):
    if value is None:
        return bool(default)
    return value == "on"


def _schedule(value):
    return {"paper": "paper_formula", "optimal": "optimal", None: None}[value]


def _load_grid(args):
    cfg = _load_json(args.config) if args.config else {}
    known = set(ScenarioGrid.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown grid config keys: {sorted(unknown)}")
    try:
        grid = ScenarioGrid(**cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    grid.seed = args.seed
    overrides = {
        "shots": args.shots, "engine": args.engine, "schedule": _schedule(args.schedule),
        "trials": args.trials, "T": args.T, "dt": args.dt, "des_events": args.des_events,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(grid, key, value)
    if args.rejection is not None:
        grid.rejection = args.rejection == "on"
    if args.K is not None:
        grid.K_list = [args.K]
    if args.lam is not None:
        grid.lambda_list = [args.lam]
    if args.dist:
        grid.dists = [_dist_arg(args.dist)]
    grid.workers = args.workers
    return grid


def build_parser():
    parser = argparse.ArgumentParser(prog="qmg1k", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=False):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--seed", type=int, required=seed_required, metavar="U64")
        p.add_argument("--shots", type=int, metavar="N")
        p.add_argument("--engine", choices=["exact", "traced", "auto"])
        p.add_argument("--schedule", choices=["paper", "optimal"])
        p.add_argument("--rejection", choices=["on", "off"])
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--K", type=int)
        p.add_argument("--dist", help="distribution name or JSON record")
        p.add_argument("--T", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--trials", type=int)
        p.add_argument("--des-events", dest="des_events", type=int)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("demo", help="four-state worked example")
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_demo)
    p = sub.add_parser("grid", help="scenario grid to CSV")
    common(p, seed_required=True)
    p.set_defaults(func=cmd_grid)
    p = sub.add_parser("sensitivity", help="arrival-rate sweep to CSV")
    common(p)
    p.set_defaults(func=cmd_sensitivity)
    p = sub.add_parser("census", help="gate counts as JSON")
    common(p)
    p.set_defaults(func=cmd_census)
    p = sub.add_parser("des", help="discrete-event baseline as JSON")
    common(p)
    p.set_defaults(func=cmd_des)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
