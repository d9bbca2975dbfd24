"""Command-line front end.

Subcommands: `norm` (peak-gain / H-infinity certificates of bundled or
user systems), `synth` (mixed-norm synthesis programs and the best-sector
sweep), and `simulate` (nonlinear loop simulation and BIBO probing).
Scenario files are validated JSON artifacts; every command is deterministic
given --seed.

Exit codes: 0 success / certificate PASS; 2 unstable system on a norm
query; 3 stabilization infeasible; 4 finished without a PASS certificate;
5 simulation divergence; 1 usage or scenario errors.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .io import ScenarioError, load_scenario, write_result
from .ltisys import ChannelSelector, channel, feedback_lft, sector_shift
from .norms import UnstableSystemError, chain_bounds, hinf_norm, peak_gain_norm
from .sim import LureLoop, bibo_probe, simulate, standard_input_bank
from .synth import MixedProgramSpec, certify, solve_mixed, sweep_best_sector

__all__ = ["main"]


def _parser():
    p = argparse.ArgumentParser(
        prog="luresynth",
        description="Mixed peak-gain/H-infinity synthesis and validation "
                    "for Lur'e systems.")
    p.add_argument("--jobs", type=int, default=1,
                   help="max concurrent evaluations (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    n = sub.add_parser("norm", help="norm certificates for scenario systems")
    n.add_argument("scenario")
    n.add_argument("--kind", choices=["hinf", "pkgn", "both", "chain"],
                   default="both")
    n.add_argument("--tol", type=float, default=None)
    n.add_argument("--system", default=None,
                   help="restrict to one labelled system")
    n.add_argument("--variant", default=None)

    s = sub.add_parser("synth", help="run a synthesis program")
    s.add_argument("scenario")
    s.add_argument("--program", choices=["h2h", "pk-h", "sweep"],
                   default="pk-h")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int, default=100)
    s.add_argument("--restarts", type=int, default=5)
    s.add_argument("--variant", default=None)
    s.add_argument("--out", default=None, help="result file path")

    m = sub.add_parser("simulate", help="simulate the nonlinear loop")
    m.add_argument("scenario")
    m.add_argument("--x0", default=None,
                   help="comma-separated initial state override")
    m.add_argument("--tend", type=float, default=None)
    m.add_argument("--probe", action="store_true",
                   help="run the bounded-input BIBO probe bank")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--variant", default=None)
    m.add_argument("--out", default=None, help="trajectory CSV path")
    return p


# ---------------------------------------------------------------------------
# norm
# ---------------------------------------------------------------------------

def _norm_targets(scn, which):
    systems = dict(scn.systems)
    if not systems and scn.plant is not None:
        systems["plant"] = scn.plant.sys
    if which is not None:
        if which not in systems:
            raise ScenarioError(f"no system labelled {which!r}; "
                                f"have {sorted(systems)}")
        systems = {which: systems[which]}
    return systems


def _kinds_for(label, kind):
    """Systems labelled after a norm kind answer only that kind."""
    if kind == "chain":
        return ["chain"]
    wanted = ["pkgn", "hinf"] if kind == "both" else [kind]
    if label in ("pkgn", "hinf"):
        return [k for k in wanted if k == label]
    return wanted


def cmd_norm(args):
    scn = load_scenario(args.scenario, variant=args.variant)
    targets = _norm_targets(scn, args.system)
    for label in sorted(targets):
        G = targets[label]
        for k in _kinds_for(label, args.kind):
            try:
                if k == "pkgn":
                    cert = peak_gain_norm(G, tol=args.tol or 1e-4)
                    print(f"{scn.name}[{label}] pk_gn = {cert.value:.6g} "
                          f"(+/-{cert.abs_error_bound:.1e})")
                elif k == "hinf":
                    cert = hinf_norm(G, tol=args.tol or 1e-6)
                    print(f"{scn.name}[{label}] hinf = {cert.value:.6g} "
                          f"(+/-{cert.abs_error_bound:.1e})")
                else:
                    lo, hi = chain_bounds(G, tol=args.tol or 1e-4)
                    print(f"{scn.name}[{label}] chain: "
                          f"{lo:.6g} <= pk_gn <= {hi:.6g}")
            except UnstableSystemError as e:
                print(f"{scn.name}[{label}] unstable: {e}")
                return 2
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _sampler_from_ranges(ranges):
    ranges = [tuple(map(float, r)) for r in ranges]

    def sample(rng):
        out = []
        for lo, hi in ranges:
            if lo > 0 and hi / lo >= 50:
                out.append(10 ** rng.uniform(np.log10(lo), np.log10(hi)))
            else:
                out.append(rng.uniform(lo, hi))
        return np.array(out)

    return sample


def _channel_tuple(plant, chan):
    sel = ChannelSelector(chan["from"], chan["to"])
    out = [plant, sel, chan["kind"]]
    if "bound" in chan:
        out.append(chan["bound"])
    return tuple(out)


def _run_program(scn, args, center, objective_kind, threshold,
                 with_constraint):
    prog = scn.program
    plant = scn.plant
    if center is not None:
        plant = sector_shift(plant, center)
    obj = dict(prog["objective"], kind=objective_kind)
    constraint = None
    if with_constraint and "constraint" in prog:
        constraint = _channel_tuple(plant, prog["constraint"])
    spec = MixedProgramSpec(
        objective=_channel_tuple(plant, obj)[:3],
        constraint=constraint,
        tau=float(prog.get("tau", 0.1)))
    sampler = (_sampler_from_ranges(scn.init_ranges)
               if scn.init_ranges is not None else None)
    res = solve_mixed(spec, scn.structure, budget=args.budget,
                      restarts=args.restarts, seed=args.seed,
                      init_sampler=sampler)
    if not res.all_hurwitz:
        print(f"{scn.name}: stabilization infeasible "
              f"(no Hurwitz point found, best objective "
              f"{res.objective_value:.6g})")
        return res, None, 3

    # re-certify from scratch at full tolerance
    sel = ChannelSelector(obj["from"], obj["to"])
    T = channel(feedback_lft(plant, res.K_opt), sel)
    if objective_kind == "pk_gn":
        cert_norm = peak_gain_norm(T, tol=1e-4)
        kind = "BIBO"
    else:
        cert_norm = hinf_norm(T, tol=1e-8)
        kind = "L2"
    cert = certify(cert_norm.value, threshold=threshold,
                   bound=cert_norm.abs_error_bound, kind=kind,
                   constraint_value=res.constraint_value,
                   constraint_bound=res.constraint_bound,
                   hurwitz=res.all_hurwitz)
    print(cert.summary())
    return res, cert, 0 if cert.passed else 4


def cmd_synth(args):
    scn = load_scenario(args.scenario, variant=args.variant)
    prog = scn.program

    if args.program == "sweep":
        sw = scn.sweep
        if not sw:
            raise ScenarioError("scenario has no sweep block")
        has_controller = any(n == "u" for n, _ in scn.plant.input_groups) \
            and scn.structure is not None
        cs = scn.structure if has_controller else None
        sel = ChannelSelector(sw["from"], sw["to"])
        kw = dict(sel=sel, seed=args.seed,
                  p_group=sw.get("p_group", "p"),
                  q_group=sw.get("q_group", "q"))
        grid = [float(c) for c in sw["c_grid"]]
        if args.jobs > 1 and cs is None:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                chunks = pool.map(
                    lambda c: sweep_best_sector(scn.plant, cs, [c],
                                                sw["q_inf"], **kw), grid)
            rows = [row for chunk in chunks for row in chunk]
        else:
            rows = sweep_best_sector(scn.plant, cs, grid, sw["q_inf"], **kw)
        print(f"{'c':>8} {'r(c)':>10} {'a':>10} {'b':>10} works")
        for row in rows:
            if row.r is None:
                print(f"{row.c:8.4f} {'--':>10} {'--':>10} {'--':>10} "
                      f"no ({row.error})")
            else:
                print(f"{row.c:8.4f} {row.r:10.4f} {row.a:10.4f} "
                      f"{row.b:10.4f} {'yes' if row.works else 'no'}")
        if args.out:
            write_result(args.out, {"name": scn.name, "sweep": [
                {"c": r.c, "r": r.r, "a": r.a, "b": r.b,
                 "works": bool(r.works), "error": r.error} for r in rows]})
        return 0

    if scn.structure is None or scn.plant is None:
        raise ScenarioError("synthesis needs a plant and a controller "
                            "structure in the scenario")
    if args.program == "h2h":
        h2h = prog.get("h2h")
        if h2h is None:
            raise ScenarioError("scenario has no h2h program block")
        res, cert, code = _run_program(scn, args, h2h["center"], "hinf",
                                       float(h2h["threshold"]),
                                       with_constraint=False)
    else:
        res, cert, code = _run_program(
            scn, args, prog.get("center"),
            prog["objective"]["kind"],
            float(prog.get("threshold", np.inf)),
            with_constraint=True)

    if args.out:
        payload = {
            "name": scn.name,
            "program": args.program,
            "seed": args.seed,
            "x_opt": res.x_opt,
            "controller": res.K_opt.to_dict(),
            "objective_value": res.objective_value,
            "constraint_value": res.constraint_value,
            "constraint_bound": res.constraint_bound,
            "feasible": res.feasible,
            "all_hurwitz": res.all_hurwitz,
            "trace": list(res.trace),
            "certificate": None if cert is None else {
                "kind": cert.kind, "value": cert.value,
                "bound": cert.bound, "threshold": cert.threshold,
                "margin": cert.margin, "passed": cert.passed,
                "constraint_slack": cert.constraint_slack,
            },
        }
        write_result(args.out, payload)
    return code


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    scn = load_scenario(args.scenario, variant=args.variant)
    if scn.plant is None:
        raise ScenarioError("scenario has no plant to simulate")
    sim = scn.simulation
    has_u = any(n == "u" for n, _ in scn.plant.input_groups)
    loop = LureLoop(scn.plant, scn.phi,
                    controller=scn.controller if has_u else None)
    x0 = sim.get("x0")
    if args.x0 is not None:
        x0 = [float(v) for v in args.x0.split(",")]
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        n = loop.state_dim()
        if len(x0) < n:  # zero-pad controller states
            x0 = np.concatenate([x0, np.zeros(n - len(x0))])
    t_end = args.tend if args.tend is not None else sim.get("t_end", 100.0)
    tol = sim.get("tol", 1e-8)

    if args.probe:
        dim = scn.plant.input_size("w")
        bank = standard_input_bank(dim, amplitude=sim.get("probe_amplitude",
                                                          1.0),
                                   seed=args.seed)
        report = bibo_probe(loop, input_bank=bank,
                            T_end=sim.get("probe_t_end", t_end),
                            tol=tol, x0=x0)
        for name, win, out, div in report.entries:
            status = "DIVERGED" if div else f"sup {out:.6g}"
            print(f"{scn.name} probe {name:<12} |w|={win:.3g} {status}")
        print(f"{scn.name} probe envelope: k1={report.k1:.6g} "
              f"k2={report.k2:.6g} divergence={report.any_divergence}")
        return 5 if report.any_divergence else 0

    traj = simulate(loop, t_end, tol=tol, x0=x0)
    if args.out:
        header = ["t"] + [f"x{i+1}" for i in range(traj.states.shape[0])] \
            + [f"q{i+1}" for i in range(traj.q.shape[0])]
        data = np.column_stack([traj.times, traj.states.T, traj.q.T])
        np.savetxt(args.out, data, delimiter=",",
                   header=",".join(header), comments="")
    if traj.diverged:
        print(f"{scn.name}: DIVERGED (|x| exceeded limit, "
              f"t = {traj.times[-1]:.4g})")
        return 5
    tail = traj.states[:, traj.times >= 0.9 * t_end]
    settled = tail.size and float(np.max(np.std(tail, axis=1))) < 1e-6
    if settled:
        xf = ", ".join(f"{v:.4g}" for v in traj.final_state())
        print(f"{scn.name}: converged, final state ({xf})")
    else:
        print(f"{scn.name}: bounded, no equilibrium reached "
              f"(sup |x| = {traj.sup_norm:.6g})")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "norm":
            return cmd_norm(args)
        if args.command == "synth":
            return cmd_synth(args)
        return cmd_simulate(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
