"""Nonlinear closed-loop simulation of Lur'e interconnections.

Validation layer: adaptive Runge-Kutta integration of the loop
dx = A_cl x + B_p phi(C_q x) + B_w w, equilibrium search with stability
verdicts, linearization about equilibria, and empirical BIBO probing with
bounded input banks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve
from scipy.stats import qmc

from .ltisys import PartitionedPlant, StateSpace, feedback_lft, spectral_abscissa
from .nonlin import Nonlinearity

__all__ = [
    "LureLoop",
    "Trajectory",
    "Equilibrium",
    "ProbeReport",
    "SimulationError",
    "simulate",
    "find_equilibria",
    "linearize",
    "bibo_probe",
    "standard_input_bank",
]

DIVERGENCE_LIMIT = 1e9
MAX_EXPORT_POINTS = 100_000


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LureLoop:
    """Lur'e interconnection: plant with p/q loop closed by phi, optional u=Ky.

    plant groups: input "p" (nonlinearity output) and optionally "u", "w";
    output "q" (nonlinearity input) and optionally "y", "z".
    """

    plant: PartitionedPlant
    phi: Nonlinearity | None = None
    controller: StateSpace | None = None
    w: object = None  # callable t -> disturbance vector on group "w"
    x0: np.ndarray | None = None
    p_group: str = "p"
    q_group: str = "q"
    u_group: str = "u"
    y_group: str = "y"
    w_group: str = "w"

    def closed(self) -> PartitionedPlant:
        """Plant with the controller loop (u = K y) closed, if present."""
        if self.controller is None:
            return self.plant
        return feedback_lft(self.plant, self.controller,
                            u_group=self.u_group, y_group=self.y_group)

    def state_dim(self) -> int:
        n = self.plant.sys.n_states
        if self.controller is not None:
            n += self.controller.n_states
        return n


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (n, N)
    q: np.ndarray               # (n_q, N)
    outputs: dict               # group name -> (rows, N)
    sup_norm: float
    diverged: bool

    def final_state(self):
        return self.states[:, -1]


def _loop_matrices(loop: LureLoop):
    cs = loop.closed()
    s = cs.sys
    Bp = cs.B_of(loop.p_group)
    Cq = cs.C_of(loop.q_group)
    Dqp = cs.D_of(loop.q_group, loop.p_group)
    if np.any(np.abs(Dqp) > 0):
        raise SimulationError(
            "algebraic loop: feedthrough from p to q must be zero")
    return cs, s, Bp, Cq


def simulate(loop: LureLoop, T_end: float, tol: float = 1e-8,
             x0=None, n_points: int = 2000) -> Trajectory:
    """Integrate the closed loop with an adaptive explicit RK 4/5 pair."""
    cs, s, Bp, Cq = _loop_matrices(loop)
    n = s.n_states
    x0 = np.zeros(n) if x0 is None and loop.x0 is None else \
        np.asarray(loop.x0 if x0 is None else x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 shape {x0.shape}, expected ({n},)")

    has_w = loop.w is not None
    if has_w:
        Bw = cs.B_of(loop.w_group)
        Dqw = cs.D_of(loop.q_group, loop.w_group)
    phi = loop.phi

    def rhs(t, x):
        dx = s.A @ x
        q = Cq @ x
        if has_w:
            wt = np.atleast_1d(loop.w(t))
            dx = dx + Bw @ wt
            q = q + Dqw @ wt
        if phi is not None:
            dx = dx + Bp @ phi(t, q)
        return dx

    def blown(t, x):
        return np.max(np.abs(x)) - DIVERGENCE_LIMIT
    blown.terminal = True
    blown.direction = 1

    t_eval = np.linspace(0.0, T_end, min(n_points, MAX_EXPORT_POINTS))
    sol = solve_ivp(rhs, (0.0, T_end), x0, method="RK45", rtol=tol,
                    atol=tol * 1e-2, t_eval=t_eval, events=blown,
                    max_step=np.inf)
    diverged = bool(sol.t_events[0].size)
    if sol.status == -1 and not diverged:
        raise SimulationError(f"integration failed: {sol.message}")
    ts, xs = sol.t, sol.y
    if diverged and xs.shape[1] == 0:
        ts = np.array([0.0])
        xs = x0[:, None]
    qs = Cq @ xs
    if has_w:
        qs = qs + Dqw @ np.column_stack([np.atleast_1d(loop.w(t)) for t in ts])
    outputs = {}
    for name, _ in cs.output_groups:
        if name == loop.q_group:
            continue
        outputs[name] = cs.C_of(name) @ xs
    sup = float(np.max(np.abs(xs))) if xs.size else float(np.max(np.abs(x0)))
    return Trajectory(ts, xs, qs, outputs, sup, diverged)


@dataclass(frozen=True)
class Equilibrium:
    x: np.ndarray
    stable: bool
    abscissa: float
    residual: float


def _phi_jacobian(phi: Nonlinearity, q):
    """Central-difference Jacobian of phi at q, h = 1e-6 (1 + |q_j|)."""
    q = np.asarray(q, dtype=float)
    J = np.zeros((phi.n_p, len(q)))
    for j in range(len(q)):
        h = 1e-6 * (1.0 + abs(q[j]))
        e = np.zeros_like(q)
        e[j] = h
        J[:, j] = (phi(0.0, q + e) - phi(0.0, q - e)) / (2 * h)
    return J


def find_equilibria(loop: LureLoop, seeds=None, box=(-10.0, 10.0),
                    n_seeds: int = 200, seed: int = 0,
                    residual_tol: float = 1e-10):
    """Newton search for equilibria of the autonomous loop.

    Seeds: Latin-hypercube grid over the box, the origin, and any explicit
    seed points.  Converged roots are deduplicated at distance 1e-6 and
    classified by linearization.
    """
    if loop.w is not None:
        raise ValueError("equilibrium search requires an autonomous loop (w=None)")
    cs, s, Bp, Cq = _loop_matrices(loop)
    n = s.n_states
    phi = loop.phi

    def F(x):
        out = s.A @ x
        if phi is not None:
            out = out + Bp @ phi(0.0, Cq @ x)
        return out

    sampler = qmc.LatinHypercube(d=n, seed=seed)
    lo, hi = box
    pool = [np.zeros(n)]
    pool += list(qmc.scale(sampler.random(n_seeds), [lo] * n, [hi] * n))
    if seeds is not None:
        pool += [np.asarray(s0, dtype=float) for s0 in seeds]

    found = []
    for s0 in pool:
        x, info, ier, _ = fsolve(F, s0, full_output=True)
        if ier != 1:
            continue
        res = float(np.max(np.abs(F(x))))
        if res > residual_tol * (1.0 + np.max(np.abs(x))):
            continue
        if any(np.max(np.abs(x - e.x)) < 1e-6 * (1 + np.max(np.abs(x)))
               for e in found):
            continue
        Alin = linearize(loop, x).A
        sa = spectral_abscissa(Alin)
        found.append(Equilibrium(x, bool(sa < 0), sa, res))
    found.sort(key=lambda e: tuple(np.round(e.x, 6)))
    return found


def linearize(loop: LureLoop, xstar) -> StateSpace:
    """Closed-loop linearization A_cl + B_p Dphi(C_q x*) C_q at a point."""
    cs, s, Bp, Cq = _loop_matrices(loop)
    xstar = np.asarray(xstar, dtype=float)
    A = s.A
    if loop.phi is not None:
        J = _phi_jacobian(loop.phi, Cq @ xstar)
        A = A + Bp @ J @ Cq
    return StateSpace(A, s.B, s.C, s.D)


def standard_input_bank(dim: int, amplitude: float = 1.0, seed: int = 0,
                        n_noise: int = 8):
    """Bounded test inputs: steps, a pulse, sinusoids, seeded bounded noise.

    Magnitudes span amplitude/4 up to amplitude so the affine sup-norm
    envelope fit is well conditioned.
    """
    rng = np.random.default_rng(seed)
    bank = []

    def vec(f):
        return lambda t, f=f: np.full(dim, f(t))

    for a in (amplitude, -amplitude, amplitude / 2, amplitude / 4):
        bank.append((f"step({a:+g})", vec(lambda t, a=a: a)))
    bank.append(("pulse[0,5]",
                 vec(lambda t: amplitude if t <= 5.0 else 0.0)))
    for wfreq, sc in ((0.2, 1.0), (1.0, 0.5), (5.0, 0.25)):
        bank.append((f"sin(w={wfreq})",
                     vec(lambda t, w=wfreq, sc=sc: sc * amplitude * np.sin(w * t))))
    for k in range(n_noise):
        # piecewise-constant noise, held for 1 time unit
        sc = 0.25 + 0.75 * (k % 4) / 3.0
        vals = rng.uniform(-sc * amplitude, sc * amplitude, size=(512, dim))
        bank.append((f"noise#{k}",
                     lambda t, vals=vals: vals[min(int(t), 511)]))
    return bank


@dataclass(frozen=True)
class ProbeReport:
    entries: list              # (name, in_sup, out_sup, diverged)
    k1: float
    k2: float
    any_divergence: bool

    def envelope_ok(self, slack: float = 1e-9):
        return all(d or out <= self.k1 * win + self.k2 + slack
                   for _, win, out, d in self.entries)


def bibo_probe(loop: LureLoop, input_bank=None, T_end: float = 200.0,
               tol: float = 1e-7, x0=None) -> ProbeReport:
    """Empirical BIBO check: sup-norm envelope over a bank of bounded inputs.

    Fits |x|_sup <= k1 |w|_sup + k2 by least squares over the non-divergent
    runs.  Divergence is reported, not raised.
    """
    cs = loop.closed()
    dim = cs.input_size(loop.w_group)
    if input_bank is None:
        input_bank = standard_input_bank(dim)
    entries = []
    for name, w in input_bank:
        run = LureLoop(loop.plant, loop.phi, loop.controller, w=w,
                       x0=loop.x0 if x0 is None else x0,
                       p_group=loop.p_group, q_group=loop.q_group,
                       u_group=loop.u_group, y_group=loop.y_group,
                       w_group=loop.w_group)
        traj = simulate(run, T_end, tol=tol, x0=x0)
        ts = np.linspace(0.0, T_end, 512)
        w_sup = float(np.max(np.abs([np.atleast_1d(w(t)) for t in ts])))
        entries.append((name, w_sup, traj.sup_norm, traj.diverged))
    ok = [(win, out) for _, win, out, d in entries if not d]
    if ok:
        A = np.array([[win, 1.0] for win, _ in ok])
        y = np.array([out for _, out in ok])
        k1, k2 = np.linalg.lstsq(A, y, rcond=None)[0]
        # lift the offset so the envelope dominates every finite run
        k2 += max(0.0, float(np.max(y - A @ np.array([k1, k2]))))
    else:
        k1 = k2 = float("inf")
    return ProbeReport(entries, float(k1), float(k2),
                       any(d for *_, d in entries))
