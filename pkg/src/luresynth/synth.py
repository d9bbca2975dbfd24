"""Structured controller synthesis for mixed peak-gain / H-infinity programs.

Controllers are parametrized (static, PID with derivative filter, or full
fixed-order), both norms are evaluated with subgradients through the
closed-loop matrices, and a bundle (cutting-plane) method with an
infinity-norm trust region drives the iteratively re-weighted max of the
objective and constraint branches.  A best-asymptotic-sector sweep and
certificate assembly sit on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .ltisys import (
    ChannelSelector,
    PartitionedPlant,
    StateSpace,
    channel,
    feedback_lft,
    freq_response,
    sector_shift,
    spectral_abscissa,
)
from .norms import hinf_norm, peak_gain_norm

__all__ = [
    "ControllerStructure",
    "MixedProgramSpec",
    "SynthesisResult",
    "SweepRow",
    "Certificate",
    "realize",
    "eval_hinf_subgrad",
    "eval_pkgn_subgrad",
    "solve_mixed",
    "sweep_best_sector",
    "certify",
    "kstar_fixture",
]

_PENALTY_BASE = 1e6


# ---------------------------------------------------------------------------
# Controller structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControllerStructure:
    """Parametrized controller class.

    kinds:
      static      -- D-only gain, n_u x n_y parameters
      pid         -- SISO, x = (Kp, Ki, Kd, Tf):
                       K(s) = Kp + Ki/s + Kd s / (Tf s + 1)
                     with lag_form=True the filtered-derivative slot becomes a
                     first-order lag: K(s) = Kp + Ki/s + Kl / (Tf s + 1),
                     x = (Kp, Ki, Kl, Tf)
      fixed_order -- full (A_K, B_K, C_K, D_K) of order n_K; with
                     strictly_proper=True the D_K block is fixed to zero
                     (e.g. order 3, n_y=2, n_u=1 gives 18 free parameters)
    """

    kind: str
    n_y: int = 1
    n_u: int = 1
    n_K: int = 0
    lag_form: bool = False
    strictly_proper: bool = False

    def __post_init__(self):
        if self.kind not in ("static", "pid", "fixed_order"):
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind == "pid" and (self.n_y != 1 or self.n_u != 1):
            raise ValueError("pid structure is SISO")

    @property
    def n_params(self):
        if self.kind == "static":
            return self.n_u * self.n_y
        if self.kind == "pid":
            return 4
        k = self.n_K
        n = k * k + k * self.n_y + self.n_u * k
        if not self.strictly_proper:
            n += self.n_u * self.n_y
        return n

    def _matrices(self, x):
        """(A, B, C, D) as possibly-complex arrays (complex-step friendly)."""
        x = np.asarray(x)
        if x.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {x.shape}")
        dt = complex if np.iscomplexobj(x) else float
        if self.kind == "static":
            D = x.reshape(self.n_u, self.n_y)
            return (np.zeros((0, 0), dt), np.zeros((0, self.n_y), dt),
                    np.zeros((self.n_u, 0), dt), D)
        if self.kind == "pid":
            Kp, Ki, K3, Tf = x
            if np.real(Tf) <= 0:
                raise ValueError("filter time constant Tf must be positive")
            A = np.array([[0.0, 0.0], [0.0, -1.0 / Tf]], dtype=dt)
            if self.lag_form:
                B = np.array([[1.0], [1.0 / Tf]], dtype=dt)
                C = np.array([[Ki, K3]], dtype=dt)
                D = np.array([[Kp]], dtype=dt)
            else:
                B = np.array([[1.0], [1.0]], dtype=dt)
                C = np.array([[Ki, -K3 / Tf ** 2]], dtype=dt)
                D = np.array([[Kp + K3 / Tf]], dtype=dt)
            return A, B, C, D
        k, ny, nu = self.n_K, self.n_y, self.n_u
        i = 0
        A = x[i:i + k * k].reshape(k, k); i += k * k
        B = x[i:i + k * ny].reshape(k, ny); i += k * ny
        C = x[i:i + nu * k].reshape(nu, k); i += nu * k
        D = (np.zeros((nu, ny), dtype=dt) if self.strictly_proper
             else x[i:].reshape(nu, ny))
        return A, B, C, D

    def realize(self, x) -> StateSpace:
        A, B, C, D = self._matrices(np.asarray(x, dtype=float))
        return StateSpace(A, B, C, D)

    def derivs(self, x):
        """Parameter derivatives (dA, dB, dC, dD) by complex step."""
        x = np.asarray(x, dtype=float)
        h = 1e-30
        out = []
        for j in range(self.n_params):
            xc = x.astype(complex)
            xc[j] += 1j * h
            A, B, C, D = self._matrices(xc)
            out.append(tuple(np.imag(M) / h for M in (A, B, C, D)))
        return out


def realize(cs: ControllerStructure, x) -> StateSpace:
    return cs.realize(x)


def kstar_fixture():
    """The bundled lag-form PID point used by the MIMO attractor study."""
    cs = ControllerStructure("pid", lag_form=True)
    x = np.array([-0.796, 0.000352, 0.097, 940.0])
    return cs, x


# ---------------------------------------------------------------------------
# Closed-loop assembly with parameter derivatives
# ---------------------------------------------------------------------------

def _closed_channel(P: PartitionedPlant, sel: ChannelSelector, K: StateSpace,
                    u_group="u", y_group="y"):
    closed = feedback_lft(P, K, u_group=u_group, y_group=y_group)
    return channel(closed, sel)


def _closed_channel_derivs(P: PartitionedPlant, sel: ChannelSelector,
                           cs: ControllerStructure, x,
                           u_group="u", y_group="y"):
    """Channel system T(x) and its parameter derivatives.

    Requires zero plant feedthrough y <- u (all bundled studies satisfy it),
    which makes the closed loop affine in the controller matrices.
    """
    K = cs.realize(x)
    if np.any(np.abs(P.D_of(y_group, u_group)) > 0):
        raise ValueError("derivative assembly requires D_yu = 0")
    T = _closed_channel(P, sel, K, u_group, y_group)
    s = P.sys
    Bu, Cy = P.B_of(u_group), P.C_of(y_group)
    Bw = P.B_of(sel.from_group)
    Cz = P.C_of(sel.to_group)
    Dyw = P.D_of(y_group, sel.from_group)
    Dzu = P.D_of(sel.to_group, u_group)
    n, nK = s.n_states, K.n_states
    dTs = []
    for dA, dB, dC, dD in cs.derivs(x):
        dAcl = np.block([
            [Bu @ dD @ Cy, Bu @ dC],
            [dB @ Cy, dA],
        ])
        dBcl = np.vstack([Bu @ dD @ Dyw, dB @ Dyw])
        dCcl = np.hstack([Dzu @ dD @ Cy, Dzu @ dC])
        dDcl = Dzu @ dD @ Dyw
        dTs.append((dAcl, dBcl, dCcl, dDcl))
    return T, dTs


def _abscissa_and_grad(A, dAs):
    """Spectral abscissa and its gradient via eigenvector perturbation."""
    if not np.asarray(A).size:
        return float("-inf"), np.zeros(len(dAs))
    lam, V = np.linalg.eig(A)
    k = int(np.argmax(lam.real))
    W = np.linalg.inv(V)  # rows are left eigenvectors, u.v = 1 by construction
    v, u = V[:, k], W[k, :]
    grad = np.array([np.real(u @ dA @ v) for dA in dAs])
    return float(lam[k].real), grad


@dataclass(frozen=True)
class _Eval:
    value: float
    grad: np.ndarray
    stable: bool
    extras: dict = field(default_factory=dict)


def eval_hinf_subgrad(P: PartitionedPlant, sel: ChannelSelector,
                      cs: ControllerStructure, x, tol=1e-7,
                      u_group="u", y_group="y") -> _Eval:
    """H-infinity norm of the closed channel with a subgradient in x.

    Unstable closed loops return penalty mode: a large surrogate value with
    the spectral-abscissa gradient, so the optimizer can restabilize.
    """
    T, dTs = _closed_channel_derivs(P, sel, cs, x, u_group, y_group)
    sa = spectral_abscissa(T.A)
    if T.n_states and sa >= 0:
        val, grad = _penalty(T.A, dTs)
        return _Eval(val, grad, False, {"abscissa": sa})
    cert = hinf_norm(T, tol=tol)
    # locate active frequencies on [0, inf): peak of sigma_max
    ws = _candidate_frequencies(T, cert.value)
    sigs = []
    for w in ws:
        M = freq_response(T, w)
        U, S, Vh = np.linalg.svd(M)
        sigs.append((float(S[0]), w, U[:, 0], Vh[0, :].conj()))
    sigs.sort(key=lambda t: -t[0])
    peak = sigs[0][0]
    actives = [(w, s) for s, w, _, _ in sigs if s >= 0.99 * peak]
    grads = []
    for s_val, w, u, v in sigs:
        if s_val < 0.99 * peak:
            break
        grads.append(_sigma_grad(T, dTs, w, u, v))
    # subgradient at the maximizing frequency
    return _Eval(float(cert.value), grads[0], True,
                 {"active_freqs": actives, "active_grads": grads,
                  "certificate": cert})


def _candidate_frequencies(T, level):
    ev = np.linalg.eigvals(T.A)
    scale = max(np.max(np.abs(ev)) if ev.size else 1.0, 1e-3)
    ws = np.concatenate([[0.0], np.abs(ev.imag),
                         np.geomspace(scale * 1e-4, scale * 1e3, 400)])
    sig = []
    for w in np.unique(ws):
        M = freq_response(T, w)
        sig.append((w, np.linalg.svd(M, compute_uv=False)[0]))
    sig.sort(key=lambda t: -t[1])
    best = [w for w, s in sig[:8]]
    # refine the top frequency locally
    w0 = best[0]
    span = max(w0, scale * 1e-3)
    fine = np.linspace(max(w0 - 0.1 * span, 0.0), w0 + 0.1 * span, 200)
    vals = [np.linalg.svd(freq_response(T, w), compute_uv=False)[0]
            for w in fine]
    best.append(float(fine[int(np.argmax(vals))]))
    return np.unique(np.asarray(best))


def _sigma_grad(T, dTs, w, u, v):
    n = T.n_states
    if n:
        X = np.linalg.inv(1j * w * np.eye(n) - T.A)
        XB = X @ T.B
        CX = T.C @ X
    g = np.zeros(len(dTs))
    for j, (dA, dB, dC, dD) in enumerate(dTs):
        dM = np.asarray(dD, dtype=complex)
        if n:
            dM = dM + dC @ XB + CX @ dB + CX @ dA @ XB
        g[j] = float(np.real(u.conj() @ dM @ v))
    return g


def _penalty(A, dTs):
    sa, grad = _abscissa_and_grad(A, [d[0] for d in dTs])
    val = _PENALTY_BASE * (1.0 + max(sa, 0.0))
    return val, _PENALTY_BASE * grad


def make_time_grid(T_end: float, n_nodes: int | None = None):
    T_end = float(T_end)
    if n_nodes is None:
        # keep dt fine enough for oscillatory modes on long horizons
        n_nodes = int(np.clip(10 * T_end, 2001, 400001))
    return np.linspace(0.0, T_end, int(n_nodes))


def default_horizon(A, factor: float = 40.0, cap: float = 40000.0):
    if not np.asarray(A).size:
        return 1.0
    sa = spectral_abscissa(A)
    if sa >= 0:
        return 100.0
    return float(min(factor / abs(sa), cap))


def eval_pkgn_subgrad(P: PartitionedPlant, sel: ChannelSelector,
                      cs: ControllerStructure, x, grid=None,
                      u_group="u", y_group="y") -> _Eval:
    """Discretized peak-gain of the closed channel with a subgradient.

    The impulse response and its parameter sensitivities are propagated on
    the fixed time grid with one augmented matrix-exponential step per node;
    the gradient follows the sign pattern of the active output row.
    """
    T, dTs = _closed_channel_derivs(P, sel, cs, x, u_group, y_group)
    sa = spectral_abscissa(T.A)
    if T.n_states and sa >= 0:
        val, grad = _penalty(T.A, dTs)
        return _Eval(val, grad, False, {"abscissa": sa})
    if T.n_states == 0:
        # static channel: value and gradient come from the feedthrough alone
        rs = np.sum(np.abs(T.D), axis=1)
        i_star = int(np.argmax(rs))
        grad = np.array([float(np.sign(T.D[i_star]) @ dD[i_star])
                         for *_, dD in dTs])
        return _Eval(float(rs[i_star]), grad, True,
                     {"active_row": i_star, "row_sums": rs, "grid": None})
    if grid is None:
        grid = make_time_grid(default_horizon(T.A))
    dt = grid[1] - grid[0]
    lam, V = np.linalg.eig(T.A)
    W = np.linalg.inv(V)
    CV, WB = T.C @ V, W @ T.B
    E = np.exp(np.outer(grid, lam))                      # (N, n)
    g = np.real(np.einsum("ia,ta,aj->tij", CV, E, WB))   # impulse response
    sgn = np.sign(g)
    row_sums = np.trapezoid(np.abs(g), dx=dt, axis=0).sum(axis=1) \
        + np.sum(np.abs(T.D), axis=1)
    i_star = int(np.argmax(row_sums))
    value = float(row_sums[i_star])

    # divided differences f_ab(t) = (e^{la t} - e^{lb t}) / (la - lb)
    # give the modal sensitivity of e^{At} to each dA
    dl = lam[:, None] - lam[None, :]
    tiny = np.abs(dl) < 1e-10
    dl_safe = np.where(tiny, 1.0, dl)
    F = (E[:, :, None] - E[:, None, :]) / dl_safe        # (N, n, n)
    F[:, tiny] = (grid[:, None] * E)[:, np.newaxis, :].repeat(len(lam), 1)[:, tiny]

    s_row = sgn[:, i_star, :]                            # (N, n_in)
    cv = CV[i_star]                                      # (n,)
    grad = np.zeros(len(dTs))
    for j, (dA, dB, dC, dD) in enumerate(dTs):
        dAm = W @ dA @ V
        # dA term: cv_a dAm_ab f_ab(t) WB_bj
        core = np.einsum("a,ab,tab,bj->tj", cv, dAm, F, WB)
        # dB and dC terms share the plain modal propagator
        core = core + np.einsum("a,ta,aj->tj", cv, E, W @ dB)
        core = core + np.einsum("a,ta,aj->tj", dC[i_star] @ V, E, WB)
        gj = np.trapezoid(s_row * np.real(core), dx=dt, axis=0)
        grad[j] = float(np.sum(gj) + np.sign(T.D[i_star]) @ dD[i_star])
    return _Eval(value, grad, True,
                 {"active_row": i_star, "row_sums": row_sums, "grid": grid})


# ---------------------------------------------------------------------------
# Bundle optimizer
# ---------------------------------------------------------------------------

def _bundle_minimize(fg, x0, budget=60, tr0=0.25, tr_min=1e-9,
                     bundle_max=40, on_accept=None, stop_below=None):
    """Cutting-plane descent with a scaled infinity-norm trust region.

    fg(x) -> (value, gradient).  The trust region is relative: per-parameter
    radius tr * max(|x0_i|, 1e-3), so wildly different parameter magnitudes
    (e.g. integral gains vs filter time constants) step proportionally.
    Returns (x_best, f_best, trace); the trace lists accepted (monotone)
    merit values.  stop_below ends the run once f drops below it.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    cuts = [(x.copy(), f, g.copy())]
    scales = np.maximum(np.abs(x), 1e-3)
    tr = tr0
    trace = [f]
    for _ in range(budget):
        if stop_below is not None and f <= stop_below:
            break
        npar = len(x)
        # LP: min t  s.t.  g_k.(z) - t <= g_k.x_k - f_k,  |z - x| <= tr*scale
        Aub = np.array([np.concatenate([gk, [-1.0]]) for _, fk, gk in cuts])
        bub = np.array([gk @ xk - fk for xk, fk, gk in cuts])
        bounds = [(x[i] - tr * scales[i], x[i] + tr * scales[i])
                  for i in range(npar)] + [(None, None)]
        c = np.zeros(npar + 1)
        c[-1] = 1.0
        res = linprog(c, A_ub=Aub, b_ub=bub, bounds=bounds, method="highs")
        if not res.success:
            tr *= 0.5
            if tr < tr_min:
                break
            continue
        z = res.x[:npar]
        model = res.x[-1]
        pred = f - model
        if pred < 1e-12 * (1.0 + abs(f)):
            tr *= 0.5
            if tr < tr_min:
                break
            continue
        try:
            fz, gz = fg(z)
        except (ValueError, np.linalg.LinAlgError):
            tr *= 0.5
            continue
        cuts.append((z.copy(), fz, gz.copy()))
        if len(cuts) > bundle_max:
            cuts = cuts[-bundle_max:]
        rho = (f - fz) / pred
        if fz < f - 0.05 * pred:
            x, f, g = z, fz, gz
            trace.append(f)
            if on_accept is not None:
                on_accept(x, f)
            if rho > 0.7:
                tr *= 1.6
        else:
            tr *= 0.5
            if tr < tr_min:
                break
    return x, f, trace


# ---------------------------------------------------------------------------
# Mixed program driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixedProgramSpec:
    """Objective channel plus optional norm constraint.

    objective: (plant, selector, kind) with kind in {"hinf", "pk_gn"};
    constraint: optional (plant, selector, kind, bound); bound None means
    (1 + tau) * gamma_inf with gamma_inf computed by a preliminary
    unconstrained solve.  stabilize lists extra closed loops that must be
    Hurwitz (the objective/constraint plants are always included).
    """

    objective: tuple
    constraint: tuple | None = None
    tau: float = 0.1
    gamma_inf: float | None = None
    stabilize: tuple = ()
    u_group: str = "u"
    y_group: str = "y"


@dataclass(frozen=True)
class SynthesisResult:
    x_opt: np.ndarray
    K_opt: StateSpace
    objective_value: float
    constraint_value: float | None
    constraint_bound: float | None
    feasible: bool
    all_hurwitz: bool
    budget_exhausted: bool
    trace: tuple
    restarts_tried: int = 1


def _branch_eval(P, sel, kind, cs, x, grid, u_group, y_group):
    if kind == "hinf":
        return eval_hinf_subgrad(P, sel, cs, x, u_group=u_group, y_group=y_group)
    if kind == "pk_gn":
        return eval_pkgn_subgrad(P, sel, cs, x, grid=grid,
                                 u_group=u_group, y_group=y_group)
    raise ValueError(f"unknown norm kind {kind!r}")


def _stabilization_targets(spec):
    plants = [spec.objective[:2]]
    if spec.constraint is not None:
        plants.append(spec.constraint[:2])
    plants += [(p, None) for p in spec.stabilize]
    return plants


def _stabilize(spec, cs, x0, budget=80):
    """Pre-phase: minimize the worst closed-loop spectral abscissa."""
    targets = _stabilization_targets(spec)

    def fg(x):
        worst, gworst = -np.inf, None
        for P, sel in targets:
            sel = sel or ChannelSelector(P.input_groups[0][0],
                                         P.output_groups[0][0])
            T, dTs = _closed_channel_derivs(P, sel, cs, x,
                                            spec.u_group, spec.y_group)
            (sa, gr) = _abscissa_and_grad(T.A, [d[0] for d in dTs])
            if sa > worst:
                worst, gworst = sa, gr
        return worst + 0.01, gworst

    x, f, trace = _bundle_minimize(fg, x0, budget=budget, stop_below=0.0)
    return x, f - 0.01, trace


def solve_mixed(spec: MixedProgramSpec, cs: ControllerStructure, x0=None,
                budget: int = 80, restarts: int = 5, seed: int = 0,
                init_sampler=None) -> SynthesisResult:
    """Mixed-norm synthesis by an iteratively re-weighted max.

    The merit max(alpha*objective, beta*constraint/bound) is minimized by the
    bundle method; beta doubles while the constraint is violated and freezes
    once it holds.  The peak-gain time grid is refreshed every 10 accepted
    steps.  Multiple seeded restarts; final values recomputed at tight
    tolerance from the best parameters.
    """
    rng = np.random.default_rng(seed)
    obj_P, obj_sel, obj_kind = spec.objective
    con = spec.constraint
    starts = []
    if x0 is not None:
        starts.append(np.asarray(x0, dtype=float))
    while len(starts) < max(restarts, 1):
        if init_sampler is not None:
            starts.append(np.asarray(init_sampler(rng), dtype=float))
        else:
            starts.append(rng.uniform(-1.0, 1.0, cs.n_params))

    best = None
    for x_start in starts:
        result = _solve_single(spec, cs, x_start, budget)
        if best is None or _result_key(result) < _result_key(best):
            best = result
    return replace(best, restarts_tried=len(starts))


def _result_key(r: SynthesisResult):
    # feasible-and-stable results first, then by objective
    return (not (r.feasible and r.all_hurwitz), r.objective_value)


def _solve_single(spec, cs, x0, budget):
    obj_P, obj_sel, obj_kind = spec.objective
    con = spec.constraint
    x = np.asarray(x0, dtype=float).copy()

    # stabilization pre-phase
    def worst_abscissa(xv):
        worst = -np.inf
        for P, sel in _stabilization_targets(spec):
            sel = sel or ChannelSelector(P.input_groups[0][0],
                                         P.output_groups[0][0])
            K = cs.realize(xv)
            T = _closed_channel(P, sel, K, spec.u_group, spec.y_group)
            worst = max(worst, spectral_abscissa(T.A))
        return worst

    try:
        sa0 = worst_abscissa(x)
    except (ValueError, np.linalg.LinAlgError):
        sa0 = np.inf
    if not (sa0 < 0):  # note: -inf (static loop) counts as stable
        try:
            x, sa, _ = _stabilize(spec, cs, x)
        except (ValueError, np.linalg.LinAlgError):
            return _failed_result(cs, x0)
        if sa >= 0:
            return _failed_result(cs, x)

    # constraint bound
    gamma_bound = None
    con_kind = None
    if con is not None:
        con_P, con_sel, con_kind = con[0], con[1], con[2]
        gamma_bound = con[3] if len(con) > 3 and con[3] is not None else None
        if gamma_bound is None:
            g_inf = spec.gamma_inf
            if g_inf is None:
                ev = eval_hinf_subgrad(con_P, con_sel, cs, x,
                                       u_group=spec.u_group,
                                       y_group=spec.y_group)
                g_inf = ev.value if ev.stable else _PENALTY_BASE
            gamma_bound = (1.0 + spec.tau) * g_inf

    grid_box = {"grid": None, "accepts": 0}

    def refresh_grid(xv):
        K = cs.realize(xv)
        T = _closed_channel(obj_P, obj_sel, K, spec.u_group, spec.y_group)
        if spectral_abscissa(T.A) < 0:
            grid_box["grid"] = make_time_grid(default_horizon(T.A))

    if obj_kind == "pk_gn":
        refresh_grid(x)

    weights = {"alpha": 1.0, "beta": 1.0, "frozen": con is None}
    trace_all = []

    def fg(xv):
        ev_o = _branch_eval(obj_P, obj_sel, obj_kind, cs, xv,
                            grid_box["grid"], spec.u_group, spec.y_group)
        branches = [(weights["alpha"] * ev_o.value, weights["alpha"] * ev_o.grad)]
        if con is not None:
            ev_c = _branch_eval(con[0], con[1], con_kind, cs, xv,
                                None, spec.u_group, spec.y_group)
            scale = weights["beta"] / gamma_bound
            branches.append((scale * ev_c.value, scale * ev_c.grad))
        vals = [b[0] for b in branches]
        peak = max(vals)
        # near-active branches (within 1%) average into the subgradient
        act = [g for v, g in branches if v >= 0.99 * peak]
        return peak, np.mean(act, axis=0)

    def on_accept(xv, fv):
        grid_box["accepts"] += 1
        if obj_kind == "pk_gn" and grid_box["accepts"] % 10 == 0:
            refresh_grid(xv)

    n_outer = 6 if con is not None else 1
    inner = max(budget // n_outer, 10)
    for _ in range(n_outer):
        x, f, trace = _bundle_minimize(fg, x, budget=inner,
                                       on_accept=on_accept)
        trace_all.extend(trace)
        if con is None or weights["frozen"]:
            continue
        ev_c = _branch_eval(con[0], con[1], con_kind, cs, x, None,
                            spec.u_group, spec.y_group)
        if ev_c.stable and ev_c.value <= gamma_bound:
            weights["frozen"] = True
        else:
            weights["beta"] *= 2.0

    return _finalize(spec, cs, x, gamma_bound, trace_all, budget_hit=False)


def _failed_result(cs, x):
    x = np.asarray(x, dtype=float)
    try:
        K = cs.realize(x)
    except ValueError:
        K = StateSpace.static(np.zeros((cs.n_u, cs.n_y)))
    return SynthesisResult(x, K, float("inf"), None, None,
                           feasible=False, all_hurwitz=False,
                           budget_exhausted=True, trace=())


def _finalize(spec, cs, x, gamma_bound, trace, budget_hit):
    """Recompute reported values from x at full norm tolerance."""
    obj_P, obj_sel, obj_kind = spec.objective
    K = cs.realize(x)
    T = _closed_channel(obj_P, obj_sel, K, spec.u_group, spec.y_group)
    hurwitz = spectral_abscissa(T.A) < 0
    if hurwitz:
        obj_val = (peak_gain_norm(T, tol=1e-4).value if obj_kind == "pk_gn"
                   else hinf_norm(T, tol=1e-8).value)
    else:
        obj_val = float("inf")
    con_val = None
    feasible = hurwitz
    if spec.constraint is not None:
        con_P, con_sel, con_kind = spec.constraint[:3]
        Tc = _closed_channel(con_P, con_sel, K, spec.u_group, spec.y_group)
        if spectral_abscissa(Tc.A) < 0:
            con_val = (peak_gain_norm(Tc, tol=1e-4).value
                       if con_kind == "pk_gn" else hinf_norm(Tc, tol=1e-8).value)
            feasible = feasible and con_val <= gamma_bound * (1.0 + 1e-6)
        else:
            hurwitz = False
            feasible = False
    return SynthesisResult(np.asarray(x, dtype=float), K, float(obj_val),
                           con_val, gamma_bound, feasible, hurwitz,
                           budget_hit, tuple(trace))


# ---------------------------------------------------------------------------
# Best-sector sweep and certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    c: float
    r: float | None
    a: float | None
    b: float | None
    works: bool
    x_opt: np.ndarray | None
    error: str | None = None


def sweep_best_sector(plant: PartitionedPlant, cs, c_grid, q_inf,
                      sel: ChannelSelector | None = None,
                      budget: int = 40, seed: int = 0,
                      p_group="p", q_group="q"):
    """r(c) = 1 / peak-gain of the c-centered loop, over a grid of centers.

    cs=None evaluates the uncontrolled loop norm directly; otherwise each
    grid point runs a peak-gain synthesis warm-started from its predecessor.
    A center works when c - r(c) < q_inf < c + r(c).
    """
    sel = sel or ChannelSelector(p_group, q_group)
    rows = []
    x_prev = None
    for c in c_grid:
        shifted = sector_shift(plant, c, p_group=p_group, q_group=q_group)
        try:
            if cs is None:
                T = channel(shifted, sel)
                if spectral_abscissa(T.A) >= 0:
                    raise ValueError("centered loop unstable")
                val = peak_gain_norm(T, tol=1e-4).value
                x_opt = None
            else:
                spec = MixedProgramSpec(objective=(shifted, sel, "pk_gn"))
                res = solve_mixed(spec, cs, x0=x_prev, budget=budget,
                                  restarts=1 if x_prev is not None else 3,
                                  seed=seed)
                if not res.all_hurwitz:
                    raise ValueError("no stabilizing controller found")
                val, x_opt = res.objective_value, res.x_opt
                x_prev = x_opt
            r = 1.0 / val
            works = (c - r) < q_inf < (c + r)
            rows.append(SweepRow(float(c), r, c - r, c + r, works, x_opt))
        except (ValueError, np.linalg.LinAlgError) as e:
            rows.append(SweepRow(float(c), None, None, None, False, None,
                                 error=str(e)))
    return rows


def works_intervals(rows):
    """Contiguous grid runs where the sector test holds."""
    out = []
    start = None
    for row in rows:
        if row.works and start is None:
            start = row.c
        elif not row.works and start is not None:
            out.append((start, prev))
            start = None
        prev = row.c
    if start is not None:
        out.append((start, prev))
    return out


@dataclass(frozen=True)
class Certificate:
    kind: str          # "BIBO" (peak-gain) or "L2" (hinf)
    value: float
    bound: float
    threshold: float   # r^{-1}
    margin: float
    passed: bool
    constraint_slack: float | None = None
    hurwitz: bool = True

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} [{self.kind}] value={self.value:.6g} "
                f"(+/-{self.bound:.2g}) threshold={self.threshold:.6g} "
                f"margin={self.margin:.6g}")


def certify(value, threshold, bound=0.0, kind="BIBO",
            constraint_value=None, constraint_bound=None,
            hurwitz=True) -> Certificate:
    """Stability certificate: PASS iff value + bound < threshold (and loops
    Hurwitz, constraint met when given)."""
    margin = threshold - value - bound
    slack = None
    ok = hurwitz and margin > 0
    if constraint_value is not None and constraint_bound is not None:
        slack = constraint_bound - constraint_value
        ok = ok and slack >= -1e-9 * constraint_bound
    return Certificate(kind, float(value), float(bound), float(threshold),
                       float(margin), bool(ok), slack, bool(hurwitz))
