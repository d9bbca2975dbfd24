"""Certified system norms: H-infinity and the peak-to-peak (peak-gain) norm.

The peak-gain norm of a stable real-rational system is the maximum over
output rows of the summed L1 masses of the impulse-response entries plus
feedthrough magnitudes.  Each entry integral is evaluated by adaptive
quadrature with breakpoints at detected sign changes of c e^{At} b, plus an
analytic exponential tail bound that fixes the truncation horizon.

The H-infinity norm uses bisection with the Hamiltonian imaginary-axis
eigenvalue test for the level-set decision at each gamma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.optimize import brentq

from .ltisys import StateSpace, freq_response, is_hurwitz

__all__ = [
    "NormCertificate",
    "UnstableSystemError",
    "QuadratureBudgetError",
    "hinf_norm",
    "peak_gain_norm",
    "row_l1",
    "chain_bounds",
    "max_row_sum",
]

# Eigenvector condition number above which the modal impulse evaluator is
# abandoned for the dense matrix exponential.
_MODAL_COND_MAX = 1e8


class UnstableSystemError(ValueError):
    """Norm requested for a system whose A matrix is not Hurwitz."""


class QuadratureBudgetError(RuntimeError):
    """Impulse-response quadrature could not reach the requested tolerance."""


@dataclass(frozen=True)
class NormCertificate:
    """A computed norm value together with a guaranteed absolute error bound."""

    value: float
    abs_error_bound: float
    kind: str  # one of {"hinf", "pk_gn", "row_l1"}
    horizon_T: float | None = None
    grid: dict = field(default_factory=dict)

    @property
    def interval(self):
        return (self.value - self.abs_error_bound, self.value + self.abs_error_bound)

    def to_dict(self):
        return {
            "value": self.value,
            "abs_error_bound": self.abs_error_bound,
            "kind": self.kind,
            "horizon_T": self.horizon_T,
            "grid": {k: v for k, v in self.grid.items()},
        }


def max_row_sum(D) -> float:
    """Induced l-infinity matrix norm: max over rows of the absolute row sum."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(D), axis=1)))


class _ImpulseEvaluator:
    """Evaluates rows/entries of C e^{At} B cheaply.

    Uses the modal form V e^{Lambda t} V^{-1} when the eigenvector basis is
    well conditioned, otherwise falls back to the dense matrix exponential.
    """

    def __init__(self, A, B, C):
        self.A, self.B, self.C = A, B, C
        self.n = A.shape[0]
        lam, V = np.linalg.eig(A)
        cond = np.linalg.cond(V) if self.n else 1.0
        self.modal = bool(self.n) and cond < _MODAL_COND_MAX
        self.kappa = float(cond) if self.n else 1.0
        self.lam = lam
        if self.modal:
            self.CV = C.astype(complex) @ V
            self.VB = np.linalg.solve(V, B.astype(complex))

    def entry_fn(self, i, j):
        """Scalar function t -> (C e^{At} B)_{ij}."""
        if self.modal:
            w = self.CV[i, :] * self.VB[:, j]
            lam = self.lam

            def g(t):
                return float(np.sum(w * np.exp(lam * t)).real)
        else:
            A, b, c = self.A, self.B[:, j], self.C[i, :]

            def g(t):
                return float(c @ expm(A * t) @ b)
        return g

    def sample_matrix(self, ts):
        """Impulse-response samples, shape (len(ts), p_out, m_in)."""
        out = np.empty((len(ts), self.C.shape[0], self.B.shape[1]))
        if self.modal:
            E = np.exp(np.outer(ts, self.lam))  # (T, n)
            return np.real(np.einsum("ij,tj,jk->tik", self.CV, E, self.VB))
        M = np.eye(self.n)
        if len(ts) > 1 and np.allclose(np.diff(ts), ts[1] - ts[0]):
            Edt = expm(self.A * (ts[1] - ts[0]))
            M = expm(self.A * ts[0])
            for k in range(len(ts)):
                out[k] = self.C @ M @ self.B
                M = Edt @ M
            return out
        for k, t in enumerate(ts):
            out[k] = self.C @ expm(self.A * t) @ self.B
        return out


def _decay_envelope(ev: _ImpulseEvaluator):
    """Constants (K, sigma) with ||C e^{At} B|| <= K e^{sigma t} entrywise."""
    sigma = float(np.max(ev.lam.real)) if ev.n else -np.inf
    K = ev.kappa * np.linalg.norm(ev.C, 2) * np.linalg.norm(ev.B, 2)
    return K, sigma


def _pick_horizon(ev, tol_tail):
    K, sigma = _decay_envelope(ev)
    if sigma >= 0:
        raise UnstableSystemError("system is not exponentially stable")
    # tail integral of K e^{sigma t} from T equals K e^{sigma T} / |sigma|
    T = np.log(max(K / (abs(sigma) * tol_tail), 2.0)) / abs(sigma)
    # guard against envelope looseness: extend until the sampled response is small
    for _ in range(60):
        tail = K * np.exp(sigma * T) / abs(sigma)
        if tail <= tol_tail:
            break
        T *= 1.5
    return float(T), K * np.exp(sigma * T) / abs(sigma)


def _entry_l1(g, T, coarse_n=1200, quad_limit=400):
    """Integral of |g| over [0, T] with breakpoints at sign changes of g."""
    ts = np.unique(np.concatenate([
        np.linspace(0.0, T, coarse_n),
        np.geomspace(max(T * 1e-7, 1e-12), T, coarse_n // 3),
    ]))
    vals = np.array([g(t) for t in ts])
    roots = []
    sign = np.sign(vals)
    for k in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        roots.append(brentq(g, ts[k], ts[k + 1], xtol=1e-14, rtol=1e-13))
    points = sorted(r for r in roots if 0.0 < r < T)
    val, err = quad(lambda t: abs(g(t)), 0.0, T,
                    points=points if points else None,
                    limit=max(quad_limit, 50 + 50 * len(points)))
    return val, err, len(points)


def peak_gain_norm(G: StateSpace, tol: float = 1e-4) -> NormCertificate:
    """Peak-to-peak norm: max_i sum_j (L1 mass of impulse entry ij + |d_ij|)."""
    return _pkgn_impl(G, tol, rows=None, kind="pk_gn")


def row_l1(G: StateSpace, i: int, tol: float = 1e-4) -> NormCertificate:
    """Single output row of the peak-gain norm sum."""
    if not 0 <= i < G.n_outputs:
        raise IndexError(f"row {i} out of range for {G.n_outputs} outputs")
    return _pkgn_impl(G, tol, rows=[i], kind="row_l1")


def _pkgn_impl(G, tol, rows, kind):
    m, p = G.n_outputs, G.n_inputs
    if rows is None:
        rows = list(range(m))
    if G.n_states == 0:
        sums = np.sum(np.abs(G.D[rows, :]), axis=1)
        return NormCertificate(float(np.max(sums)) if len(rows) else 0.0, 0.0,
                               kind, horizon_T=0.0, grid={"n_nodes": 0})
    hurwitz, sa = is_hurwitz(G.A)
    if not hurwitz:
        raise UnstableSystemError(
            f"peak-gain norm is infinite: spectral abscissa {sa:.4g} >= 0")
    ev = _ImpulseEvaluator(G.A, G.B, G.C)
    n_entries = max(len(rows) * p, 1)
    T, tail = _pick_horizon(ev, tol / (2.0 * n_entries))

    row_vals = np.zeros(len(rows))
    total_err = tail * n_entries
    n_nodes = 0
    n_breaks = 0
    for r, i in enumerate(rows):
        s = 0.0
        for j in range(p):
            g = ev.entry_fn(i, j)
            val, err, nb = _entry_l1(g, T)
            s += val + abs(G.D[i, j])
            total_err += err
            n_breaks += nb
            n_nodes += 1
        row_vals[r] = s
    if total_err > tol:
        raise QuadratureBudgetError(
            f"quadrature error bound {total_err:.3g} exceeds tolerance {tol:.3g}")
    value = float(np.max(row_vals))
    return NormCertificate(value, float(total_err), kind, horizon_T=T,
                           grid={"n_entries": n_nodes, "sign_changes": n_breaks,
                                 "spectral_abscissa": sa,
                                 "row_sums": row_vals.tolist()})


# ---------------------------------------------------------------------------
# H-infinity norm
# ---------------------------------------------------------------------------

def _hamiltonian(G, gamma):
    A, B, C, D = G.A, G.B, G.C, G.D
    m = B.shape[1]
    R = gamma ** 2 * np.eye(m) - D.T @ D
    Ri = np.linalg.inv(R)
    Abar = A + B @ Ri @ D.T @ C
    return np.block([
        [Abar, B @ Ri @ B.T],
        [-C.T @ (np.eye(C.shape[0]) + D @ Ri @ D.T) @ C, -Abar.T],
    ])


def _has_imaginary_eigs(G, gamma, scale):
    H = _hamiltonian(G, gamma)
    ev = np.linalg.eigvals(H)
    tol = 1e-8 * max(scale, 1.0)
    return np.any(np.abs(ev.real) < tol * (1.0 + np.abs(ev.imag))), ev


def hamiltonian_crossings(G, gamma):
    """Imaginary parts of the Hamiltonian's imaginary-axis eigenvalues at gamma.

    These bracket the frequency intervals where the largest singular value of
    G(j omega) exceeds gamma.
    """
    H = _hamiltonian(G, gamma)
    ev = np.linalg.eigvals(H)
    scale = np.max(np.abs(ev)) if ev.size else 1.0
    sel = np.abs(ev.real) < 1e-8 * (1.0 + np.abs(ev.imag)) * max(scale, 1.0)
    ws = np.sort(np.abs(ev[sel].imag))
    return ws


def _sigma_max(G, w):
    return float(np.linalg.svd(freq_response(G, w), compute_uv=False)[0]) \
        if min(G.n_outputs, G.n_inputs) else 0.0


def hinf_norm(G: StateSpace, tol: float = 1e-6) -> NormCertificate:
    """H-infinity norm by gamma-bisection with the Hamiltonian test.

    tol is relative: on success the bracketing interval [lo, hi] satisfies
    hi - lo <= tol * (1 + lo).
    """
    if min(G.n_outputs, G.n_inputs) == 0:
        return NormCertificate(0.0, 0.0, "hinf", grid={"gamma_interval": (0.0, 0.0)})
    if G.n_states == 0:
        v = float(np.linalg.svd(G.D, compute_uv=False)[0])
        return NormCertificate(v, 0.0, "hinf", grid={"gamma_interval": (v, v)})
    hurwitz, sa = is_hurwitz(G.A)
    if not hurwitz:
        raise UnstableSystemError(
            f"H-infinity norm undefined: spectral abscissa {sa:.4g} >= 0")

    dmax = float(np.linalg.svd(G.D, compute_uv=False)[0]) if G.D.size else 0.0
    # coarse frequency sweep for the initial lower bound
    wscale = max(np.max(np.abs(np.linalg.eigvals(G.A))), 1e-3)
    ws = np.concatenate([[0.0], np.geomspace(wscale * 1e-4, wscale * 1e4, 120)])
    sweep = max(_sigma_max(G, w) for w in ws)
    lo = max(dmax, sweep)
    scale = np.max(np.abs(G.A))
    hi = max(2.0 * lo, dmax * (1.0 + 1e-6) + 1e-12)
    for _ in range(80):
        has, _ = _has_imaginary_eigs(G, hi * (1.0 + 1e-12), scale)
        if not has:
            break
        hi *= 2.0
    else:
        raise RuntimeError("hinf_norm: failed to bracket the norm from above")
    lo = min(lo, hi)
    for _ in range(200):
        if hi - lo <= tol * (1.0 + lo):
            break
        gamma = 0.5 * (lo + hi)
        if gamma <= dmax:
            lo = dmax
            continue
        has, ev = _has_imaginary_eigs(G, gamma, scale)
        if has:
            # refine the lower bound from the crossing frequencies
            sel = np.abs(ev.real) < 1e-8 * (1.0 + np.abs(ev.imag)) * max(scale, 1.0)
            wlist = np.sort(np.abs(ev[sel].imag))
            best = gamma
            for k in range(len(wlist) - 1):
                wm = 0.5 * (wlist[k] + wlist[k + 1])
                best = max(best, _sigma_max(G, wm))
            lo = max(lo, best)
            if lo >= hi:
                lo = gamma
        else:
            hi = gamma
    value = 0.5 * (lo + hi)
    return NormCertificate(value, 0.5 * (hi - lo), "hinf",
                           grid={"gamma_interval": (float(lo), float(hi))})


def chain_bounds(G: StateSpace, tol: float = 1e-6) -> tuple[float, float]:
    """Bracket of the peak-gain norm in terms of the H-infinity norm.

    Lower bound m^{-1/2} ||G||_inf with m outputs; upper bound
    (2n+1) p^{1/2} ||G||_inf with n states and p inputs, improved to
    2n p^{1/2} for strictly proper systems.
    """
    h = hinf_norm(G, tol)
    m, p, n = G.n_outputs, G.n_inputs, G.n_states
    hi_val = h.value + h.abs_error_bound
    lo_val = max(h.value - h.abs_error_bound, 0.0)
    lower = lo_val / np.sqrt(m)
    factor = 2 * n if np.allclose(G.D, 0.0) else 2 * n + 1
    factor = max(factor, 1)  # static systems: pk_gn equals the row-sum norm <= p^{1/2}||D||_2
    upper = factor * np.sqrt(p) * hi_val
    return float(lower), float(upper)
