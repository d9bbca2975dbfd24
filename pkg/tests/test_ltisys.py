import numpy as np
import pytest

from luresynth.ltisys import (
    ChannelSelector,
    LoopError,
    PartitionedPlant,
    StateSpace,
    channel,
    feedback_lft,
    freq_response,
    is_hurwitz,
    sector_shift,
    spectral_abscissa,
    star_product,
    two_port,
)

RNG = np.random.default_rng(1234)


def random_stable_ss(rng, n, m, p):
    A = rng.standard_normal((n, n))
    A = A - (spectral_abscissa(A) + rng.uniform(0.2, 1.0)) * np.eye(n)
    return StateSpace(A, rng.standard_normal((n, m)),
                      rng.standard_normal((p, n)), rng.standard_normal((p, m)))


def static_plant_2x2(rng, k):
    D = rng.standard_normal((2 * k, 2 * k))
    return two_port(StateSpace.static(D), k, k)


def i_sharp(k):
    Z = np.zeros((k, k))
    I = np.eye(k)
    return two_port(StateSpace.static(np.block([[Z, I], [I, Z]])), k, k)


def b_mobius(k):
    I = np.eye(k)
    D = np.block([[-I, np.sqrt(2) * I], [-np.sqrt(2) * I, I]])
    return two_port(StateSpace.static(D), k, k)


class TestChannel:
    def test_dynamic_subblock(self):
        A = np.array([[-1.0, 0.5], [0.0, -2.0]])
        B = RNG.standard_normal((2, 4))
        C = RNG.standard_normal((3, 2))
        D = RNG.standard_normal((3, 4))
        P = PartitionedPlant(StateSpace(A, B, C, D),
                             [("p", 1), ("w", 2), ("u", 1)],
                             [("q", 1), ("z", 1), ("y", 1)])
        G = channel(P, ChannelSelector("w", "z"))
        assert np.allclose(G.B, B[:, 1:3])
        assert np.allclose(G.C, C[1:2, :])
        assert np.allclose(G.D, D[1:2, 1:3])

    def test_static_subblock(self):
        P = PartitionedPlant(StateSpace.static([[1.0, 2.0], [3.0, 4.0]]),
                             [("in1", 1), ("in2", 1)],
                             [("out1", 1), ("out2", 1)])
        G = channel(P, ChannelSelector("in2", "out1"))
        assert np.allclose(G.D, [[2.0]])

    def test_unknown_group(self):
        P = PartitionedPlant(StateSpace.static([[1.0]]), [("p", 1)], [("q", 1)])
        with pytest.raises(KeyError):
            channel(P, ChannelSelector("v", "q"))


class TestFeedbackLft:
    def test_scalar_integrator_gain(self):
        # plant 1/s with an extra performance channel; u = -k y closes A to -k
        k = 3.0
        sys = StateSpace([[0.0]], [[1.0, 1.0]], [[1.0], [1.0]],
                         np.zeros((2, 2)))
        P = PartitionedPlant(sys, [("w", 1), ("u", 1)], [("z", 1), ("y", 1)])
        cl = feedback_lft(P, StateSpace.static([[-k]]))
        assert np.allclose(cl.sys.A, [[-k]])

    def test_singular_loop(self):
        sys = StateSpace.static([[1.0]])
        P = PartitionedPlant(sys, [("u", 1)], [("y", 1)])
        with pytest.raises(LoopError):
            feedback_lft(P, StateSpace.static([[1.0]]))

    def test_dimension_mismatch(self):
        sys = StateSpace.static(np.zeros((2, 2)))
        P = PartitionedPlant(sys, [("u", 2)], [("y", 2)])
        with pytest.raises(ValueError):
            feedback_lft(P, StateSpace.static([[1.0]]))

    def test_matches_direct_formula_random(self):
        # no feedthrough loops: closed loop is the textbook block formula
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, nk = rng.integers(1, 4), rng.integers(0, 3)
            G = random_stable_ss(rng, n, 3, 3)
            D = G.D.copy()
            D[2:, 2:] = 0.0  # D_yu = 0
            G = StateSpace(G.A, G.B, G.C, D)
            P = PartitionedPlant(G, [("w", 2), ("u", 1)], [("z", 2), ("y", 1)])
            K = random_stable_ss(rng, int(nk), 1, 1)
            cl = feedback_lft(P, K)
            Bu, Cy = G.B[:, 2:], G.C[2:, :]
            A_direct = np.block([
                [G.A + Bu @ K.D @ Cy, Bu @ K.C],
                [K.B @ Cy, K.A],
            ])
            assert np.allclose(cl.sys.A, A_direct)
            Gw = channel(cl, ChannelSelector("w", "z"))
            w = 0.37
            H_plant = freq_response(G, w)
            H_K = freq_response(K, w)
            # frequency-domain LFT oracle
            T = H_plant[:2, :2] + H_plant[:2, 2:] @ H_K @ np.linalg.solve(
                np.eye(1) - H_plant[2:, 2:] @ H_K, H_plant[2:, :2])
            assert np.allclose(freq_response(Gw, w), T, atol=1e-9)


class TestStarProduct:
    def test_unit(self):
        rng = np.random.default_rng(5)
        for k in (1, 2):
            M = static_plant_2x2(rng, k)
            S = star_product(M, i_sharp(k))
            assert np.allclose(S.sys.D, M.sys.D, atol=1e-12)
            S2 = star_product(i_sharp(k), M)
            assert np.allclose(S2.sys.D, M.sys.D, atol=1e-12)

    def test_mobius_involution(self):
        for k in (1, 2, 3):
            S = star_product(b_mobius(k), b_mobius(k))
            assert np.allclose(S.sys.D, i_sharp(k).sys.D, atol=1e-10)

    def test_static_elimination_oracle(self):
        # compare against direct elimination of the inner signals
        rng = np.random.default_rng(11)
        for _ in range(10):
            M = static_plant_2x2(rng, 2)
            N = static_plant_2x2(rng, 2)
            S = star_product(M, N)
            Dm, Dn = M.sys.D, N.sys.D
            M11, M12, M21, M22 = Dm[:2, :2], Dm[:2, 2:], Dm[2:, :2], Dm[2:, 2:]
            N11, N12, N21, N22 = Dn[:2, :2], Dn[:2, 2:], Dn[2:, :2], Dn[2:, 2:]
            I = np.eye(2)
            S11 = M11 + M12 @ np.linalg.solve(I - N11 @ M22, N11 @ M21)
            S12 = M12 @ np.linalg.solve(I - N11 @ M22, N12)
            S21 = N21 @ np.linalg.solve(I - M22 @ N11, M21)
            S22 = N22 + N21 @ M22 @ np.linalg.solve(I - N11 @ M22, N12)
            D = np.block([[S11, S12], [S21, S22]])
            assert np.allclose(S.sys.D, D, atol=1e-10)

    def test_associative_on_dynamic_triples(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            sys_list = []
            for _k in range(3):
                G = random_stable_ss(rng, int(rng.integers(1, 3)), 4, 4)
                # keep inner loops well posed
                G = StateSpace(G.A, G.B, G.C, 0.1 * G.D)
                sys_list.append(two_port(G, 2, 2))
            M, N, Q = sys_list
            L = star_product(star_product(M, N), Q)
            R = star_product(M, star_product(N, Q))
            for w in (0.0, 0.3, 2.1):
                assert np.allclose(freq_response(L.sys, w),
                                   freq_response(R.sys, w), atol=1e-10)


class TestHurwitz:
    def test_scalar(self):
        ok, sa = is_hurwitz([[-1.0]])
        assert ok and sa == pytest.approx(-1.0)

    def test_mimo_attractor_modes(self):
        A = np.array([[-2.0, 8.8, 0.0], [1.0, -1.0, 1.0], [0.0, -15.0, 0.0]])
        ok, sa = is_hurwitz(A)
        assert not ok
        assert sa == pytest.approx(0.1422, abs=1e-4)
        ev = np.linalg.eigvals(A)
        osc = ev[np.argmax(ev.imag)]
        assert osc.imag == pytest.approx(3.0189, abs=1e-4)

    def test_chua_shifted(self):
        alpha, beta, rho = 8.3, 16.5, 0.25
        A = np.array([[-alpha, alpha, 0.0], [1.0, -1.0, 1.0], [0.0, -beta, 0.0]])
        E2 = np.zeros((3, 3))
        E2[0, 0] = alpha * rho
        ok, sa = is_hurwitz(A + E2)
        assert ok == (np.max(np.linalg.eigvals(A + E2).real) < 0)

    def test_random_sign_agreement(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            A = rng.standard_normal((n, n))
            ok, sa = is_hurwitz(A)
            assert ok == (sa < 0)
            assert sa == pytest.approx(np.max(np.linalg.eigvals(A).real))


class TestSectorShift:
    def _plant(self):
        A = np.array([[-2.0]])
        sys = StateSpace(A, [[1.0, 0.5]], [[3.0], [1.0]], np.zeros((2, 2)))
        return PartitionedPlant(sys, [("p", 1), ("w", 1)], [("q", 1), ("z", 1)])

    def test_zero_center(self):
        P = self._plant()
        assert np.allclose(sector_shift(P, 0.0).sys.A, P.sys.A)

    def test_scalar_arithmetic(self):
        P = self._plant()
        assert np.allclose(sector_shift(P, 0.5).sys.A, [[-0.5]])

    def test_additivity(self):
        P = self._plant()
        a = sector_shift(sector_shift(P, 0.3), 0.2)
        b = sector_shift(P, 0.5)
        assert np.allclose(a.sys.A, b.sys.A)

    def test_mimo_gamma(self):
        A = np.array([[-2.0, 8.8, 0.0], [1.0, -1.0, 1.0], [0.0, -15.0, 0.0]])
        B = np.diag([5.0, 0.1, 0.3])
        sys = StateSpace(A, np.hstack([B, np.ones((3, 1))]),
                         np.vstack([np.eye(3), np.ones((1, 3))]),
                         np.zeros((4, 4)))
        P = PartitionedPlant(sys, [("p", 3), ("u", 1)], [("q", 3), ("y", 1)])
        Gamma = np.diag([0.05, 0.1, 0.15])
        shifted = sector_shift(P, Gamma)
        assert np.allclose(shifted.sys.A, A + B @ Gamma)

    def test_bad_gamma_shape(self):
        with pytest.raises(ValueError):
            sector_shift(self._plant(), np.eye(2))


class TestFreqResponse:
    def test_static(self):
        D = np.array([[1.0, 2.0]])
        assert np.allclose(freq_response(StateSpace.static(D), 17.3), D)

    def test_first_order_dc(self):
        G = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        assert freq_response(G, 0.0)[0, 0] == pytest.approx(1.0)

    def test_first_order_pole(self):
        G = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        H = freq_response(G, 1.0)[0, 0]
        assert H == pytest.approx(1.0 / (1.0 + 1.0j))
        assert abs(H) == pytest.approx(0.7071, abs=1e-4)


class TestSerialization:
    def test_roundtrip(self):
        G = random_stable_ss(RNG, 3, 2, 2)
        H = StateSpace.from_dict(G.to_dict())
        for X, Y in zip((G.A, G.B, G.C, G.D), (H.A, H.B, H.C, H.D)):
            assert np.allclose(X, Y)

    def test_static_roundtrip(self):
        G = StateSpace.static([[1.0, 2.0]])
        H = StateSpace.from_dict(G.to_dict())
        assert H.n_states == 0
        assert np.allclose(H.D, G.D)


class TestAlgebraHelpers:
    def test_series_freq(self):
        rng = np.random.default_rng(2)
        G = random_stable_ss(rng, 2, 2, 3)
        H = random_stable_ss(rng, 3, 3, 2)
        S = G.series(H)
        for w in (0.0, 1.7):
            assert np.allclose(freq_response(S, w),
                               freq_response(H, w) @ freq_response(G, w))

    def test_inverse(self):
        G = StateSpace([[-2.0]], [[1.0]], [[1.0]], [[2.0]])
        Gi = G.inverse()
        for w in (0.0, 0.5, 3.0):
            assert np.allclose(freq_response(Gi, w),
                               np.linalg.inv(freq_response(G, w)))
