import warnings
from dataclasses import dataclass

import numpy as np
import pytest

from aecnr import filters, linalg, room, stats
from aecnr.filters import (
    StructureWarning,
    bussgang,
    decompose_mwf,
    decompose_mwf_rank1,
    geic_solve,
    geic_wa_simplified,
    householder_complement,
    mwf_ext,
    q2_partition,
    steering_gevd,
    steering_griffiths_jim,
    steering_true_rtf,
)
from aecnr.stats import OracleCovariances, VadScalings, compose

GRID = (0.0, 0.5, 1.0)


def cgauss(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@dataclass
class Setup:
    sc: object
    spec: object
    orc: object     # rank-one speech oracle
    raw: object     # estimated speech covariance
    h: np.ndarray
    sv: object
    bg: object


def build(echo_path, seed=0):
    sc = room.random_scenario(seed, duration_s=8.0, far_activity="continuous", echo_path=echo_path)
    rirs = room.generate_rirs(sc)
    comp = room.render_scenario(sc, room.synthesize_sources(sc), rirs)
    spec = stats.ComponentSpectra.from_signals(comp)
    raw = stats.batch_covariances(spec)
    h, _, _ = room.true_rtf(sc, rirs)
    orc = stats.rank1_speech(raw, h)
    return Setup(sc, spec, orc, raw, h, steering_true_rtf(h, sc.L), bussgang(orc))


@pytest.fixture(scope="module")
def lin():
    return build(room.LINEAR)


@pytest.fixture(scope="module")
def ham():
    return build(room.HAMMERSTEIN)


def nulling_power(w, setup):
    """Output power on the stacked linear echo relative to the reference-mic echo, per bin."""
    y = np.einsum("fd,kfd->kf", w.conj(), setup.bg.linear_echo(setup.spec.l))
    return np.sum(np.abs(y) ** 2, axis=0) / np.sum(np.abs(setup.spec.e[..., 0]) ** 2, axis=0)


def rel(a, b):
    return np.linalg.norm(a - b, axis=-1) / np.linalg.norm(b, axis=-1)


class TestBussgang:
    def test_linear_path(self, rng):
        F, M, L, K = 5, 2, 2, 500
        G = cgauss(rng, F, L, M)
        l = cgauss(rng, K, F, L)
        e = np.einsum("flm,kfl->kfm", G.conj(), l)
        ones = np.ones(K, bool)
        spec = stats.ComponentSpectra(e, e, e, l, stats.ActivityLabels(ones, ones))
        orc = stats.batch_covariances(spec)
        bg = bussgang(orc)
        np.testing.assert_allclose(bg.F_lin, G, atol=1e-12)
        tr = np.trace(orc.R_ee, axis1=1, axis2=2).real
        assert np.all(np.linalg.norm(bg.R_eres, axis=(1, 2)) <= 1e-10 * tr)

    def test_scalar_cubic_gain(self):
        rng = np.random.default_rng(42)
        N, sigma = 100_000, 0.7
        l = sigma * rng.standard_normal(N)
        e = l ** 3
        orc = OracleCovariances(*(np.full((1, 1, 1), v, complex) for v in (1.0, 1.0, e @ e / N, l @ l / N, e @ l / N)))
        bg = bussgang(orc)
        assert bg.F_lin[0, 0, 0].real == pytest.approx(3 * sigma ** 2, rel=0.05)
        # orthogonality on fresh data
        l2 = sigma * rng.standard_normal(N)
        res = l2 ** 3 - bg.F_lin[0, 0, 0].real * l2
        scale = np.sqrt(np.mean(l2 ** 6) * np.mean(l2 ** 2))
        assert abs(np.mean(res * l2)) <= 5 / np.sqrt(N) * scale

    def test_uncorrelated(self, rng):
        orc = OracleCovariances(
            np.ones((3, 1, 1)), np.ones((3, 1, 1)), 2 * np.ones((3, 1, 1)),
            np.ones((3, 1, 1)), np.zeros((3, 1, 1)),
        )
        bg = bussgang(orc)
        assert not np.any(bg.F_lin)
        np.testing.assert_array_equal(bg.R_eres, orc.R_ee)

    def test_hammerstein_orthogonality(self, ham):
        # sample residual e - F^H l is orthogonal to l over the echo frames
        spec, bg = ham.spec, ham.bg
        m = spec.labels.vad_e
        res = spec.e[m] - np.einsum("flm,kfl->kfm", bg.F_lin.conj(), spec.l[m])
        cross = np.einsum("kfm,kfl->fml", res, spec.l[m].conj()) / m.sum()
        scale = np.sqrt(np.mean(np.abs(spec.e[m]) ** 2) * np.mean(np.abs(spec.l[m]) ** 2))
        assert np.max(np.abs(cross)) <= 1e-10 * scale

    def test_residual_psd_and_structure(self, ham):
        bg = ham.bg
        ev = np.linalg.eigvalsh(bg.R_eres)
        tr = np.trace(bg.R_eres, axis1=1, axis2=2).real
        assert np.all(ev[:, 0] >= -1e-10 * tr)
        assert np.max(tr) > 0
        S = bg.stacked_res
        assert not np.any(S[:, 2:, :]) and not np.any(S[:, :, 2:])

    def test_split_sums_to_echo(self, ham):
        np.testing.assert_allclose(
            ham.bg.stacked_lin + ham.bg.stacked_res, ham.orc.stacked_ee,
            atol=1e-9 * np.abs(ham.orc.stacked_ee).max(),
        )


class TestSteering:
    def test_householder_basis(self, rng):
        h = cgauss(rng, 7, 4)
        B = householder_complement(h)
        assert np.max(np.abs(np.einsum("fi,fij->fj", h.conj(), B))) <= 1e-10
        np.testing.assert_allclose(np.conj(np.swapaxes(B, 1, 2)) @ B, np.broadcast_to(np.eye(3), (7, 3, 3)), atol=1e-12)

    def test_identical_rirs(self):
        sv = steering_true_rtf(np.ones((4, 2)), 2)
        np.testing.assert_allclose(np.einsum("fij->fj", sv.B), 0, atol=1e-14)
        assert sv.h_tilde.shape == (4, 4)
        assert not np.any(sv.h_tilde[:, 2:])

    def test_true_rtf_blocking(self, lin):
        sv = lin.sv
        assert np.max(np.abs(np.einsum("fi,fij->fj", sv.h.conj(), sv.B))) <= 1e-10
        np.testing.assert_array_equal(sv.h_tilde[:, 0], 1.0)

    def test_griffiths_jim_broadside(self):
        mics = room.DEFAULT_MICS
        src = (3.5, 1.85, 1.0)
        sv = steering_griffiths_jim(src, mics, L=2)
        np.testing.assert_allclose(sv.B[:, :, 0], np.broadcast_to([1 / np.sqrt(2), -1 / np.sqrt(2)], (257, 2)))
        np.testing.assert_allclose(sv.w_c, 0.5)
        assert sv.kind == filters.GRIFFITHS_JIM

    def test_griffiths_jim_endfire_delay(self):
        # 0.1 m along the axis is 4.66 samples at 16 kHz: rounded to 5 with a warning
        with pytest.warns(UserWarning, match="rounds delays"):
            sv = steering_griffiths_jim((2.0, 4.0, 1.0), room.DEFAULT_MICS, L=1)
        assert abs(sv.diagnostics["delay"][1]) == 5
        f = 100
        np.testing.assert_allclose(np.vdot(sv.h[f], sv.B[f, :, 0]), 0, atol=1e-12)

    def test_gevd_matches_true_rtf(self, lin):
        cs = compose(lin.orc, VadScalings.error_free())
        fb = mwf_ext(cs, "one")
        sv = steering_gevd(fb.extras["q"], 2)
        assert np.max(rel(sv.h, lin.h)) <= 1e-6
        assert np.max(sv.diagnostics["discarded"]) <= 1e-8
        assert not np.any(sv.h_tilde[:, 2:])

    def test_gevd_reference_vanishes(self):
        q = np.array([[0.0, 1.0, 0.0]])
        with pytest.raises(ValueError, match="bin 0"):
            steering_gevd(q, 2)


class TestGeic:
    def test_distortionless(self, ham):
        fb = geic_solve(compose(ham.orc, VadScalings()).R_alpha, ham.sv, 1.0, ham.orc.R_el, ham.orc.R_ll)
        resp = np.einsum("fd,fd->f", fb.weights.conj(), ham.sv.h_tilde)
        assert np.max(np.abs(resp - 1)) <= 1e-10

    @pytest.mark.parametrize("a_s", GRID)
    @pytest.mark.parametrize("a_e", GRID)
    def test_linear_echo_nulling(self, lin, a_s, a_e):
        v = VadScalings(alpha_s=a_s, alpha_e=a_e)
        fb = geic_solve(compose(lin.orc, v).R_alpha, lin.sv, a_e, lin.orc.R_el, lin.orc.R_ll)
        assert np.max(nulling_power(fb.weights, lin)) <= 1e-16

    def test_blocks_from_matrix(self, lin):
        v = VadScalings(alpha_s=0.5, alpha_e=0.5)
        R = compose(lin.orc, v).R_alpha
        a = geic_solve(R, lin.sv, 0.5, lin.orc.R_el, lin.orc.R_ll)
        b = geic_solve(R, lin.sv)
        assert np.max(rel(b.weights, a.weights)) <= 1e-8

    def test_white_noise_no_echo(self, rng):
        F, M, L = 4, 3, 1
        h = cgauss(rng, F, M)
        h /= h[:, :1]
        sv = steering_true_rtf(h, L)
        R = np.zeros((F, M + L, M + L), complex)
        R[:, :M, :M] = np.eye(M)
        R[:, M:, M:] = np.eye(L)
        fb = geic_solve(R, sv, 1.0, np.zeros((F, M, L)), np.broadcast_to(np.eye(L), (F, L, L)))
        np.testing.assert_allclose(fb.weights[:, :M], sv.w_c, atol=1e-12)
        np.testing.assert_allclose(fb.extras["a"], 0, atol=1e-12)

    def test_single_mic(self):
        sv = steering_true_rtf(np.ones((3, 1)), 1)
        R = np.broadcast_to(np.array([[2.0, 0.5], [0.5, 1.0]], complex), (3, 2, 2))
        fb = geic_solve(R, sv)
        # a = R_ll^{-1} R_le w_c
        np.testing.assert_allclose(fb.weights, np.broadcast_to([1.0, -0.5], (3, 2)))

    def test_singular_flagged(self, lin):
        R = compose(lin.orc, VadScalings()).R_alpha.copy()
        R[3, 2:, :] = 0
        R[3, :, 2:] = 0
        fb = geic_solve(R, lin.sv)
        assert fb.flagged[3] and fb.flagged.sum() == 1

    @pytest.mark.parametrize("setup", ["lin", "ham"])
    @pytest.mark.parametrize("a_e", GRID)
    def test_simplified_form(self, setup, a_e, request):
        st = request.getfixturevalue(setup)
        v = VadScalings(alpha_s=0.0, alpha_e=a_e)
        fb = geic_solve(compose(st.orc, v).R_alpha, st.sv, a_e, st.orc.R_el, st.orc.R_ll)
        wa = geic_wa_simplified(st.orc.R_nn, st.bg.R_eres, st.sv.B, st.sv.w_c, a_e)
        assert np.max(rel(fb.extras["w_a"], wa)) <= 1e-8

    def test_simplified_echo_term(self, ham):
        sv, bg, orc = ham.sv, ham.bg, ham.orc
        a = geic_wa_simplified(orc.R_nn, bg.R_eres, sv.B, sv.w_c, 0.0)
        b = geic_wa_simplified(orc.R_nn, 0 * bg.R_eres, sv.B, sv.w_c, 1.0)
        np.testing.assert_array_equal(a, b)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            filters.FilterBank(np.array([[np.nan]]), filters.GEIC, 1)


class TestPartition:
    def test_doubletalk_count(self, lin):
        fb = mwf_ext(compose(lin.orc, VadScalings.doubletalk()), "full")
        part = fb.extras["partition"]
        np.testing.assert_array_equal(part.count, 2)
        assert part.q1_indices(0).size == 2 and part.q2_indices(0).size == 2

    def test_no_echo_all_structured(self, rng):
        F, D = 3, 4
        A = cgauss(rng, F, D, D)
        Rb = A @ np.conj(np.swapaxes(A, 1, 2)) + np.eye(D)
        Rb[:, 2:, :2] = 0
        Rb[:, :2, 2:] = 0
        Rg = Rb.copy()
        Rg[:, :2, :2] = np.eye(2)
        g = linalg.gevd(Rb, Rg)
        # without echo Q is block diagonal: microphone columns carry no
        # loudspeaker mass and loudspeaker columns no microphone mass
        part = q2_partition(g, 2, 2)
        np.testing.assert_array_equal(part.count, 2)
        Q = g.Q
        for f in range(F):
            rest = part.q2_indices(f)
            assert np.linalg.norm(Q[f, :2][:, rest]) <= 1e-8 * np.linalg.norm(Q[f][:, rest])

    def test_mismatched_echo_warns(self, lin):
        cs = compose(lin.orc, VadScalings(beta_e=1.0, gamma_e=0.5))
        Rb = cs.R_beta.copy()
        # a different echo path in R_beta than in R_gamma
        Rb[:, :2, 2:] *= np.exp(0.7j)
        Rb[:, 2:, :2] *= np.exp(-0.7j)
        bent = stats.CorrelationSet(Rb, Rb, cs.R_gamma, 2, 2)
        with pytest.warns(StructureWarning, match="loudspeaker zero block"):
            mwf_ext(bent, "full")

    def test_count_warning(self, lin):
        cs = compose(lin.orc, VadScalings(beta_e=1.0, gamma_e=0.5))
        Rb = cs.R_beta.copy()
        Rb[:, :2, 2:] *= np.exp(0.7j)
        Rb[:, 2:, :2] *= np.exp(-0.7j)
        g = linalg.gevd(Rb, cs.R_gamma)
        with pytest.warns(StructureWarning, match="structured column count other than 2"):
            q2_partition(g, 2, 2)

    def test_error_free_is_quiet(self, lin):
        with warnings.catch_warnings():
            warnings.simplefilter("error", StructureWarning)
            mwf_ext(compose(lin.orc, VadScalings.error_free()), "full")


class TestMwf:
    def test_covariance_recovery_error_free(self, lin):
        fb = mwf_ext(compose(lin.orc, VadScalings.error_free()), "full")
        R = lin.orc.stacked_ss
        err = np.linalg.norm(fb.extras["R_hat"] - R, axis=(1, 2)) / np.linalg.norm(R, axis=(1, 2))
        assert np.max(err) <= 1e-8

    def test_covariance_recovery_doubletalk(self, ham):
        # under permanent doubletalk the residual echo is indistinguishable from speech
        v = VadScalings.doubletalk()
        fb = mwf_ext(compose(ham.orc, v), "full")
        target = ham.orc.stacked_ss + ham.bg.stacked_res
        err = np.linalg.norm(fb.extras["R_hat"] - target, axis=(1, 2)) / np.linalg.norm(target, axis=(1, 2))
        assert np.max(err) <= 1e-8

    def test_single_channel_wiener(self):
        Ps, Pn = np.array([1.0, 2.0, 0.5]), np.array([1.0, 0.5, 3.0])
        Z = np.zeros((3, 1, 1))
        orc = OracleCovariances(Ps[:, None, None], Pn[:, None, None], Z, np.zeros((3, 0, 0)), np.zeros((3, 1, 0)))
        fb = mwf_ext(compose(orc, VadScalings.error_free()), "full")
        np.testing.assert_allclose(fb.weights[:, 0], Ps / (Ps + Pn), rtol=1e-9)

    @pytest.mark.parametrize("rank", ["one", "full"])
    def test_linear_echo_nulling(self, lin, rank):
        worst = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StructureWarning)
            for bs in GRID:
                for be in (0.5, 1.0):  # beta_e = 0 leaves R_beta singular
                    for gs in GRID:
                        for ge in GRID:
                            v = VadScalings(beta_s=bs, beta_e=be, gamma_s=gs, gamma_e=ge)
                            fb = mwf_ext(compose(lin.orc, v), rank)
                            worst = max(worst, nulling_power(fb.weights, lin).max())
        assert worst <= 1e-16

    def test_no_loudspeaker_excitation_flagged(self, lin):
        # beta_e = 0 leaves R_beta without loudspeaker power: every bin is flagged
        v = VadScalings(beta_e=0.0, gamma_e=0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StructureWarning)
            fb = mwf_ext(compose(lin.orc, v), "one")
        assert fb.flagged.all()

    def test_echo_free_statistics_cannot_null(self, lin):
        # with beta_e = gamma_e = 0 the filter has never seen the echo
        v = VadScalings(beta_s=1.0, beta_e=0.0, gamma_s=0.0, gamma_e=0.0)
        fb = mwf_ext(compose(lin.orc, v), "one", warn=False)
        assert fb.flagged.all()
        assert nulling_power(fb.weights, lin).max() > 1e-3

    def test_column_phase_invariance(self, ham, monkeypatch):
        cs = compose(ham.orc, VadScalings.error_free())
        ref = mwf_ext(cs, "full")
        real = linalg.gevd

        def rotated(A, B):
            g = real(A, B)
            ph = np.exp(1j * np.arange(g.Q.shape[-1]) * 1.3) * -1
            return linalg.GevdResult(g.Q * ph[None, None, :], g.lambda_a, g.lambda_b)

        monkeypatch.setattr(linalg, "gevd", rotated)
        out = mwf_ext(cs, "full")
        assert np.max(rel(out.weights, ref.weights)) <= 1e-12

    def test_rank_argument(self, lin):
        with pytest.raises(ValueError):
            mwf_ext(compose(lin.orc, VadScalings()), "two")

    def test_tags(self, lin):
        cs = compose(lin.orc, VadScalings())
        assert mwf_ext(cs, "one").algorithm == filters.MWF_RANK1
        assert mwf_ext(cs, "full").algorithm == filters.MWF_FULL


class TestDecomposition:
    @pytest.mark.parametrize("setup", ["lin", "ham"])
    @pytest.mark.parametrize("preset", ["doubletalk", "error_free"])
    def test_cascade_identity(self, setup, preset, request):
        st = request.getfixturevalue(setup)
        v = VadScalings.from_name(preset)
        cs = compose(st.orc, v)
        fb = mwf_ext(cs, "full")
        br = decompose_mwf(cs, st.orc, st.bg, v, st.sv)
        assert np.max(rel(br.reconstructed, fb.weights)) <= 1e-8
        total = br.P_ys + br.P_yn + br.P_yeres
        assert np.all(br.P_yelin <= 1e-10 * (total + np.finfo(float).eps))

    def test_linear_residual_branch_vanishes(self, rng):
        # echo exactly linear per bin, so R_eres = 0
        F, M, L, K = 6, 2, 2, 3000
        l = cgauss(rng, K, F, L)
        G = cgauss(rng, F, L, M)
        e = np.einsum("flm,kfl->kfm", G.conj(), l)
        h = np.concatenate([np.ones((F, 1)), cgauss(rng, F, 1)], axis=1)
        s = cgauss(rng, K, F, 1) * h[None]
        ones = np.ones(K, bool)
        spec = stats.ComponentSpectra(s, cgauss(rng, K, F, M), e, l, stats.ActivityLabels(ones, ones))
        orc = stats.rank1_speech(stats.batch_covariances(spec), h)
        bg = bussgang(orc)
        v = VadScalings.doubletalk()
        cs = compose(orc, v)
        br = decompose_mwf(cs, orc, bg, v, steering_true_rtf(h, L))
        scale = np.linalg.norm(br.geic_part, axis=1)
        assert np.max(np.linalg.norm(br.residual_branch, axis=1) / scale) <= 1e-8
        assert np.max(rel(br.reconstructed, mwf_ext(cs, "full").weights)) <= 1e-8

    @pytest.mark.parametrize("setup", ["lin", "ham"])
    @pytest.mark.parametrize("preset", ["doubletalk", "error_free"])
    def test_rank_one_identity(self, setup, preset, request):
        st = request.getfixturevalue(setup)
        cs = compose(st.orc, VadScalings.from_name(preset))
        br, ref = decompose_mwf_rank1(cs)
        assert np.max(rel(br.reconstructed, ref.weights)) <= 1e-8
        assert br.steering.kind == filters.GEVD_RTF
