"""Echo-path linearisation, GEIC and GEVD-based extended MWF designs.

Every design works on a stack of bins at once: matrices are ``(F, D, D)``
and filters ``(F, D)`` with ``D = M + L`` (microphones first). Filters are
applied as ``w^H m~``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .linalg import REG_DELTA, hermitize, regularize
from .room import SPEED_OF_SOUND
from .stft import WindowSpec

TRUE_RTF = "true_rtf"
GRIFFITHS_JIM = "griffiths_jim"
GEVD_RTF = "gevd_rtf"

GEIC = "GEIC"
GEIC_GJ = "GEIC_GJ"
GEIC_GEVD = "GEIC_GEVD"
MWF_RANK1 = "MWFext_rank1"
MWF_FULL = "MWFext_full"
ALGORITHMS = (GEIC, GEIC_GJ, GEIC_GEVD, MWF_RANK1, MWF_FULL)

STRUCTURE_TOL = 1e-8


class StructureWarning(UserWarning):
    """The generalised eigenvectors do not show the expected loudspeaker zero block."""


def _h(X):
    return np.conj(np.swapaxes(X, -1, -2))


def _solve(H, b, delta):
    """Hermitian solve, regularising only the singular bins; returns the solution and their flags."""
    flagged = ~linalg.is_positive_definite(H)
    if flagged.any():
        H = H.copy()
        H[flagged] = regularize(H[flagged], delta)
        # an all-zero block has no trace to scale the load with
        empty = flagged & ~linalg.is_positive_definite(H)
        H[empty] += delta * np.eye(H.shape[-1])
    return linalg.solve_hermitian(H, b), flagged


def _quad(w, R):
    """Real ``w^H R w`` per bin."""
    return np.einsum("fi,fij,fj->f", w.conj(), R, w).real


# --- Bussgang -------------------------------------------------------------

@dataclass(frozen=True)
class BussgangModel:
    F_lin: np.ndarray    # (F, L, M)
    R_eres: np.ndarray   # (F, M, M)
    R_ll: np.ndarray     # (F, L, L)
    flagged: np.ndarray  # (F,) R_ll was singular and got regularised

    @property
    def M(self):
        return self.R_eres.shape[-1]

    @property
    def L(self):
        return self.R_ll.shape[-1]

    @property
    def stacked_lin(self):
        """``[[F^H R_ll F, F^H R_ll], [R_ll F, R_ll]]``."""
        RF = self.R_ll @ self.F_lin
        top = np.concatenate([_h(self.F_lin) @ RF, _h(RF)], axis=-1)
        bottom = np.concatenate([RF, self.R_ll], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    @property
    def stacked_res(self):
        F, M, L = self.R_eres.shape[0], self.M, self.L
        out = np.zeros((F, M + L, M + L), complex)
        out[:, :M, :M] = self.R_eres
        return out

    def linear_echo(self, l):
        """Stacked linear-echo snapshots ``[F^H l; l]`` for ``l`` of shape (..., F, L)."""
        e = np.einsum("flm,...fl->...fm", self.F_lin.conj(), l)
        return np.concatenate([e, l], axis=-1)


def bussgang(oracle, delta=REG_DELTA):
    """``F_lin = R_ll^{-1} R_le`` and ``R_eres = R_ee - F_lin^H R_ll F_lin``."""
    R_le = _h(oracle.R_el)
    F_lin, flagged = _solve(oracle.R_ll, R_le, delta)
    R_eres = hermitize(oracle.R_ee - _h(F_lin) @ oracle.R_ll @ F_lin)
    return BussgangModel(F_lin, R_eres, oracle.R_ll, flagged)


# --- steering ---------------------------------------------------------------

@dataclass(frozen=True)
class SteeringVariant:
    kind: str
    h_tilde: np.ndarray  # (F, M + L)
    B: np.ndarray        # (F, M, M - 1)
    w_c: np.ndarray      # (F, M)
    L: int
    # GEVD_RTF: relative loudspeaker mass removed from q before normalising;
    # GRIFFITHS_JIM: per-microphone fractional steering error in samples
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.w_c.shape[-1]

    @property
    def h(self):
        return self.h_tilde[:, :self.M]


def householder_complement(h):
    """Orthonormal basis ``(F, M, M-1)`` of the orthogonal complement of each ``h[f]``."""
    h = np.asarray(h, complex)
    F, M = h.shape
    u = h / np.linalg.norm(h, axis=1, keepdims=True)
    phase = np.exp(1j * np.angle(u[:, 0]))
    v = u.copy()
    v[:, 0] += phase
    P = np.eye(M) - 2 * np.einsum("fi,fj->fij", v, v.conj()) / np.sum(np.abs(v) ** 2, axis=1)[:, None, None]
    # P is unitary and Hermitian with P e_1 parallel to u, so its other columns span u's complement
    return P[:, :, 1:]


def _from_rtf(kind, h, L, diagnostics=None):
    h = np.asarray(h, complex)
    w_c = h / np.sum(np.abs(h) ** 2, axis=1, keepdims=True)
    h_tilde = np.concatenate([h, np.zeros((h.shape[0], L), complex)], axis=1)
    return SteeringVariant(kind, h_tilde, householder_complement(h), w_c, L, diagnostics or {})


def steering_true_rtf(h, L):
    """Ground-truth RTF steering with a perfect (Householder) blocking matrix."""
    return _from_rtf(TRUE_RTF, h, L)


def steering_griffiths_jim(source, mics, L, reference_mic=0, fs=16000, w=WindowSpec()):
    """Delay-and-sum steering from the angle of arrival with a Griffiths-Jim blocking matrix.

    The far-field direction from the array centre towards ``source`` sets the
    inter-microphone delays, which are rounded to whole samples. ``B`` takes
    adjacent-channel differences of the time-aligned signals.
    """
    mics = np.atleast_2d(np.asarray(mics, float))
    M = mics.shape[0]
    centre = mics.mean(axis=0)
    u = np.asarray(source, float) - centre
    u /= np.linalg.norm(u)
    # a plane wave from direction u reaches mic m (mic_m - mic_r).u / c earlier than the reference
    tau = -(mics - mics[reference_mic]) @ u / SPEED_OF_SOUND * fs
    n = np.round(tau)
    frac = np.abs(tau - n)
    if np.any(frac > 0.25):
        warnings.warn(f"Griffiths-Jim steering rounds delays by up to {frac.max():.2f} samples")
    f = np.arange(w.n_bins)
    h = np.exp(-2j * np.pi * np.outer(f, n) / w.length)
    B0 = np.zeros((M, M - 1))
    for i in range(M - 1):
        B0[i, i], B0[i + 1, i] = 1 / np.sqrt(2), -1 / np.sqrt(2)
    B = h[:, :, None] * B0[None]
    w_c = h / M
    h_tilde = np.concatenate([h, np.zeros((w.n_bins, L), complex)], axis=1)
    return SteeringVariant(GRIFFITHS_JIM, h_tilde, B, w_c, L, {"fractional_delay": frac, "delay": n})


def steering_gevd(q, M, reference_mic=0):
    """RTF estimate ``q / q[r]`` from the leading structured generalised eigenvector.

    The loudspeaker entries of ``q`` are zeroed; their relative magnitude is
    kept in ``diagnostics['discarded']``.
    """
    q = np.asarray(q, complex)
    L = q.shape[1] - M
    norm = np.linalg.norm(q, axis=1)
    qr = q[:, reference_mic]
    bad = np.abs(qr) <= 1e-12 * norm
    if np.any(bad):
        raise ValueError(f"reference entry of the eigenvector vanishes at bin {int(np.flatnonzero(bad)[0])}")
    discarded = np.linalg.norm(q[:, M:], axis=1) / norm
    h = q[:, :M] / qr[:, None]
    return _from_rtf(GEVD_RTF, h, L, {"discarded": discarded})


# --- filter banks -----------------------------------------------------------

@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray  # (F, D) or (K, F, D)
    algorithm: str
    M: int
    flagged: np.ndarray = None  # (F,) bins that needed regularisation
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ValueError(f"{self.algorithm} filter has non-finite weights")

    @property
    def D(self):
        return self.weights.shape[-1]

    @property
    def L(self):
        return self.D - self.M


def _mic_block(R, M):
    return R[:, :M, :M]


def geic_solve(R_alpha, sv, alpha_e=1.0, R_el=None, R_ll=None, delta=REG_DELTA, algorithm=GEIC):
    """Closed-form GEIC ``[w_c - B w_a; -a]``.

    With oracle echo blocks ``R_el``, ``R_ll`` the echo term is
    ``alpha_e R_el R_ll^{-1} R_le``. Without them the cross and loudspeaker
    blocks of ``R_alpha`` itself are used, which is the same quantity when
    ``R_alpha`` has the oracle block structure.
    """
    R = np.asarray(R_alpha, complex)
    M = sv.M
    R_mm = _mic_block(R, M)
    if R_el is None:
        C = R[:, :M, M:]           # alpha_e R_el
        G, flag_l = _solve(R[:, M:, M:], _h(C), delta)   # R_ll^{-1} R_le
        E = C @ G
    else:
        G, flag_l = _solve(R_ll, _h(R_el), delta)
        E = alpha_e * R_el @ G
    Rm = hermitize(R_mm - E)
    B, w_c = sv.B, sv.w_c
    if M > 1:
        S = hermitize(_h(B) @ Rm @ B)
        rhs = np.einsum("fji,fjk,fk->fi", B.conj(), Rm, w_c)
        w_a, flag_s = _solve(S, rhs, delta)
        mic = w_c - np.einsum("fij,fj->fi", B, w_a)
    else:
        w_a = np.zeros((R.shape[0], 0), complex)
        flag_s = np.zeros(R.shape[0], bool)
        mic = w_c
    a = np.einsum("flm,fm->fl", G, mic)
    weights = np.concatenate([mic, -a], axis=1)
    return FilterBank(weights, algorithm, M, flag_l | flag_s, {"w_a": w_a, "a": a})


def geic_wa_simplified(R_nn, R_eres, B, w_c, alpha_e, delta=REG_DELTA):
    """``w_a = (B^H Q B)^{-1} B^H Q w_c`` with ``Q = R_nn + alpha_e R_eres``."""
    Q = hermitize(R_nn + alpha_e * R_eres)
    S = hermitize(_h(B) @ Q @ B)
    rhs = np.einsum("fji,fjk,fk->fi", B.conj(), Q, w_c)
    return _solve(S, rhs, delta)[0]


@dataclass(frozen=True)
class Q2Partition:
    q1: np.ndarray            # (F, D) bool, columns treated as [Q1; 0]
    structured: np.ndarray    # (F, D) bool, trailing mass within tolerance
    trailing: np.ndarray      # (F, D) relative loudspeaker mass per column

    @property
    def count(self):
        return self.structured.sum(axis=1)

    def q1_indices(self, f):
        return np.flatnonzero(self.q1[f])

    def q2_indices(self, f):
        return np.flatnonzero(~self.q1[f])


def q2_partition(g, M, L, rank_R=None, tol=STRUCTURE_TOL, warn=True):
    """Split generalised eigenvectors into the structured block and the rest.

    A column is structured when its last ``L`` entries have norm at most
    ``tol`` times the column norm. The ``M`` columns with the smallest
    relative loudspeaker mass (ties in ratio order) form ``Q1``, so estimated
    pencils whose structure is only approximate still yield ``M`` columns.
    A :class:`StructureWarning` reports bins whose structured count differs
    from ``rank_R`` (default ``M``).
    """
    Q = g.Q
    trailing = np.linalg.norm(Q[:, M:, :], axis=1) / np.linalg.norm(Q, axis=1)
    structured = trailing <= tol
    order = np.argsort(trailing, axis=1, kind="stable")
    q1 = np.zeros_like(structured)
    np.put_along_axis(q1, order[:, :M], True, axis=1)
    expected = M if rank_R is None else rank_R
    count = structured.sum(axis=1)
    off = np.flatnonzero(count != expected)
    if warn and off.size:
        warnings.warn(
            f"{off.size} bins have a structured column count other than {expected} "
            f"(bin {int(off[0])}: {int(count[off[0]])})", StructureWarning, stacklevel=2,
        )
    return Q2Partition(q1, structured, trailing)


def channel_scale(cs):
    """Per-bin equilibration: loudspeaker channels rescaled to the mean microphone power.

    Returns ``s`` of shape ``(F, D)`` (ones on the microphones) such that
    ``diag(s) R diag(s)`` has comparable microphone and loudspeaker power.
    """
    M = cs.M
    p = np.real(np.diagonal(cs.R_beta, axis1=1, axis2=2) + np.diagonal(cs.R_gamma, axis1=1, axis2=2))
    pm = p[:, :M].mean(axis=1, keepdims=True)
    s = np.ones_like(p)
    pl = p[:, M:]
    s[:, M:] = np.where((pl > 0) & (pm > 0), np.sqrt(pm / np.where(pl > 0, pl, 1.0)), 1.0)
    return s


@dataclass(frozen=True)
class LoadedPencil:
    R_beta: np.ndarray
    R_gamma: np.ndarray
    load: np.ndarray     # (F, D, D) diagonal loading added to both matrices
    scale: np.ndarray    # (F, D) equilibration
    flagged: np.ndarray  # (F,) R_beta singular before the loudspeaker fallback


def load_pencil(cs, delta=REG_DELTA):
    """Common diagonal loading of ``R_beta`` and ``R_gamma``.

    The load ``delta * trace / D`` (trace of the equilibrated ``R_beta``)
    goes on the microphone diagonal of both matrices: it leaves their
    difference unchanged and, having zero loudspeaker blocks, it does not
    disturb the loudspeaker zero structure. Bins where ``R_beta`` is still
    not positive definite also get the equilibrated load on the loudspeaker
    diagonal and are flagged.
    """
    M, D = cs.M, cs.D
    s = channel_scale(cs)
    Rs = cs.R_beta * s[:, :, None] * s[:, None, :]
    ell = delta * np.trace(Rs, axis1=1, axis2=2).real / D
    diag = np.zeros(s.shape)
    diag[:, :M] = ell[:, None]
    Rb = cs.R_beta + _diag(diag)
    bad = ~linalg.is_positive_definite(Rb)
    if bad.any():
        diag[bad, M:] = ell[bad, None] / s[bad, M:] ** 2
        Rb = cs.R_beta + _diag(diag)
    Lam = _diag(diag)
    return LoadedPencil(hermitize(Rb), hermitize(cs.R_gamma + Lam), Lam, s, bad)


def _diag(d):
    return d[:, :, None] * np.eye(d.shape[1])


def mwf_ext(cs, rank="one", reference_mic=0, delta=REG_DELTA, warn=True):
    """GEVD-based extended MWF ``w = R_beta^{-1} R^_s~s~ t_r``.

    ``R^_s~s~ = Q diag(lambda_beta - lambda_gamma on Q1, 0 on Q2) Q^H``;
    ``rank="one"`` keeps only the largest-ratio structured pair. Negative
    eigenvalue differences are kept.

    Both matrices get the common load of :func:`load_pencil`. The pencil is
    whitened with ``R_beta``, so ``R_gamma`` only has to be positive
    semidefinite: with a microphone-only VAD it carries no loudspeaker
    excitation at all. The returned decomposition is renormalised to
    ``lambda_gamma = 1``. The structure test runs on the equilibrated
    eigenvectors.
    """
    if rank not in ("one", "full"):
        raise ValueError("rank must be 'one' or 'full'")
    M, L = cs.M, cs.L
    lp = load_pencil(cs, delta)
    s, Rb, Rg = lp.scale, lp.R_beta, lp.R_gamma
    # Q'^H R_beta Q' = I, R_gamma = Q' diag(mu) Q'^H; ratio lambda_beta / lambda_gamma = 1 / mu
    gi = linalg.gevd(Rg, Rb)
    mu = np.maximum(gi.lambda_a, np.finfo(float).tiny)
    order = np.argsort(mu, axis=1, kind="stable")
    Qp = np.take_along_axis(gi.Q, order[:, None, :], axis=2)
    mu = np.take_along_axis(mu, order, axis=1)
    part = q2_partition(linalg.GevdResult(Qp * s[:, :, None], 1.0 / mu, np.ones_like(mu)), M, L, warn=False)
    keep = part.q1.copy()
    # unit-ratio columns carry no speech estimate; their span is degenerate
    # when the two regimes share most of their power, so only the others
    # are required to be structured
    live = np.abs(1.0 - mu) > 1e-8
    bad = np.flatnonzero(np.any(keep & live & ~part.structured, axis=1))
    if warn and bad.size:
        warnings.warn(
            f"{bad.size} bins keep generalised eigenvectors without the loudspeaker zero block "
            f"(bin {int(bad[0])}, trailing mass {part.trailing[bad[0]][keep[bad[0]]].max():.1e})",
            StructureWarning, stacklevel=2,
        )
    if rank == "one":
        first = np.argmax(keep, axis=1)  # columns are in ratio order
        keep[:] = False
        keep[np.arange(keep.shape[0]), first] = True
    # (lambda_beta - lambda_gamma) q q^H with q = sqrt(mu) q' equals (1 - mu) q' q'^H
    d = np.where(keep, 1.0 - mu, 0.0)
    R_hat = hermitize(np.einsum("fik,fk,fjk->fij", Qp, d, Qp.conj()))
    w = linalg.solve_hermitian(Rb, R_hat[:, :, reference_mic])
    g = linalg.GevdResult(Qp * np.sqrt(mu)[:, None, :], 1.0 / mu, np.ones_like(mu))
    tag = MWF_RANK1 if rank == "one" else MWF_FULL
    top = np.argmax(keep, axis=1)
    q = g.Q[np.arange(g.Q.shape[0]), :, top]
    extras = {"R_hat": R_hat, "gevd": g, "partition": part, "kept": keep, "q": q, "pencil": lp}
    return FilterBank(w, tag, M, lp.flagged, extras)


# --- GEIC / MWF relations ---------------------------------------------------

@dataclass(frozen=True)
class PostfilterBreakdown:
    geic_part: np.ndarray        # (F, D)
    postfilter_gain: np.ndarray  # (F,)
    residual_branch: np.ndarray  # (F, D)
    P_ys: np.ndarray
    P_yn: np.ndarray
    P_yeres: np.ndarray
    P_yelin: np.ndarray

    @property
    def reconstructed(self):
        return self.geic_part * self.postfilter_gain[:, None] + self.residual_branch


def decompose_mwf(cs, oracle, bg, v, sv, reference_mic=0, delta=REG_DELTA):
    """GEIC-plus-postfilter form of the full-rank MWF in oracle mode.

    ``w_MWF = w_GEIC^beta (b_s - g_s) P_ys / (b_s P_ys + P_yn + b_e P_yeres)
    + R_beta^{-1} (b_e - g_e) R_e~res e~res t_r``, with the GEIC computed from
    ``R_beta`` and the true steering ``sv``. ``oracle`` must carry a rank-one
    ``R_ss`` for the identity to be exact. The diagonal load of the pencil
    has a zero loudspeaker block and is booked as noise.
    """
    lp = load_pencil(cs, delta)
    geic = geic_solve(lp.R_beta, sv, v.beta_e, oracle.R_el, oracle.R_ll, delta)
    w = geic.weights
    P_ys = _quad(w, oracle.stacked_ss)
    P_yn = _quad(w, oracle.stacked_nn + lp.load)
    P_yeres = _quad(w, bg.stacked_res)
    P_yelin = _quad(w, bg.stacked_lin)
    gain = (v.beta_s - v.gamma_s) * P_ys / (v.beta_s * P_ys + P_yn + v.beta_e * P_yeres)
    rhs = (v.beta_e - v.gamma_e) * bg.stacked_res[:, :, reference_mic]
    residual = linalg.solve_hermitian(lp.R_beta, rhs)
    return PostfilterBreakdown(w, gain, residual, P_ys, P_yn, P_yeres, P_yelin)


@dataclass(frozen=True)
class Rank1Breakdown:
    geic_part: np.ndarray        # (F, D), GEIC steered by h_GEVD
    postfilter_gain: np.ndarray  # (F,)
    P_ys: np.ndarray
    P_yi: np.ndarray
    steering: SteeringVariant

    @property
    def reconstructed(self):
        return self.geic_part * self.postfilter_gain[:, None]


def decompose_mwf_rank1(cs, reference_mic=0, delta=REG_DELTA):
    """Rank-one MWF as ``GEIC(h_GEVD) * P_s / (P_s + P_i)``.

    ``R^_s = (lambda_beta - lambda_gamma) q q^H`` for the retained pair and
    ``R^_i = R_beta - R^_s``; the GEIC uses the blocks of ``R_beta``.
    Returns the breakdown and the directly computed rank-one filter bank.
    """
    ref = mwf_ext(cs, "one", reference_mic, delta, warn=False)
    q, Rb = ref.extras["q"], ref.extras["pencil"].R_beta
    R_s = ref.extras["R_hat"]
    R_i = hermitize(Rb - R_s)
    sv = steering_gevd(q, cs.M, reference_mic)
    geic = geic_solve(Rb, sv, delta=delta, algorithm=GEIC_GEVD)
    w = geic.weights
    P_s, P_i = _quad(w, R_s), _quad(w, R_i)
    return Rank1Breakdown(w, P_s / (P_s + P_i), P_s, P_i, sv), ref
