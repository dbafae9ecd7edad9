"""Correlation matrices of the stacked microphone/loudspeaker signal.

Two provenance modes are supported. In *oracle* mode the per-component
covariances are estimated from the isolated ground-truth components and then
combined with VAD-error scalings, so the analytical identities of the filter
designs can be checked exactly. In *streaming* mode the three regime matrices
are tracked recursively from the mixture using (possibly corrupted) activity
labels.

Matrices are stored per bin with shape ``(bins, D, D)`` where ``D = M + L``
for stacked quantities (microphones first, then loudspeakers).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import REG_DELTA, hermitize
from .stft import WindowSpec, analyze, frame_activity

ORACLE = "oracle"
STREAMING = "streaming"
FORGETTING = 0.995

# regime tables: which label combination updates which matrix
SEPARATE = "separate"   # distinct speech and echo VADs
MIC_ONLY = "mic_only"   # one VAD on the microphones; speech and echo not told apart
REGIMES = (SEPARATE, MIC_ONLY)


def _outer_mean(X, mask):
    """Average of ``x x^H`` over the frames selected by ``mask``; X is (K, F, D)."""
    Xs = X[mask]
    return np.einsum("kfi,kfj->fij", Xs, Xs.conj()) / Xs.shape[0]


def _cross_mean(X, Y, mask):
    return np.einsum("kfi,kfj->fij", X[mask], Y[mask].conj()) / int(mask.sum())


@dataclass(frozen=True)
class VadScalings:
    alpha_s: float = 1.0
    alpha_e: float = 1.0
    beta_s: float = 1.0
    beta_e: float = 1.0
    gamma_s: float = 0.0
    gamma_e: float = 0.0

    def __post_init__(self):
        for name in ("alpha_s", "alpha_e", "beta_s", "beta_e", "gamma_s", "gamma_e"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} is outside [0, 1]")

    @classmethod
    def doubletalk(cls):
        """Permanent doubletalk with an error-free VAD (speech and echo coincide)."""
        return cls(1.0, 1.0, 1.0, 1.0, 0.0, 0.0)

    @classmethod
    def error_free(cls):
        """Separate, error-free speech and echo VADs."""
        return cls(0.0, 1.0, 1.0, 1.0, 0.0, 1.0)

    @classmethod
    def from_name(cls, name):
        presets = {"doubletalk": cls.doubletalk, "error_free": cls.error_free}
        if name not in presets:
            raise ValueError(f"unknown VAD preset {name!r}, choose from {sorted(presets)}")
        return presets[name]()

    @property
    def alpha(self):
        return self.alpha_s, self.alpha_e

    @property
    def beta(self):
        return self.beta_s, self.beta_e

    @property
    def gamma(self):
        return self.gamma_s, self.gamma_e

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class ActivityLabels:
    vad_s: np.ndarray
    vad_e: np.ndarray
    source: str = "ground-truth"

    def __post_init__(self):
        s = np.asarray(self.vad_s, bool)
        e = np.asarray(self.vad_e, bool)
        if s.shape != e.shape or s.ndim != 1:
            raise ValueError("vad_s and vad_e must be 1-D and of equal length")
        object.__setattr__(self, "vad_s", s)
        object.__setattr__(self, "vad_e", e)

    @property
    def n_frames(self):
        return self.vad_s.shape[0]

    @classmethod
    def from_masks(cls, activity_s, activity_e, w=WindowSpec()):
        return cls(frame_activity(activity_s, w), frame_activity(activity_e, w))

    def regime_masks(self, regimes=SEPARATE):
        """Frames feeding ``R_alpha``, ``R_beta`` and ``R_gamma``."""
        s, e = self.vad_s, self.vad_e
        if regimes == SEPARATE:
            return {"alpha": ~s & e, "beta": s & e, "gamma": ~s & e}
        if regimes == MIC_ONLY:
            act = s | e
            return {"alpha": act, "beta": act, "gamma": ~act}
        raise ValueError(f"unknown regime table {regimes!r}, choose from {REGIMES}")


@dataclass(frozen=True)
class ComponentSpectra:
    """STFT of every ground-truth component, each ``(frames, bins, channels)``."""

    s: np.ndarray
    n: np.ndarray
    e: np.ndarray
    l: np.ndarray
    labels: ActivityLabels

    @classmethod
    def from_signals(cls, comp, w=WindowSpec()):
        return cls(
            analyze(comp.s, w), analyze(comp.n, w), analyze(comp.e, w), analyze(comp.l, w),
            ActivityLabels.from_masks(comp.activity_s, comp.activity_e, w),
        )

    @property
    def M(self):
        return self.s.shape[-1]

    @property
    def L(self):
        return self.l.shape[-1]

    @property
    def stacked(self):
        """Extended microphone tensor ``m~ = [s + n + e; l]``."""
        return np.concatenate([self.s + self.n + self.e, self.l], axis=-1)


@dataclass(frozen=True)
class OracleCovariances:
    R_ss: np.ndarray  # (F, M, M)
    R_nn: np.ndarray  # (F, M, M)
    R_ee: np.ndarray  # (F, M, M)
    R_ll: np.ndarray  # (F, L, L)
    R_el: np.ndarray  # (F, M, L)

    @property
    def M(self):
        return self.R_ss.shape[-1]

    @property
    def L(self):
        return self.R_ll.shape[-1]

    def _embed(self, R):
        F, M = R.shape[0], self.M
        out = np.zeros((F, M + self.L, M + self.L), complex)
        out[:, :M, :M] = R
        return out

    @property
    def stacked_ss(self):
        return self._embed(self.R_ss)

    @property
    def stacked_nn(self):
        return self._embed(self.R_nn)

    @property
    def stacked_ee(self):
        top = np.concatenate([self.R_ee, self.R_el], axis=-1)
        bottom = np.concatenate([np.conj(np.swapaxes(self.R_el, -1, -2)), self.R_ll], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


def batch_covariances(spec, labels=None):
    """Oracle component covariances from isolated components.

    Speech statistics average over speech-active frames, echo and loudspeaker
    statistics over echo-active frames, noise over all frames.
    """
    labels = spec.labels if labels is None else labels
    K = spec.s.shape[0]
    if labels.n_frames != K:
        raise ValueError(f"labels cover {labels.n_frames} frames, spectra have {K}")
    shapes = {x.shape[:2] for x in (spec.s, spec.n, spec.e, spec.l)}
    if len(shapes) != 1:
        raise ValueError("component tensors must share frames and bins")
    for name, mask, X in (("desired speech", labels.vad_s, spec.s), ("echo", labels.vad_e, spec.e)):
        if not mask.any():
            raise ValueError(f"{name} component has no active frames")
        if not np.any(X[mask]):
            raise ValueError(f"{name} component is zero over its active frames")
    every = np.ones(K, bool)
    return OracleCovariances(
        R_ss=hermitize(_outer_mean(spec.s, labels.vad_s)),
        R_nn=hermitize(_outer_mean(spec.n, every)),
        R_ee=hermitize(_outer_mean(spec.e, labels.vad_e)),
        R_ll=hermitize(_outer_mean(spec.l, labels.vad_e)),
        R_el=_cross_mean(spec.e, spec.l, labels.vad_e),
    )


def rank1_speech(oracle, h, reference_mic=0):
    """Replace ``R_ss`` by the point-source model ``phi_r h h^H`` (``phi_r = R_ss[r, r]``)."""
    h = np.asarray(h, complex)
    phi = oracle.R_ss[:, reference_mic, reference_mic].real
    return replace(oracle, R_ss=phi[:, None, None] * np.einsum("fi,fj->fij", h, h.conj()))


@dataclass(frozen=True)
class CorrelationSet:
    R_alpha: np.ndarray
    R_beta: np.ndarray
    R_gamma: np.ndarray
    M: int
    L: int
    provenance: str = ORACLE
    # names of matrices whose regime was never visited (streaming only)
    never_updated: tuple = field(default=())

    @property
    def D(self):
        return self.M + self.L


def compose(oracle, v):
    """Regime matrices ``x_s R_s~s~ + R_n~n~ + x_e R_e~e~`` for x in (alpha, beta, gamma)."""
    Rs, Rn, Re = oracle.stacked_ss, oracle.stacked_nn, oracle.stacked_ee

    def one(xs, xe):
        return xs * Rs + Rn + xe * Re

    return CorrelationSet(one(*v.alpha), one(*v.beta), one(*v.gamma), oracle.M, oracle.L, ORACLE)


def streaming_estimate(m_tilde, labels, M, forgetting=FORGETTING, regimes=SEPARATE,
                       delta=REG_DELTA, trajectory=False):
    """Recursive regime estimates ``R <- f R + (1 - f) x x^H``.

    Each matrix is updated only in the frames of its regime and starts from
    ``delta * I``. Returns the final :class:`CorrelationSet`; with
    ``trajectory=True`` also the per-frame ``(R_alpha, R_beta, R_gamma)``
    sequences, each ``(frames, bins, D, D)``.
    """
    X = np.asarray(m_tilde, complex)
    K, F, D = X.shape
    if labels.n_frames != K:
        raise ValueError(f"labels cover {labels.n_frames} frames, tensor has {K}")
    if not 0.0 < forgetting < 1.0:
        raise ValueError("forgetting factor must lie in (0, 1)")
    masks = labels.regime_masks(regimes)
    names = ("alpha", "beta", "gamma")
    R = {k: np.broadcast_to(delta * np.eye(D, dtype=complex), (F, D, D)).copy() for k in names}
    traj = {k: np.empty((K, F, D, D), complex) for k in names} if trajectory else None
    for k in range(K):
        snap = None
        for name in names:
            if masks[name][k]:
                if snap is None:
                    snap = np.einsum("fi,fj->fij", X[k], X[k].conj())
                R[name] *= forgetting
                R[name] += (1.0 - forgetting) * snap
            if trajectory:
                traj[name][k] = R[name]
    never = tuple(n for n in names if not masks[n].any())
    cs = CorrelationSet(R["alpha"], R["beta"], R["gamma"], M, D - M, STREAMING, never)
    if trajectory:
        return cs, (traj["alpha"], traj["beta"], traj["gamma"])
    return cs


def corrupt_labels(truth, miss_s=0.0, false_s=0.0, miss_e=0.0, false_e=0.0, seed=0):
    """Flip each frame label independently: active frames are missed with
    probability ``miss_*``, inactive frames falsely detected with ``false_*``."""
    for name, p in (("miss_s", miss_s), ("false_s", false_s), ("miss_e", miss_e), ("false_e", false_e)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} = {p} is not a probability")
    rng = np.random.default_rng(seed)

    def flip(x, miss, false):
        u = rng.random(x.shape[0])
        return np.where(x, u >= miss, u < false)

    return ActivityLabels(
        flip(truth.vad_s, miss_s, false_s), flip(truth.vad_e, miss_e, false_e), source="corrupted",
    )


def effective_scalings(spec, labels, regimes=SEPARATE):
    """Power-weighted inclusion fractions realised by ``labels``.

    For every regime matrix, the speech (echo) coefficient is the mean speech
    (stacked echo) power over the frames that feed the matrix, divided by the
    mean power over the truly active frames. Values are clipped to [0, 1];
    the unclipped fractions are returned alongside.
    """
    truth = spec.labels
    p_s = np.sum(np.abs(spec.s) ** 2, axis=(1, 2))
    p_e = np.sum(np.abs(spec.e) ** 2, axis=(1, 2)) + np.sum(np.abs(spec.l) ** 2, axis=(1, 2))
    ref_s = p_s[truth.vad_s].mean()
    ref_e = p_e[truth.vad_e].mean()
    raw = {}
    for name, mask in labels.regime_masks(regimes).items():
        if not mask.any():
            raw[name] = (0.0, 0.0)
            continue
        raw[name] = (p_s[mask].mean() / ref_s, p_e[mask].mean() / ref_e)
    c = {k: tuple(float(np.clip(x, 0.0, 1.0)) for x in v) for k, v in raw.items()}
    v = VadScalings(*c["alpha"], *c["beta"], *c["gamma"])
    return v, raw
