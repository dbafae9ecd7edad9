"""Band-weighted evaluation: SNR improvement, ERLE and speech distortion.

Every metric is computed per third-octave band from STFT band powers over
the frames where the relevant ground-truth component is active, then
combined with a :class:`BandWeights` table. Half a window at each end of the
signal is discarded. The outputs of a filter are obtained by shadow
filtering: each isolated component is passed through the same filter bank
as the mixture.
"""

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .stft import WindowSpec, analyze, apply_filterbank, frame_activity, synthesize

CAP_DB = 120.0
THIRD_OCTAVE_CENTERS = (
    160, 200, 250, 315, 400, 500, 630, 800, 1000, 1250,
    1600, 2000, 2500, 3150, 4000, 5000, 6300, 8000,
)


@dataclass(frozen=True)
class BandWeights:
    centers: np.ndarray  # Hz
    weights: np.ndarray  # sum to one

    def __post_init__(self):
        c = np.asarray(self.centers, float)
        wt = np.asarray(self.weights, float)
        if c.shape != wt.shape or c.ndim != 1 or c.size == 0:
            raise ValueError("centers and weights must be equal-length 1-D arrays")
        if np.any(wt < 0):
            raise ValueError("band weights must be non-negative")
        if wt.sum() <= 0:
            raise ValueError("band weights sum to zero")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", wt / wt.sum())

    @classmethod
    def uniform(cls, centers=THIRD_OCTAVE_CENTERS):
        return cls(np.asarray(centers, float), np.ones(len(centers)))

    @classmethod
    def from_table(cls, path):
        """Read ``center_hz weight`` lines; ``#`` starts a comment."""
        with open(path, encoding="utf-8") as fh:
            return cls._parse(fh.read(), str(path))

    @classmethod
    def speech_importance(cls):
        """The shipped third-octave importance table."""
        text = resources.files("aecnr").joinpath("data/band_importance.txt").read_text("utf-8")
        return cls._parse(text, "band_importance.txt")

    @classmethod
    def from_name(cls, name):
        if name == "uniform":
            return cls.uniform()
        if name == "speech":
            return cls.speech_importance()
        return cls.from_table(name)

    @classmethod
    def _parse(cls, text, origin):
        rows = []
        for i, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{origin}:{i}: expected 'center_hz weight', got {line!r}")
            rows.append((float(parts[0]), float(parts[1])))
        if not rows:
            raise ValueError(f"{origin}: no bands")
        c, wt = np.array(rows).T
        return cls(c, wt)

    def edges(self, fs):
        """Lower and upper band edges (a sixth of an octave either side), clipped to Nyquist."""
        lo = self.centers * 2 ** (-1 / 6)
        hi = np.minimum(self.centers * 2 ** (1 / 6), fs / 2)
        return lo, hi

    def bin_map(self, w, fs):
        """Boolean ``(bands, bins)`` membership of STFT bins.

        A bin belongs to the band whose centre is nearest on a log scale,
        provided it lies inside that band's edges; the top band extends to
        Nyquist. Nominal centres overlap slightly, so no bin is counted twice.
        """
        f = w.frequencies(fs)
        lo, hi = self.edges(fs)
        upper = np.where(hi >= fs / 2, np.inf, hi)
        inside = (f[None, :] >= lo[:, None]) & (f[None, :] < upper[:, None])
        with np.errstate(divide="ignore"):
            dist = np.abs(np.log(f[None, :]) - np.log(self.centers[:, None]))
        nearest = np.argmin(np.where(inside, dist, np.inf), axis=0)
        return inside & (np.arange(self.centers.size)[:, None] == nearest[None, :])


@dataclass(frozen=True)
class BandMetric:
    db: float
    per_band: np.ndarray   # dB per band, NaN where excluded
    excluded: np.ndarray   # bool per band

    def __float__(self):
        return float(self.db)

    @property
    def flagged(self):
        return bool(self.excluded.any())


@dataclass(frozen=True)
class MetricsReport:
    delta_snr_i: float
    erle_i: float
    sd_i: float
    algorithm: str = ""
    scenario_id: int = 0
    echo_path: str = ""
    details: dict = field(default_factory=dict, compare=False)


def evaluation_frames(mask, w=WindowSpec()):
    """Frames whose samples are mostly active, ignoring half a window at either end."""
    m = np.array(mask, bool)
    half = w.length // 2
    m[:half] = False
    m[max(m.shape[0] - half, 0):] = False
    return frame_activity(m, w, threshold=0.5)


def band_powers(x, mask, bands, w=WindowSpec(), fs=16000):
    """Mean STFT power per band over the active evaluation frames of ``x``."""
    frames = evaluation_frames(mask, w)
    if not frames.any():
        raise ValueError("no active frames to evaluate")
    X = analyze(np.asarray(x, float), w)
    P = np.mean(np.abs(X[frames]) ** 2, axis=0)
    return bands.bin_map(w, fs).astype(float) @ P


def _combine(per_band, excluded, bands):
    keep = ~excluded
    if not keep.any():
        raise ValueError("every band was excluded")
    wt = bands.weights * keep
    wt = wt / wt.sum()
    vals = np.where(keep, per_band, np.nan)
    return BandMetric(float(np.sum(wt[keep] * per_band[keep])), vals, excluded)


def _db(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.clip(10 * np.log10(num / den), -CAP_DB, CAP_DB)


def delta_snr_i(s_in, n_in, s_out, n_out, mask, bands=None, w=WindowSpec(), fs=16000):
    """Band-weighted SNR improvement over the speech-active region, in dB.

    Bands without speech or noise power at the input are excluded and the
    remaining weights renormalised. Output band SNRs saturate at the cap.
    """
    bands = BandWeights.uniform() if bands is None else bands
    Ps_i, Pn_i, Ps_o, Pn_o = (band_powers(x, mask, bands, w, fs) for x in (s_in, n_in, s_out, n_out))
    excluded = (Ps_i <= 0) | (Pn_i <= 0)
    snr_in = _db(Ps_i, Pn_i)
    snr_out = np.where((Ps_o <= 0) & (Pn_o <= 0), snr_in, _db(Ps_o, Pn_o))
    return _combine(snr_out - snr_in, excluded, bands)


def erle_i(e_in, e_out, mask, bands=None, w=WindowSpec(), fs=16000):
    """Band-weighted echo power reduction over the echo-active region, each band capped at 120 dB."""
    bands = BandWeights.uniform() if bands is None else bands
    P_in = band_powers(e_in, mask, bands, w, fs)
    if not np.any(P_in > 0):
        raise ValueError("input echo has no power; ERLE is undefined")
    P_out = band_powers(e_out, mask, bands, w, fs)
    return _combine(_db(P_in, P_out), P_in <= 0, bands)


def sd_i(s_ref, s_out, mask, bands=None, w=WindowSpec(), fs=16000):
    """Band-weighted distortion-to-speech ratio ``P(s_out - s_ref) / P(s_ref)`` in dB.

    Attenuation counts as distortion. Perfect reproduction saturates at -120 dB.
    """
    bands = BandWeights.uniform() if bands is None else bands
    s_ref = np.asarray(s_ref, float)
    P_ref = band_powers(s_ref, mask, bands, w, fs)
    if not np.any(P_ref > 0):
        raise ValueError("reference speech has no power; SD is undefined")
    P_d = band_powers(np.asarray(s_out, float) - s_ref, mask, bands, w, fs)
    return _combine(_db(P_d, P_ref), P_ref <= 0, bands)


@dataclass(frozen=True)
class ShadowOutputs:
    s: np.ndarray
    n: np.ndarray
    e: np.ndarray
    mixture: np.ndarray
    e_lin: np.ndarray = None
    e_res: np.ndarray = None


def shadow_filter(comp, fb, bussgang=None, w=WindowSpec()):
    """Filter every component separately with the filter bank the mixture saw.

    ``fb`` is a :class:`~aecnr.filters.FilterBank` or a raw weight array,
    static ``(bins, D)`` or per-frame ``(frames, bins, D)``. With a
    Bussgang model the echo is also split into its linear and residual
    parts per bin.
    """
    W = np.asarray(getattr(fb, "weights", fb))
    M, L = comp.s.shape[1], comp.l.shape[1]
    if W.shape[-1] != M + L:
        raise ValueError(f"filter has {W.shape[-1]} channels, components have {M}+{L}")
    n = comp.s.shape[0]
    S, N, E, Lx = (analyze(x, w) for x in (comp.s, comp.n, comp.e, comp.l))
    if W.ndim == 3 and W.shape[0] != S.shape[0]:
        raise ValueError(f"filter sequence has {W.shape[0]} frames, signals have {S.shape[0]}")
    Z = np.zeros_like(Lx)

    def out(mic, ls):
        return synthesize(apply_filterbank(np.concatenate([mic, ls], axis=-1), W), w, n)

    extra = {}
    if bussgang is not None:
        E_lin = np.einsum("flm,kfl->kfm", bussgang.F_lin.conj(), Lx)
        extra = {"e_lin": out(E_lin, Lx), "e_res": out(E - E_lin, Z)}
    return ShadowOutputs(
        s=out(S, Z), n=out(N, Z), e=out(E, Lx), mixture=out(S + N + E, Lx), **extra,
    )


def evaluate(comp, shadow, bands=None, reference_mic=0, w=WindowSpec(), fs=16000, **tags):
    """The metric triplet for one filter, using ground-truth activity masks."""
    r = reference_mic
    snr = delta_snr_i(comp.s[:, r], comp.n[:, r], shadow.s, shadow.n, comp.activity_s, bands, w, fs)
    erle = erle_i(comp.e[:, r], shadow.e, comp.activity_e, bands, w, fs)
    sd = sd_i(comp.s[:, r], shadow.s, comp.activity_s, bands, w, fs)
    return MetricsReport(
        snr.db, erle.db, sd.db, details={"delta_snr_i": snr, "erle_i": erle, "sd_i": sd}, **tags,
    )
