"""Acoustic scenario generation: randomised image method RIRs, surrogate
sources, echo paths and component-wise rendering at prescribed SNR/SER.

Every random draw goes through ``numpy.random.default_rng`` (PCG64) seeded
from the scenario seed, so a scenario is reproducible from its parameters.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .stft import WindowSpec

SPEED_OF_SOUND = 343.0
LINEAR = "linear"
HAMMERSTEIN = "hammerstein"
ECHO_PATHS = (LINEAR, HAMMERSTEIN)


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple = (5.0, 5.0, 3.0)
    reflection_coefficient: float = 0.15
    displacement_radius: float = 0.13
    rir_length: int = 128
    sample_rate: int = 16000

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return p.shape == (3,) and bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


DEFAULT_MICS = ((2.0, 1.9, 1.0), (2.0, 1.8, 1.0))


@dataclass
class Scenario:
    source_position: tuple
    speaker_positions: tuple
    noise_position: tuple
    mic_positions: tuple = DEFAULT_MICS
    room: RoomSpec = field(default_factory=RoomSpec)
    reference_mic: int = 0
    snr_db: float = 5.0
    ser_db: float = 5.0
    echo_path: str = LINEAR
    seed: int = 0
    duration_s: float = 10.0
    # far-end activity pattern: "coincident" with the near end (permanent
    # doubletalk) or "continuous"
    far_activity: str = "coincident"

    def __post_init__(self):
        self.mic_positions = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        self.speaker_positions = np.atleast_2d(np.asarray(self.speaker_positions, dtype=float))
        self.source_position = np.asarray(self.source_position, dtype=float)
        self.noise_position = np.asarray(self.noise_position, dtype=float)
        if self.M < 1 or self.L < 1:
            raise ValueError("need at least one microphone and one loudspeaker")
        if not 0 <= self.reference_mic < self.M:
            raise ValueError(f"reference_mic {self.reference_mic} out of range for M={self.M}")
        if self.echo_path not in ECHO_PATHS:
            raise ValueError(f"echo_path must be one of {ECHO_PATHS}")
        if self.far_activity not in ("coincident", "continuous"):
            raise ValueError("far_activity must be 'coincident' or 'continuous'")
        for p in [*self.mic_positions, *self.speaker_positions, self.source_position, self.noise_position]:
            if not self.room.contains(p):
                raise ValueError(f"position {p} is outside the room {self.room.dimensions}")

    @property
    def M(self):
        return self.mic_positions.shape[0]

    @property
    def L(self):
        return self.speaker_positions.shape[0]

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.room.sample_rate))


@dataclass
class RirSet:
    source: np.ndarray    # (M, T)
    noise: np.ndarray     # (M, T)
    speakers: np.ndarray  # (L, M, T)


@dataclass
class Sources:
    near: np.ndarray          # (n,)
    near_active: np.ndarray   # (n,) bool
    far: np.ndarray           # (n, L) loudspeaker feeds
    far_active: np.ndarray    # (n,) bool
    noise: np.ndarray         # (n,)


@dataclass
class ComponentSignals:
    s: np.ndarray  # (n, M)
    n: np.ndarray  # (n, M)
    e: np.ndarray  # (n, M)
    l: np.ndarray  # (n, L)
    activity_s: np.ndarray
    activity_e: np.ndarray

    @property
    def mixture(self):
        return self.s + self.n + self.e

    @property
    def stacked(self):
        """Extended microphone signal: microphones followed by loudspeakers."""
        return np.concatenate([self.mixture, self.l], axis=1)


def generate_rir(room, src, mic, seed):
    """Randomised image method impulse response from ``src`` to ``mic``.

    Image sources of every order that can land inside ``rir_length`` taps are
    enumerated; each is displaced uniformly per axis within the displacement
    radius (the direct path is not displaced), attenuated by the reflection
    coefficient per wall bounce and by spherical spreading, and placed at the
    nearest sample.
    """
    if not room.contains(src) or not room.contains(mic):
        raise ValueError("source and microphone must lie strictly inside the room")
    src = np.asarray(src, float)
    mic = np.asarray(mic, float)
    dims = np.asarray(room.dimensions, float)
    fs, T = room.sample_rate, room.rir_length
    beta, radius = room.reflection_coefficient, room.displacement_radius
    rng = np.random.default_rng(seed)
    h = np.zeros(T)
    max_dist = (T + 1) / fs * SPEED_OF_SOUND + 2 * radius
    orders = np.ceil(max_dist / (2 * dims)).astype(int) + 1
    for r in itertools.product(*(range(-o, o + 1) for o in orders)):
        r = np.array(r)
        for p in itertools.product((0, 1), repeat=3):
            p = np.array(p)
            # one draw per image keeps the random stream independent of pruning
            shift = rng.uniform(-radius, radius, 3)
            bounces = int(np.sum(np.abs(r - p) + np.abs(r)))
            if bounces == 0:
                shift = 0.0
            elif beta == 0.0:
                continue
            image = (1 - 2 * p) * src + 2 * r * dims + shift
            d = np.linalg.norm(image - mic)
            tap = int(np.round(d / SPEED_OF_SOUND * fs))
            if 0 <= tap < T:
                h[tap] += beta ** bounces / (4 * np.pi * max(d, 1e-3))
    return h


def generate_rirs(scenario):
    room, seed = scenario.room, scenario.seed
    mics = scenario.mic_positions

    def one(tag, j, pos, m):
        return generate_rir(room, pos, mics[m], [seed, tag, j, m])

    M = scenario.M
    source = np.stack([one(0, 0, scenario.source_position, m) for m in range(M)])
    noise = np.stack([one(1, 0, scenario.noise_position, m) for m in range(M)])
    speakers = np.stack([
        np.stack([one(2, j, pos, m) for m in range(M)])
        for j, pos in enumerate(scenario.speaker_positions)
    ])
    return RirSet(source, noise, speakers)


def resonance(fc, fs, radius=0.9):
    """All-pole 2nd-order low-pass resonance at ``fc`` with unit DC gain."""
    theta = 2 * np.pi * fc / fs
    a = np.array([1.0, -2 * radius * np.cos(theta), radius ** 2])
    return np.array([a.sum()]), a


def speech_surrogate(n, fs, rng):
    """Speech-like noise: resonance-shaped white noise with a 4 Hz syllabic envelope."""
    b, a = resonance(1000.0, fs)
    x = lfilter(b, a, rng.standard_normal(n))
    t = np.arange(n) / fs
    rate = 4.0 * (1 + 0.1 * rng.standard_normal())
    env = 0.1 + 0.9 * (0.5 - 0.5 * np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    return x * env


def _power(x):
    return float(np.mean(np.asarray(x, float) ** 2))


def synthesize_sources(scenario, speech_in=None, far_speech_in=None, fs_in=None):
    """Near-end speech (active, then silent for the second half), loudspeaker
    feeds (speech-like + white noise at 0 dB) and an always-on babble noise.

    Supplied signals must be mono (or ``(n, L)`` for the far end), sampled at
    the room rate and at least ``duration_s`` long.
    """
    fs = scenario.room.sample_rate
    if fs_in is not None and fs_in != fs:
        raise ValueError(f"sample rate {fs_in} Hz does not match the scenario rate {fs} Hz")
    n = scenario.n_samples
    L = scenario.L
    rng = np.random.default_rng([scenario.seed, 100])
    n_active = n - n // 2
    near_active = np.zeros(n, bool)
    near_active[:n_active] = True

    if speech_in is None:
        near = speech_surrogate(n, fs, rng)
    else:
        near = np.asarray(speech_in, float)
        if near.ndim != 1:
            raise ValueError("near-end speech must be mono")
        if near.shape[0] < n:
            raise ValueError(f"near-end speech has {near.shape[0]} samples, need {n}")
        near = near[:n].copy()
    near[~near_active] = 0.0
    if _power(near[near_active]) == 0.0:
        raise ValueError("near-end speech is silent")

    far_active = near_active.copy() if scenario.far_activity == "coincident" else np.ones(n, bool)
    if far_speech_in is None:
        far_speech = np.stack([speech_surrogate(n, fs, rng) for _ in range(L)], axis=1)
    else:
        fsp = np.asarray(far_speech_in, float)
        if fsp.shape[0] < n:
            raise ValueError(f"far-end speech has {fsp.shape[0]} samples, need {n}")
        fsp = fsp[:n]
        far_speech = np.repeat(fsp[:, None], L, axis=1) if fsp.ndim == 1 else fsp[:, :L]
        if far_speech.shape[1] != L:
            raise ValueError(f"far-end speech needs {L} channels")
    white = rng.standard_normal((n, L))
    far = np.empty((n, L))
    for j in range(L):
        sp = far_speech[far_active, j]
        wn = white[far_active, j]
        # 0 dB speech-to-white-noise power ratio over the active samples
        white[:, j] *= np.sqrt(_power(sp) / _power(wn))
        far[:, j] = far_speech[:, j] + white[:, j]
    far[~far_active] = 0.0

    babble = sum(speech_surrogate(n, fs, rng) for _ in range(6))
    return Sources(near, near_active, far, far_active, babble)


def _convolve(x, h, n):
    return fftconvolve(x, h)[:n]


def render_scenario(scenario, sources, rirs=None):
    """Per-component microphone signals at the prescribed input SNR and SER.

    Noise and echo are scaled so that, at the reference microphone and over
    near-end-active samples, speech/noise and speech/echo power ratios equal
    ``snr_db`` and ``ser_db``.
    """
    if rirs is None:
        rirs = generate_rirs(scenario)
    n = sources.near.shape[0]
    M, L, r = scenario.M, scenario.L, scenario.reference_mic
    for name, sig in (("near-end", sources.near), ("noise", sources.noise), ("loudspeaker", sources.far)):
        if not np.any(sig):
            raise ValueError(f"{name} source is all zeros")

    s = np.stack([_convolve(sources.near, rirs.source[m], n) for m in range(M)], axis=1)
    nz = np.stack([_convolve(sources.noise, rirs.noise[m], n) for m in range(M)], axis=1)
    drive = sources.far ** 3 if scenario.echo_path == HAMMERSTEIN else sources.far
    e = np.zeros((n, M))
    for j in range(L):
        for m in range(M):
            e[:, m] += _convolve(drive[:, j], rirs.speakers[j, m], n)

    act = sources.near_active
    ps = _power(s[act, r])
    for name, x in (("near-end speech", s), ("noise", nz), ("echo", e)):
        if _power(x[act, r]) == 0.0:
            raise ValueError(f"{name} does not reach the reference microphone within the RIR length")
    nz *= np.sqrt(ps / (_power(nz[act, r]) * 10 ** (scenario.snr_db / 10)))
    e *= np.sqrt(ps / (_power(e[act, r]) * 10 ** (scenario.ser_db / 10)))
    return ComponentSignals(s, nz, e, sources.far.copy(), act.copy(), sources.far_active.copy())


def true_rtf(scenario, rirs, w=WindowSpec()):
    """Relative transfer functions of the desired source per bin.

    Returns ``(h, h_tilde, flagged)``: ``h`` is ``(bins, M)`` with ``h[:, r] = 1``,
    ``h_tilde`` appends ``L`` zeros, and ``flagged`` marks bins where the
    reference response is below 1e-12 in magnitude (there ``h`` is the unit
    vector on the reference microphone).
    """
    r = scenario.reference_mic
    H = np.fft.rfft(rirs.source, n=w.length, axis=1).T  # (bins, M)
    ref = H[:, r]
    flagged = np.abs(ref) < 1e-12
    safe = np.where(flagged, 1.0, ref)
    h = H / safe[:, None]
    h[flagged] = 0.0
    h[:, r] = 1.0
    h_tilde = np.concatenate([h, np.zeros((h.shape[0], scenario.L), complex)], axis=1)
    return h, h_tilde, flagged


def max_reach(room):
    """Longest source-microphone distance whose direct path fits in the RIR."""
    return (room.rir_length - 1) / room.sample_rate * SPEED_OF_SOUND


def random_scenario(seed, room=RoomSpec(), L=2, clearance=0.5, spacing=0.3, reach=0.9, **kwargs):
    """Scenario with desired source, loudspeakers and noise placed uniformly at random.

    Positions keep ``clearance`` from every wall and ``spacing`` from every
    other element; microphones stay at their default positions. Every element
    lies within ``reach`` times :func:`max_reach` of every microphone so its
    direct path is inside the truncated RIR.
    """
    rng = np.random.default_rng([seed, 7])
    dims = np.asarray(room.dimensions)
    mics = np.asarray(kwargs.pop("mic_positions", DEFAULT_MICS), float)
    placed = [*mics]
    points = []
    limit = reach * max_reach(room)
    for _ in range(L + 2):
        for _attempt in range(10000):
            p = rng.uniform(clearance, dims - clearance)
            near = all(np.linalg.norm(p - m) <= limit for m in mics)
            if near and all(np.linalg.norm(p - q) >= spacing for q in placed):
                break
        else:  # pragma: no cover - geometry is generous
            raise RuntimeError("could not place scenario elements")
        placed.append(p)
        points.append(p)
    return Scenario(
        source_position=points[0],
        speaker_positions=np.stack(points[1:1 + L]),
        noise_position=points[-1],
        mic_positions=mics,
        room=room,
        seed=seed,
        **kwargs,
    )
