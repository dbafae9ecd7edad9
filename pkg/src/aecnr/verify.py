"""Oracle-mode identity and property checks with worst-bin reporting."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import filters, linalg, room, stats
from .stats import VadScalings, compose
from .stft import analyze, synthesize

GRID = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class Check:
    name: str
    worst: float
    tol: float
    bin: int = -1
    detail: str = ""

    @property
    def passed(self):
        return bool(np.isfinite(self.worst) and self.worst <= self.tol)

    def line(self):
        where = f" at bin {self.bin}" if self.bin >= 0 else ""
        extra = f" ({self.detail})" if self.detail else ""
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.3e}{where}, tolerance {self.tol:.0e}{extra}"


def _worst(name, per_bin, tol, detail=""):
    per_bin = np.asarray(per_bin, float)
    bad = ~np.isfinite(per_bin)
    if bad.any():
        return Check(name, np.inf, tol, int(np.flatnonzero(bad)[0]), detail)
    i = int(np.argmax(per_bin))
    return Check(name, float(per_bin[i]), tol, i, detail)


@dataclass
class Oracle:
    spec: object
    orc: object
    bg: object
    h: np.ndarray
    sv: object


def oracle_setup(seed=0, echo_path=room.LINEAR, duration_s=6.0):
    """Oracle statistics with the point-source speech model for one scenario."""
    sc = room.random_scenario(seed, duration_s=duration_s, far_activity="continuous", echo_path=echo_path)
    rirs = room.generate_rirs(sc)
    comp = room.render_scenario(sc, room.synthesize_sources(sc), rirs)
    spec = stats.ComponentSpectra.from_signals(comp)
    h, _, _ = room.true_rtf(sc, rirs)
    orc = stats.rank1_speech(stats.batch_covariances(spec), h)
    return Oracle(spec, orc, filters.bussgang(orc), h, filters.steering_true_rtf(h, sc.L))


def linear_echo_power(w, o):
    """Per-bin output power on the stacked linear echo relative to the reference-mic echo."""
    y = np.einsum("fd,kfd->kf", w.conj(), o.bg.linear_echo(o.spec.l))
    return np.sum(np.abs(y) ** 2, axis=0) / np.sum(np.abs(o.spec.e[..., 0]) ** 2, axis=0)


def _rel(a, b):
    return np.linalg.norm(a - b, axis=-1) / np.linalg.norm(b, axis=-1)


def check_distortionless(o):
    fb = filters.geic_solve(compose(o.orc, VadScalings()).R_alpha, o.sv, 1.0, o.orc.R_el, o.orc.R_ll)
    resp = np.einsum("fd,fd->f", fb.weights.conj(), o.sv.h_tilde)
    return _worst("GEIC distortionless response", np.abs(resp - 1), 1e-10)


def check_geic_nulling(o):
    worst = np.zeros(o.h.shape[0])
    for a_s in GRID:
        for a_e in GRID:
            v = VadScalings(alpha_s=a_s, alpha_e=a_e)
            fb = filters.geic_solve(compose(o.orc, v).R_alpha, o.sv, a_e, o.orc.R_el, o.orc.R_ll)
            worst = np.maximum(worst, linear_echo_power(fb.weights, o))
    return _worst("GEIC linear-echo nulling (alpha grid)", worst, 1e-16)


def check_mwf_nulling(o):
    worst = np.zeros(o.h.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", filters.StructureWarning)
        for bs in GRID:
            for be in GRID[1:]:  # beta_e = 0 leaves R_beta without loudspeaker power
                for gs in GRID:
                    for ge in GRID:
                        v = VadScalings(beta_s=bs, beta_e=be, gamma_s=gs, gamma_e=ge)
                        cs = compose(o.orc, v)
                        for rank in ("one", "full"):
                            worst = np.maximum(worst, linear_echo_power(filters.mwf_ext(cs, rank).weights, o))
    return _worst("MWF linear-echo nulling (beta, gamma grid)", worst, 1e-16, "beta_e > 0")


def check_zero_structure(o):
    fb = filters.mwf_ext(compose(o.orc, VadScalings.doubletalk()), "full", warn=False)
    count = fb.extras["partition"].count
    return _worst("GEVD zero structure", np.abs(count - o.orc.M).astype(float), 0.0,
                  f"{o.orc.M} structured columns expected")


def check_covariance_recovery(o):
    fb = filters.mwf_ext(compose(o.orc, VadScalings.error_free()), "full")
    R = o.orc.stacked_ss
    err = np.linalg.norm(fb.extras["R_hat"] - R, axis=(1, 2)) / np.linalg.norm(R, axis=(1, 2))
    return _worst("speech covariance recovery", err, 1e-8)


def check_cascade(o):
    worst = np.zeros(o.h.shape[0])
    for v in (VadScalings.doubletalk(), VadScalings.error_free()):
        cs = compose(o.orc, v)
        br = filters.decompose_mwf(cs, o.orc, o.bg, v, o.sv)
        worst = np.maximum(worst, _rel(br.reconstructed, filters.mwf_ext(cs, "full").weights))
    return _worst("GEIC-postfilter cascade identity", worst, 1e-8)


def check_rank1_cascade(o):
    worst = np.zeros(o.h.shape[0])
    for v in (VadScalings.doubletalk(), VadScalings.error_free()):
        br, ref = filters.decompose_mwf_rank1(compose(o.orc, v))
        worst = np.maximum(worst, _rel(br.reconstructed, ref.weights))
    return _worst("rank-one GEVD cascade identity", worst, 1e-8)


def check_simplified_geic(o):
    worst = np.zeros(o.h.shape[0])
    for a_e in GRID:
        v = VadScalings(alpha_s=0.0, alpha_e=a_e)
        fb = filters.geic_solve(compose(o.orc, v).R_alpha, o.sv, a_e, o.orc.R_el, o.orc.R_ll)
        wa = filters.geic_wa_simplified(o.orc.R_nn, o.bg.R_eres, o.sv.B, o.sv.w_c, a_e)
        worst = np.maximum(worst, _rel(fb.extras["w_a"], wa))
    return _worst("joint vs simplified GEIC w_a", worst, 1e-8)


def check_stft_round_trip(seed=0):
    x = np.random.default_rng(seed).standard_normal((16000, 2))
    y = synthesize(analyze(x), length=x.shape[0])
    sl = slice(512, -512)
    err = np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl])
    return Check("STFT round trip", float(err), 1e-10)


def det_roots(A, B, grid=20001):
    """Real roots of ``det(A - lam B)`` by grid bracketing and Brent's method.

    Independent of any eigensolver; ``B`` must be positive definite so
    every root is real and lies within ``||A|| ||B^-1||``.
    """
    n = A.shape[0]
    bound = 1.5 * np.linalg.norm(A) * np.linalg.norm(np.linalg.inv(B))

    def f(lam):
        return np.linalg.det(A - lam * B).real

    xs = np.linspace(-bound, bound, grid)
    vals = np.linalg.det(A[None] - xs[:, None, None] * B[None]).real
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(brentq(f, a, b, xtol=1e-15 * bound, rtol=1e-15, maxiter=500))
    if len(roots) != n:
        raise RuntimeError(f"bracketed {len(roots)} of {n} roots")
    return np.sort(roots)[::-1]


def random_pencil(rng, n=4):
    X = rng.standard_normal((2, n, n)) + 1j * rng.standard_normal((2, n, n))
    A = X[0] @ X[0].conj().T + 0.1 * np.eye(n)
    B = X[1] @ X[1].conj().T + 0.1 * np.eye(n)
    return A, B


def check_gevd_oracle(seed=0, n=100):
    """Generalised eigenvalue ratios of random 4x4 PD pencils against determinant roots."""
    rng = np.random.default_rng(seed)
    err = np.zeros(n)
    for i in range(n):
        A, B = random_pencil(rng)
        ref = det_roots(A, B)
        err[i] = np.max(np.abs(linalg.gevd(A[None], B[None]).ratios[0] - ref) / np.abs(ref))
    c = _worst("GEVD ratios vs det(A - lam B) roots", err, 1e-8)
    return Check(c.name, c.worst, c.tol, detail=f"pencil {c.bin} of {n}")


def check_bussgang_scalar(seed=42, n=100_000, sigma=0.7):
    """Cubic memoryless path on Gaussian input: gain near 3 sigma^2, residual uncorrelated."""
    rng = np.random.default_rng(seed)
    l = sigma * rng.standard_normal(n)
    e = l ** 3
    vals = (1.0, 1.0, e @ e / n, l @ l / n, e @ l / n)
    orc = stats.OracleCovariances(*(np.full((1, 1, 1), v, complex) for v in vals))
    g = filters.bussgang(orc).F_lin[0, 0, 0].real
    gain = Check("Bussgang gain vs 3 sigma^2", abs(g / (3 * sigma ** 2) - 1), 0.05)
    l2 = sigma * rng.standard_normal(n)
    res = l2 ** 3 - g * l2
    scale = np.sqrt(np.mean(l2 ** 6) * np.mean(l2 ** 2))
    corr = Check("Bussgang residual correlation * sqrt(N)",
                 abs(np.mean(res * l2)) / scale * np.sqrt(n), 5.0, detail="normalised, fresh data")
    return gain, corr


def run_checks(seed=0, duration_s=6.0):
    lin = oracle_setup(seed, room.LINEAR, duration_s)
    ham = oracle_setup(seed, room.HAMMERSTEIN, duration_s)
    checks = [
        check_distortionless(ham),
        check_geic_nulling(lin),
        check_mwf_nulling(lin),
        check_zero_structure(lin),
        check_covariance_recovery(lin),
    ]
    for o, tag in ((lin, "linear"), (ham, "hammerstein")):
        for fn in (check_cascade, check_rank1_cascade, check_simplified_geic):
            c = fn(o)
            checks.append(Check(f"{c.name} [{tag}]", c.worst, c.tol, c.bin, c.detail))
    checks += [*check_bussgang_scalar(), check_stft_round_trip(seed), check_gevd_oracle(seed)]
    return checks
