"""End-to-end experiment: scenarios x echo paths x statistics modes x algorithms.

A run is configured by an INI file (see :data:`SCHEMA`) and produces a CSV
of metric rows, a JSON summary with mean and standard deviation across
scenarios, a plain-text manifest and, optionally, WAV files of every
algorithm output.
"""

import configparser
import csv
import hashlib
import io
import json
import os
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy
from scipy.io import wavfile

from . import filters, linalg, metrics, room, stats
from .stft import WindowSpec

__version__ = "0.1.0"

CSV_COLUMNS = (
    "scenario_id", "seed", "algorithm", "echo_path", "stats_mode",
    "delta_snr_i_db", "erle_i_db", "sd_i_db",
)
METRIC_COLUMNS = CSV_COLUMNS[5:]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {
        "scenarios": (int, 5),
        "seed": (int, 0),
        "duration_s": (float, 10.0),
        "vad_preset": (str, "doubletalk"),
        "algorithms": (_list, filters.ALGORITHMS),
        "echo_paths": (_list, room.ECHO_PATHS),
        "stats_modes": (_list, (stats.ORACLE, stats.STREAMING)),
        "bands": (str, "uniform"),
    },
    "room": {
        "reflection_coefficient": (float, 0.15),
        "rir_length": (int, 128),
        "snr_db": (float, 5.0),
        "ser_db": (float, 5.0),
    },
    "stft": {
        "length": (int, 512),
        "hop": (int, 256),
    },
    "stats": {
        "forgetting": (float, stats.FORGETTING),
        "delta": (float, linalg.REG_DELTA),
    },
    "output": {
        "dir": (str, "results"),
        "write_wav": (_bool, False),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: int = 5
    seed: int = 0
    duration_s: float = 10.0
    vad_preset: str = "doubletalk"
    algorithms: tuple = filters.ALGORITHMS
    echo_paths: tuple = room.ECHO_PATHS
    stats_modes: tuple = (stats.ORACLE, stats.STREAMING)
    bands: str = "uniform"
    reflection_coefficient: float = 0.15
    rir_length: int = 128
    snr_db: float = 5.0
    ser_db: float = 5.0
    length: int = 512
    hop: int = 256
    forgetting: float = stats.FORGETTING
    delta: float = linalg.REG_DELTA
    dir: str = "results"
    write_wav: bool = False
    source_text: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        checks = (
            ("experiment.scenarios", self.scenarios >= 1, "must be at least 1"),
            ("experiment.duration_s", self.duration_s > 0, "must be positive"),
            ("room.reflection_coefficient", 0 <= self.reflection_coefficient < 1, "must lie in [0, 1)"),
            ("stats.forgetting", 0 < self.forgetting < 1, "must lie in (0, 1)"),
            ("stats.delta", self.delta >= 0, "must be non-negative"),
        )
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")
        for key, values, allowed in (
            ("experiment.algorithms", self.algorithms, filters.ALGORITHMS),
            ("experiment.echo_paths", self.echo_paths, room.ECHO_PATHS),
            ("experiment.stats_modes", self.stats_modes, (stats.ORACLE, stats.STREAMING)),
        ):
            bad = [v for v in values if v not in allowed]
            if bad or not values:
                raise ConfigError(f"{key}: {bad or 'empty'} not in {list(allowed)}")
        try:
            stats.VadScalings.from_name(self.vad_preset)
            WindowSpec(self.length, self.hop)
            metrics.BandWeights.from_name(self.bands)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"invalid value: {exc}") from None

    @property
    def window(self):
        return WindowSpec(self.length, self.hop)

    @property
    def room(self):
        return room.RoomSpec(reflection_coefficient=self.reflection_coefficient, rir_length=self.rir_length)

    @property
    def vad(self):
        return stats.VadScalings.from_name(self.vad_preset)

    @property
    def regimes(self):
        # permanent doubletalk only has a microphone VAD
        return stats.MIC_ONLY if self.vad_preset == "doubletalk" else stats.SEPARATE

    @property
    def hash(self):
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()

    def replace(self, **kw):
        vals = {k: getattr(self, k) for k in self.__dataclass_fields__}
        vals.update(kw)
        return ExperimentConfig(**vals)


def canonical_text(cfg):
    """The resolved configuration as INI text with every key spelled out."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            if isinstance(v, tuple):
                v = ", ".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{key} = {v!r}" if isinstance(v, float) else f"{key} = {v}")
        out.append("")
    return "\n".join(out)


def parse_config(text, origin="<config>"):
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            parse = SCHEMA[section][key][0]
            try:
                values[key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{origin}: {section}.{key}: {exc}") from None
    return ExperimentConfig(**values, source_text=text)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


# --- one scenario -------------------------------------------------------------

@dataclass
class Row:
    scenario_id: int
    seed: int
    algorithm: str
    echo_path: str
    stats_mode: str
    delta_snr_i_db: float
    erle_i_db: float
    sd_i_db: float

    def key(self):
        return (self.scenario_id, self.echo_path, self.stats_mode, self.algorithm)


@dataclass
class ScenarioResult:
    rows: list
    failures: list
    outputs: dict = field(default_factory=dict)


def scenario_seed(cfg, scenario_id):
    return cfg.seed + scenario_id


def design_filters(cfg, cs, sv_true, sv_gj, orc=None):
    """Every requested filter bank for one correlation set.

    In oracle mode the GEIC echo term uses the oracle echo blocks; in
    streaming mode it uses the blocks of ``R_alpha``.
    """
    v = cfg.vad
    out = {}
    need_mwf = any(a in cfg.algorithms for a in (filters.MWF_RANK1, filters.GEIC_GEVD))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", filters.StructureWarning)
        rank1 = filters.mwf_ext(cs, "one", delta=cfg.delta) if need_mwf else None
        if filters.MWF_FULL in cfg.algorithms:
            out[filters.MWF_FULL] = filters.mwf_ext(cs, "full", delta=cfg.delta)
    if filters.MWF_RANK1 in cfg.algorithms:
        out[filters.MWF_RANK1] = rank1
    blocks = (v.alpha_e, orc.R_el, orc.R_ll) if orc is not None else ()
    for tag, sv in ((filters.GEIC, sv_true), (filters.GEIC_GJ, sv_gj)):
        if tag in cfg.algorithms:
            out[tag] = filters.geic_solve(cs.R_alpha, sv, *blocks, delta=cfg.delta, algorithm=tag)
    if filters.GEIC_GEVD in cfg.algorithms:
        sv = filters.steering_gevd(rank1.extras["q"], cs.M)
        out[filters.GEIC_GEVD] = filters.geic_solve(cs.R_alpha, sv, *blocks, delta=cfg.delta,
                                                    algorithm=filters.GEIC_GEVD)
    return out


def run_scenario(cfg, scenario_id, echo_path):
    """Rows for one scenario and echo path over every statistics mode and algorithm."""
    seed = scenario_seed(cfg, scenario_id)
    w = cfg.window
    bands = metrics.BandWeights.from_name(cfg.bands)
    sc = room.random_scenario(
        seed, room=cfg.room, duration_s=cfg.duration_s, echo_path=echo_path,
        snr_db=cfg.snr_db, ser_db=cfg.ser_db,
    )
    rirs = room.generate_rirs(sc)
    comp = room.render_scenario(sc, room.synthesize_sources(sc), rirs)
    spec = stats.ComponentSpectra.from_signals(comp, w)
    h, _, _ = room.true_rtf(sc, rirs, w)
    sv_true = filters.steering_true_rtf(h, sc.L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        sv_gj = filters.steering_griffiths_jim(
            sc.source_position, sc.mic_positions, sc.L, sc.reference_mic, sc.room.sample_rate, w,
        )
    res = ScenarioResult([], [])
    for mode in cfg.stats_modes:
        try:
            if mode == stats.ORACLE:
                orc = stats.batch_covariances(spec)
                cs = stats.compose(orc, cfg.vad)
            else:
                orc = None
                cs = stats.streaming_estimate(
                    spec.stacked, spec.labels, sc.M, cfg.forgetting, cfg.regimes, cfg.delta,
                )
            banks = design_filters(cfg, cs, sv_true, sv_gj, orc)
        except Exception as exc:  # recorded, the run goes on
            res.failures.append({"scenario_id": scenario_id, "seed": seed, "echo_path": echo_path,
                                 "stats_mode": mode, "error": f"{type(exc).__name__}: {exc}"})
            continue
        for alg in cfg.algorithms:
            try:
                shadow = metrics.shadow_filter(comp, banks[alg], w=w)
                rep = metrics.evaluate(comp, shadow, bands, sc.reference_mic, w, sc.room.sample_rate)
            except Exception as exc:
                res.failures.append({"scenario_id": scenario_id, "seed": seed, "echo_path": echo_path,
                                     "stats_mode": mode, "algorithm": alg,
                                     "error": f"{type(exc).__name__}: {exc}"})
                continue
            res.rows.append(Row(scenario_id, seed, alg, echo_path, mode,
                                rep.delta_snr_i, rep.erle_i, rep.sd_i))
            if cfg.write_wav:
                res.outputs[(scenario_id, echo_path, mode, alg)] = shadow.mixture
    if cfg.write_wav:
        res.outputs[(scenario_id, echo_path, "input", "mixture")] = comp.mixture[:, sc.reference_mic]
    return res


def _task(args):
    return run_scenario(*args)


# --- whole run ---------------------------------------------------------------

@dataclass
class ResultsTable:
    rows: list
    failures: list = field(default_factory=list)

    def sorted(self):
        return ResultsTable(sorted(self.rows, key=Row.key), sorted(self.failures, key=str))

    def summary(self):
        """Mean and population standard deviation across scenarios per group."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.algorithm, r.echo_path, r.stats_mode), []).append(r)
        out = []
        for (alg, path, mode), rs in sorted(groups.items()):
            entry = {"algorithm": alg, "echo_path": path, "stats_mode": mode, "n": len(rs)}
            for col in METRIC_COLUMNS:
                vals = np.array([getattr(r, col) for r in rs])
                entry[col] = {"mean": float(vals.mean()), "std": float(vals.std())}
            out.append(entry)
        return out

    def mean(self, metric, algorithm, echo_path, stats_mode):
        vals = [getattr(r, metric) for r in self.rows
                if (r.algorithm, r.echo_path, r.stats_mode) == (algorithm, echo_path, stats_mode)]
        if not vals:
            raise KeyError((metric, algorithm, echo_path, stats_mode))
        return float(np.mean(vals))

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in self.sorted().rows:
            wr.writerow([getattr(r, c) if c not in METRIC_COLUMNS else repr(float(getattr(r, c)))
                         for c in CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rd = csv.DictReader(io.StringIO(text))
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {rd.fieldnames}")
        rows = [Row(int(d["scenario_id"]), int(d["seed"]), d["algorithm"], d["echo_path"], d["stats_mode"],
                    float(d["delta_snr_i_db"]), float(d["erle_i_db"]), float(d["sd_i_db"])) for d in rd]
        return cls(rows)


def run(cfg, jobs=1, progress=None):
    """Run every scenario and echo path; results come back sorted."""
    tasks = [(cfg, i, path) for i in range(cfg.scenarios) for path in cfg.echo_paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_task, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_task(t))
            if progress:
                progress(t[1], t[2])
    rows = [r for res in results for r in res.rows]
    fails = [f for res in results for f in res.failures]
    outputs = {k: v for res in results for k, v in res.outputs.items()}
    return ResultsTable(rows, fails).sorted(), outputs


def manifest_text(cfg, table):
    lines = [
        f"config_sha256 = {cfg.hash}",
        f"aecnr = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"linalg_backend = {linalg.BACKEND}",
        f"rows = {len(table.rows)}",
        f"failures = {len(table.failures)}",
        "",
        canonical_text(cfg),
    ]
    return "\n".join(lines)


def write_artifacts(cfg, table, outputs, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "csv": os.path.join(out_dir, "results.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "manifest": os.path.join(out_dir, "manifest.txt"),
    }
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        fh.write(table.to_csv())
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump({"config_sha256": cfg.hash, "groups": table.summary(), "failures": table.failures},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write(manifest_text(cfg, table))
    if outputs:
        wav_dir = os.path.join(out_dir, "wav")
        os.makedirs(wav_dir, exist_ok=True)
        for (sid, path, mode, alg), x in sorted(outputs.items()):
            name = f"s{sid}_{path}_{mode}_{alg}.wav"
            wavfile.write(os.path.join(wav_dir, name), cfg.room.sample_rate, np.asarray(x, np.float32))
    return paths
