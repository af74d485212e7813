"""INI-style experiment configuration.

Example::

    [experiment]
    kind = full_crosscheck
    seed = 20240611

    [grid]
    t_end = 6.0
    n_points = 241

    [kernels]
    preset = caldeira_leggett_highT
    gamma = 0.2
    temperature = 2.0

Every key has a documented default except ``experiment.kind`` and the
preset parameters.  Unknown keys are rejected with a spelling suggestion.
"""

from __future__ import annotations

import configparser
import difflib
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ConfigurationError

KINDS = ("kernels", "greens", "coefficients", "simulate", "wigner", "correlators", "ctp",
         "fokker_planck", "markov_gap", "full_crosscheck")

# section -> key -> (type, default); a default of None marks a required or optional-without-default key
SCHEMA: Dict[str, Dict[str, Tuple[type, object]]] = {
    "experiment": {"kind": (str, None), "seed": (int, 12345), "output_dir": (str, "stochqbm_out"),
                   "output_times": (str, "")},
    "system": {"mass": (float, 1.0), "omega_ren": (float, 1.0)},
    "grid": {"t_start": (float, 0.0), "t_end": (float, 6.0), "n_points": (int, 241)},
    "kernels": {"preset": (str, None), "gamma": (float, None), "temperature": (float, None),
                "cutoff": (float, None), "h_file": (str, None), "n_file": (str, None),
                "h_locality": (str, "nonlocal"), "n_locality": (str, "nonlocal"),
                "friction": (float, 0.0)},
    "initial": {"kind": (str, "gaussian"), "mean_x": (float, 0.0), "mean_p": (float, 0.0),
                "cov_xx": (float, None), "cov_xp": (float, 0.0), "cov_pp": (float, None),
                "separation": (float, 3.0), "sigma_x": (float, None)},
    "ensemble": {"count": (int, 10000)},
    "phase_grid": {"x_half": (float, 7.0), "p_half": (float, 7.0), "nx": (int, 128), "np": (int, 128),
                   "hist_bins": (int, 32)},
    "ctp": {"n_sources": (int, 5), "source_scale": (float, 0.3)},
}

PRESETS = ("free", "caldeira_leggett_highT", "drude_nonlocal")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output_dir: str
    output_times: Tuple[float, ...]
    mass: float
    omega_ren: float
    t_start: float
    t_end: float
    n_points: int
    preset: Optional[str]
    kernel_params: Dict[str, float]
    h_file: Optional[str]
    n_file: Optional[str]
    h_locality: str
    n_locality: str
    friction: float
    initial: Dict[str, object]
    count: int
    phase_grid: Dict[str, float]
    ctp: Dict[str, float]
    source: str = field(default="", compare=False)

    def canonical(self) -> dict:
        """Every setting that can change a numeric result (not output_dir)."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("source")
        for key in ("h_file", "n_file"):
            if d[key]:
                d[key] = hashlib.sha256(Path(d[key]).read_bytes()).hexdigest()
        return d

    @property
    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def describe(self) -> List[str]:
        lines = []
        for k, v in sorted(self.canonical().items()):
            lines.append(f"{k} = {v}")
        return lines


def _convert(section, key, raw, typ):
    try:
        if typ is int:
            return int(raw, 0)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None


def _suggest(word, options):
    close = difflib.get_close_matches(word, options, n=1, cutoff=0.6)
    return f" (did you mean {close[0]!r}?)" if close else ""


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {source}: {exc}") from None

    unknown = []
    for sec in parser.sections():
        if sec not in SCHEMA:
            unknown.append(f"section [{sec}]{_suggest(sec, list(SCHEMA))}")
            continue
        for key in parser[sec]:
            if key not in SCHEMA[sec]:
                unknown.append(f"[{sec}] {key}{_suggest(key, list(SCHEMA[sec]))}")
    if unknown:
        raise ConfigurationError("unknown configuration keys: " + "; ".join(unknown))

    vals: Dict[str, Dict[str, object]] = {}
    for sec, keys in SCHEMA.items():
        vals[sec] = {}
        for key, (typ, default) in keys.items():
            if parser.has_option(sec, key):
                vals[sec][key] = _convert(sec, key, parser.get(sec, key), typ)
            else:
                vals[sec][key] = default

    ex = vals["experiment"]
    if ex["kind"] is None:
        raise ConfigurationError("missing required key [experiment] kind")
    if ex["kind"] not in KINDS:
        raise ConfigurationError(f"[experiment] kind = {ex['kind']!r} is not one of {', '.join(KINDS)}"
                                 + _suggest(ex["kind"], KINDS))
    if not 0 <= ex["seed"] < 2 ** 64:
        raise ConfigurationError("[experiment] seed must be an unsigned 64-bit integer")
    times = tuple(float(t) for t in ex["output_times"].replace(",", " ").split()) if ex["output_times"] else ()

    sy, gr, kn = vals["system"], vals["grid"], vals["kernels"]
    if sy["mass"] <= 0:
        raise ConfigurationError("[system] mass must be > 0")
    if sy["omega_ren"] < 0:
        raise ConfigurationError("[system] omega_ren must be >= 0")
    if gr["t_end"] <= gr["t_start"]:
        raise ConfigurationError("[grid] t_end must exceed t_start")
    if gr["n_points"] < 3:
        raise ConfigurationError("[grid] n_points must be >= 3")
    for t in times:
        if not gr["t_start"] <= t <= gr["t_end"]:
            raise ConfigurationError(f"[experiment] output time {t} outside the grid")

    preset = kn["preset"]
    params = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"[kernels] preset = {preset!r} is not one of {', '.join(PRESETS)}"
                                     + _suggest(preset, PRESETS))
        need = {"free": (), "caldeira_leggett_highT": ("gamma", "temperature"),
                "drude_nonlocal": ("gamma", "temperature", "cutoff")}[preset]
        missing = [k for k in need if kn[k] is None]
        if missing:
            raise ConfigurationError(f"[kernels] preset {preset} needs: {', '.join(missing)}")
        params = {k: kn[k] for k in need}
        for k in ("gamma", "temperature"):
            if k in params and params[k] < 0:
                raise ConfigurationError(f"[kernels] {k} must be >= 0")
        if "cutoff" in params and params["cutoff"] <= 0:
            raise ConfigurationError("[kernels] cutoff must be > 0")
    else:
        if kn["h_file"] is None or kn["n_file"] is None:
            raise ConfigurationError("[kernels] needs either preset or both h_file and n_file")
        base = Path(source).parent if source not in ("<string>",) else Path(".")
        for key in ("h_file", "n_file"):
            p = Path(kn[key])
            if not p.is_absolute():
                p = base / p
            if not p.is_file():
                raise ConfigurationError(f"[kernels] {key} = {kn[key]} does not exist")
            kn[key] = str(p)
    for key in ("h_locality", "n_locality"):
        if kn[key] not in ("local", "nonlocal"):
            raise ConfigurationError(f"[kernels] {key} must be 'local' or 'nonlocal'")

    ini = dict(vals["initial"])
    if ini["kind"] not in ("gaussian", "cat"):
        raise ConfigurationError("[initial] kind must be 'gaussian' or 'cat'")
    if ini["separation"] <= 0:
        raise ConfigurationError("[initial] separation must be > 0")
    if vals["ensemble"]["count"] < 1:
        raise ConfigurationError("[ensemble] count must be >= 1")
    pg = vals["phase_grid"]
    if pg["nx"] < 16 or pg["np"] < 16 or pg["hist_bins"] < 16:
        raise ConfigurationError("[phase_grid] nx, np and hist_bins must be >= 16")
    if pg["x_half"] <= 0 or pg["p_half"] <= 0:
        raise ConfigurationError("[phase_grid] x_half and p_half must be > 0")
    if vals["ctp"]["n_sources"] < 1:
        raise ConfigurationError("[ctp] n_sources must be >= 1")

    return ExperimentConfig(
        kind=ex["kind"], seed=ex["seed"], output_dir=ex["output_dir"], output_times=times,
        mass=sy["mass"], omega_ren=sy["omega_ren"],
        t_start=gr["t_start"], t_end=gr["t_end"], n_points=gr["n_points"],
        preset=preset, kernel_params=params, h_file=kn["h_file"], n_file=kn["n_file"],
        h_locality=kn["h_locality"], n_locality=kn["n_locality"], friction=kn["friction"],
        initial=ini, count=vals["ensemble"]["count"], phase_grid=dict(pg), ctp=dict(vals["ctp"]),
        source=source,
    )


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(p))
