"""Experiment configuration: one TOML (or JSON) file for every command.

Sections ``[channel]``, ``[region]``, ``[codebook]``, ``[detector]`` and
``[campaign]``.  Loading fills defaults and returns a plain resolved dict;
the resolved dict is what reports echo back, and feeding the echo in again
as a ``.json`` config reproduces the run.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Any, Dict, Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .channels import DiscreteSensingPair, MimoGaussianPair, ScalarGaussianPair
from .prob_core import ChannelMatrix

CHANNEL_KINDS = ("discrete", "scalar_gaussian", "mimo_gaussian")

_DEFAULTS = {
    "region": {"tol": 1e-10, "max_iter": 100_000, "lambda_grid": None, "resolution": 41},
    "codebook": {
        "px": None,
        "counts": None,
        "L": None,
        "k": None,
        "messages": None,
        "seed": None,
        "file": None,
        "window_eps": None,
    },
    "detector": {"threshold": None, "alpha": None},
    "campaign": {
        "runs": 1000,
        "codewords": 16,
        "change_points": None,
        "horizon_cap": 1_000_000,
        "max_censored_fraction": 0.01,
        "b_grid": None,
        "far": True,
        "wadd": True,
        "decode_trials": 0,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key, ``line`` 1-based when known."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None, path=None):
        self.field = field
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path) + (f":{line}" if line else ""))
        if field:
            where.append(field)
        super().__init__((": ".join(where) + ": " if where else "") + message)


def _locate(text: str, section: str, key: Optional[str]) -> Optional[int]:
    """Line of ``key`` inside ``[section]`` (or of the section header)."""
    current = None
    header = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if current == section:
                header = no
            continue
        if current == section and key and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return header


class _Reader:
    def __init__(self, data: dict, text: str, path):
        self.data, self.text, self.path = data, text, path

    def fail(self, section, key, message):
        line = _locate(self.text, section, key) if self.text else None
        raise ConfigError(message, f"{section}.{key}" if key else section, line, self.path)

    def table(self, section) -> dict:
        t = self.data.get(section, {})
        if not isinstance(t, dict):
            self.fail(section, None, "expected a table")
        return t


def _number(r: _Reader, sec, key, value, *, integer=False, lo=None, lo_open=False, hi=None, allow_none=True):
    if value is None:
        if allow_none:
            return None
        r.fail(sec, key, "is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        r.fail(sec, key, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            r.fail(sec, key, f"expected an integer, got {value!r}")
        value = int(value)
    if isinstance(value, float) and math.isnan(value):
        r.fail(sec, key, "must not be NaN")
    if lo is not None and (value <= lo if lo_open else value < lo):
        r.fail(sec, key, f"must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        r.fail(sec, key, f"must be <= {hi}, got {value}")
    return value


def _matrix(r: _Reader, sec, key, value, allow_none=False):
    if value is None:
        if allow_none:
            return None
        r.fail(sec, key, "is required")
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        r.fail(sec, key, "expected a rectangular numeric array")
    if a.ndim != 2 or a.size == 0:
        r.fail(sec, key, f"expected a non-empty matrix, got shape {a.shape}")
    return a.tolist()


def _complex(r: _Reader, sec, key, value):
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return [float(_number(r, sec, key, v)) for v in value]
    return [float(_number(r, sec, key, value, allow_none=False)), 0.0]


def _resolve_channel(r: _Reader) -> dict:
    t = dict(r.table("channel"))
    kind = t.pop("kind", None)
    if kind not in CHANNEL_KINDS:
        r.fail("channel", "kind", f"must be one of {', '.join(CHANNEL_KINDS)}, got {kind!r}")
    out: Dict[str, Any] = {"kind": kind}
    if kind == "discrete":
        allowed = {"comm", "p0", "p1"}
        for key in ("comm", "p0", "p1"):
            out[key] = _matrix(r, "channel", key, t.get(key))
            try:
                ChannelMatrix(out[key])
            except ValueError as e:
                r.fail("channel", key, str(e))
        shapes = {key: np.shape(out[key]) for key in ("p0", "p1")}
        if shapes["p0"] != shapes["p1"]:
            r.fail("channel", "p1", f"shape {shapes['p1']} differs from p0 {shapes['p0']}")
        if np.shape(out["comm"])[0] != shapes["p0"][0]:
            r.fail("channel", "comm", "input alphabet differs from the sensing pair")
    elif kind == "scalar_gaussian":
        allowed = {"variant", "power", "gain", "pre_gain", "sigma0_sq", "sigma1_sq", "complex"}
        variant = t.get("variant", "gain")
        if variant not in ("gain", "variance"):
            r.fail("channel", "variant", f"must be 'gain' or 'variance', got {variant!r}")
        out.update(
            variant=variant,
            power=_number(r, "channel", "power", t.get("power"), lo=0, lo_open=True, allow_none=False),
            gain=_complex(r, "channel", "gain", t.get("gain", 1.0)),
            pre_gain=_complex(r, "channel", "pre_gain", t.get("pre_gain", 1.0)),
            sigma0_sq=_number(r, "channel", "sigma0_sq", t.get("sigma0_sq", 1.0), lo=0, lo_open=True),
            sigma1_sq=_number(r, "channel", "sigma1_sq", t.get("sigma1_sq", 1.0), lo=0, lo_open=True),
            complex=bool(t.get("complex", False)),
        )
    else:
        allowed = {"G0", "G1", "Gtilde", "power"}
        out.update(
            G0=_matrix(r, "channel", "G0", t.get("G0")),
            G1=_matrix(r, "channel", "G1", t.get("G1")),
            Gtilde=_matrix(r, "channel", "Gtilde", t.get("Gtilde")),
            power=_number(r, "channel", "power", t.get("power"), lo=0, lo_open=True, allow_none=False),
        )
    for key in t:
        if key not in allowed:
            r.fail("channel", key, f"unknown key for a {kind} channel")
    return out


def _resolve_section(r: _Reader, section: str) -> dict:
    t = r.table(section)
    out = dict(_DEFAULTS[section])
    for key, value in t.items():
        if key not in out:
            r.fail(section, key, "unknown key")
        out[key] = value
    return out


def _check_region(r, reg):
    _number(r, "region", "tol", reg["tol"], lo=0, lo_open=True, allow_none=False)
    reg["max_iter"] = _number(r, "region", "max_iter", reg["max_iter"], integer=True, lo=1, allow_none=False)
    reg["resolution"] = _number(r, "region", "resolution", reg["resolution"], integer=True, lo=3, allow_none=False)
    if reg["lambda_grid"] is not None:
        if not isinstance(reg["lambda_grid"], list) or not reg["lambda_grid"]:
            r.fail("region", "lambda_grid", "expected a non-empty list")
        for v in reg["lambda_grid"]:
            _number(r, "region", "lambda_grid", v, lo=0)


def _check_codebook(r, cb, seed):
    if cb["file"] is not None:
        if not isinstance(cb["file"], str):
            r.fail("codebook", "file", "expected a path string")
        return
    if cb["px"] is None and cb["counts"] is None:
        return
    if cb["counts"] is not None:
        if not isinstance(cb["counts"], list) or not cb["counts"]:
            r.fail("codebook", "counts", "expected a list of symbol counts")
        cb["counts"] = [_number(r, "codebook", "counts", c, integer=True, lo=0) for c in cb["counts"]]
        if sum(cb["counts"]) < 1:
            r.fail("codebook", "counts", "counts must sum to at least 1")
    else:
        if not isinstance(cb["px"], list) or not cb["px"]:
            r.fail("codebook", "px", "expected a probability vector")
        px = [_number(r, "codebook", "px", v, lo=0) for v in cb["px"]]
        if abs(sum(px) - 1.0) > 1e-9:
            r.fail("codebook", "px", f"must sum to 1, sums to {sum(px)}")
        cb["L"] = _number(r, "codebook", "L", cb["L"], integer=True, lo=1, allow_none=False)
    cb["k"] = _number(r, "codebook", "k", cb["k"], integer=True, lo=1, allow_none=False)
    cb["messages"] = _number(r, "codebook", "messages", cb["messages"], integer=True, lo=1, allow_none=False)
    cb["seed"] = _number(r, "codebook", "seed", seed if cb["seed"] is None else cb["seed"], integer=True, lo=0)
    if cb["window_eps"] is not None:
        _number(r, "codebook", "window_eps", cb["window_eps"], lo=0, lo_open=True)


def _check_detector(r, det):
    if det["threshold"] is not None:
        _number(r, "detector", "threshold", det["threshold"])
    if det["alpha"] is not None:
        _number(r, "detector", "alpha", det["alpha"], lo=0, lo_open=True)
        if not det["alpha"] < 1:
            r.fail("detector", "alpha", "must be < 1")


def _check_campaign(r, c):
    c["runs"] = _number(r, "campaign", "runs", c["runs"], integer=True, lo=1, allow_none=False)
    c["horizon_cap"] = _number(r, "campaign", "horizon_cap", c["horizon_cap"], integer=True, lo=1, allow_none=False)
    c["decode_trials"] = _number(r, "campaign", "decode_trials", c["decode_trials"], integer=True, lo=0)
    _number(r, "campaign", "max_censored_fraction", c["max_censored_fraction"], lo=0, hi=1, allow_none=False)
    cw = c["codewords"]
    if isinstance(cw, str):
        if cw != "all":
            r.fail("campaign", "codewords", "expected a count, an index list or \"all\"")
    elif isinstance(cw, list):
        c["codewords"] = [_number(r, "campaign", "codewords", v, integer=True, lo=0) for v in cw]
    else:
        c["codewords"] = _number(r, "campaign", "codewords", cw, integer=True, lo=1)
    if c["change_points"] is not None:
        pts = []
        for v in c["change_points"]:
            if v == "inf":
                pts.append("inf")
            else:
                pts.append(_number(r, "campaign", "change_points", v, integer=True, lo=1))
        c["change_points"] = pts
    if c["b_grid"] is not None:
        grid = [_number(r, "campaign", "b_grid", v) for v in c["b_grid"]]
        if len(grid) < 3 or any(b <= a for a, b in zip(grid, grid[1:])):
            r.fail("campaign", "b_grid", "needs at least 3 strictly increasing thresholds")
    for key in ("far", "wadd"):
        if not isinstance(c[key], bool):
            r.fail("campaign", key, "expected true or false")


def resolve(data: dict, text: str = "", path=None, seed: Optional[int] = None) -> dict:
    """Validate ``data`` and fill defaults; ``seed`` overrides the file's top-level seed."""
    r = _Reader(data, text, path)
    known = {"channel", "seed"} | set(_DEFAULTS)
    for key in data:
        if key not in known:
            raise ConfigError("unknown section", key, _locate(text, key, None), path)
    if "channel" not in data:
        raise ConfigError("missing [channel] section", "channel", None, path)
    file_seed = data.get("seed", 0)
    if seed is None:
        seed = file_seed
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}", "seed", None, path)
    out = {"seed": int(seed), "channel": _resolve_channel(r)}
    for section in _DEFAULTS:
        out[section] = _resolve_section(r, section)
    _check_region(r, out["region"])
    _check_codebook(r, out["codebook"], out["seed"])
    _check_detector(r, out["detector"])
    _check_campaign(r, out["campaign"])
    return out


def load(path, seed: Optional[int] = None) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path=path) from e
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON syntax error: {e.msg} (column {e.colno})", line=e.lineno, path=path) from e
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            m = re.search(r"line (\d+)", str(e))
            raise ConfigError(f"TOML syntax error: {e}", line=int(m.group(1)) if m else None, path=path) from e
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table", path=path)
    return resolve(data, text, path, seed)


# --------------------------------------------------------------------------
# model construction


def _cplx(v):
    return complex(v[0], v[1])


def build_models(channel: dict):
    """``(comm, sensing model)`` for a resolved ``[channel]`` table; ``comm`` is None for Gaussian kinds."""
    kind = channel["kind"]
    if kind == "discrete":
        return ChannelMatrix(channel["comm"]), DiscreteSensingPair(channel["p0"], channel["p1"])
    if kind == "scalar_gaussian":
        return None, ScalarGaussianPair(
            variant=channel["variant"],
            power=channel["power"],
            gain=_cplx(channel["gain"]) if channel["complex"] else channel["gain"][0],
            pre_gain=_cplx(channel["pre_gain"]) if channel["complex"] else channel["pre_gain"][0],
            sigma0_sq=channel["sigma0_sq"],
            sigma1_sq=channel["sigma1_sq"],
            complex_valued=channel["complex"],
        )
    return None, MimoGaussianPair(
        np.asarray(channel["G0"]), np.asarray(channel["G1"]), np.asarray(channel["Gtilde"]), channel["power"]
    )
