"""Command-line front end.

    qcdtradeoff region   --config cfg.toml --out results/
    qcdtradeoff codebook --config cfg.toml --out results/
    qcdtradeoff simulate --config cfg.toml --out results/ --threads 4

Exit codes: 0 success, 2 invalid input, 3 an optimizer did not converge,
4 results dominated by censored runs.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, build_models, load
from .cscc import (
    CodebookTooLarge,
    SubblockType,
    generate_codebook,
    quantize_type,
    rate_penalty,
    read_codebook,
    sliding_window_check,
    write_codebook,
)
from .mimo import mimo_region
from .prob_core import mutual_information
from .simulator import ExperimentConfig, estimate_far, estimate_wadd, fit_delay_slope, max_error_probability
from .tradeoff import region_sweep, scalar_gaussian_region

log = logging.getLogger("qcdtradeoff")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_CENSORED = 4


@dataclass
class RunManifest:
    command: str
    config_path: str
    seed: int
    out_dir: str
    version: str
    timestamp: str

    def digest(self, resolved: dict, units: str) -> str:
        """SHA-256 over everything that determines the results (not the timestamp)."""
        payload = {
            "command": self.command,
            "config": resolved,
            "seed": self.seed,
            "version": self.version,
            "units": units,
        }
        return hashlib.sha256(_dumps(payload).encode()).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


class _Run:
    """Output bookkeeping shared by every command."""

    def __init__(self, command: str, args, resolved: dict):
        self.resolved = resolved
        self.units = "bits" if args.bits else "nats"
        self.scale = 1.0 / math.log(2) if args.bits else 1.0
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(
            command=command,
            config_path=str(args.config),
            seed=resolved["seed"],
            out_dir=str(args.out),
            version=__version__,
            timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        )
        self.hash = self.manifest.digest(resolved, self.units)

    def write_json(self, name: str, body: dict) -> Path:
        doc = {
            "manifest": {**asdict(self.manifest), "hash": self.hash},
            "config": self.resolved,
            "units": self.units,
            **body,
        }
        path = self.out / name
        path.write_text(_dumps(doc) + "\n")
        return path

    def header(self) -> str:
        return f"manifest {self.hash} units={self.units}"

    def write_csv(self, name: str, columns, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.header()}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --------------------------------------------------------------------------
# region


def cmd_region(args, resolved: dict) -> int:
    run = _Run("region", args, resolved)
    comm, model = build_models(resolved["channel"])
    reg = resolved["region"]
    kind = resolved["channel"]["kind"]
    if kind == "discrete":
        curve = region_sweep(
            comm, model, reg["lambda_grid"], tol=reg["tol"], max_iter=reg["max_iter"], check=False
        )
    elif kind == "scalar_gaussian":
        curve = scalar_gaussian_region(model, knots=reg["resolution"])
    else:
        curve = mimo_region(model, resolution=reg["resolution"], seed=resolved["seed"])

    curve.write_csv(run.out / "region.csv", scale=run.scale, header_comment=run.header())
    violations = curve.invariant_violations()
    summary = curve.summary(scale=run.scale)
    run.write_json(
        "region.json",
        {
            "region": summary,
            "invariant_violations": violations,
            "points": [
                {"lambda": lam, "delta": d * run.scale, "rate": r * run.scale} for lam, d, r in curve.rows()
            ],
        },
    )
    print(
        f"C={summary['capacity']:.6f} Delta(C)={summary['delta_at_capacity']:.6f} "
        f"Delta*={summary['delta_star']:.6f} R(Delta*)={summary['rate_at_delta_star']:.6f} {run.units}"
    )
    if not curve.converged or violations:
        for v in violations:
            log.error("region invariant: %s", v)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# --------------------------------------------------------------------------
# codebook


def _build_codebook(resolved: dict):
    cb = resolved["codebook"]
    if cb["file"] is not None:
        return read_codebook(cb["file"])
    if cb["counts"] is None and cb["px"] is None:
        raise ConfigError("needs [codebook] px or counts, or a codebook file", "codebook")
    t = SubblockType(tuple(cb["counts"])) if cb["counts"] is not None else quantize_type(cb["px"], cb["L"])
    return generate_codebook(t, cb["k"], cb["messages"], cb["seed"])


def _require_discrete(resolved: dict, command: str):
    if resolved["channel"]["kind"] != "discrete":
        raise ConfigError(f"'{command}' needs a discrete channel", "channel.kind")


def cmd_codebook(args, resolved: dict) -> int:
    run = _Run("codebook", args, resolved)
    book = _build_codebook(resolved)
    t = book.subblock_type
    path = run.out / "codebook.txt"
    write_codebook(path, book, comments=[run.header()])
    reread = read_codebook(path)
    if not np.array_equal(reread.codewords, book.codewords):
        raise RuntimeError("codebook round trip changed the codewords")

    stats = {
        "file": path.name,
        "L": t.L,
        "k": book.k,
        "n": book.n,
        "messages": book.num_messages,
        "counts": list(t.counts),
        "type": t.distribution.probs.tolist(),
        "composition_exact": reread.composition_exact(),
        "rate_penalty": rate_penalty(t) * run.scale,
    }
    if resolved["channel"]["kind"] == "discrete":
        comm, _ = build_models(resolved["channel"])
        if comm.n_inputs != t.alphabet_size:
            raise ConfigError("codebook alphabet differs from the channel input alphabet", "codebook.counts")
        info = mutual_information(t.distribution, comm)
        stats["mutual_information"] = info * run.scale
        stats["rate_lower_end"] = (info - rate_penalty(t)) * run.scale
    eps = resolved["codebook"]["window_eps"]
    if eps is not None:
        windows = [sliding_window_check(cw, t.distribution, eps, step=1) for cw in book.codewords]
        stats["window_eps"] = eps
        stats["window_L0"] = None if any(w is None for w in windows) else max(windows)
    run.write_json("codebook.json", {"codebook": stats})
    print(f"wrote {book.num_messages} codewords of length {book.n} to {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate


def _experiment(resolved: dict, book, model, comm, threads: int) -> ExperimentConfig:
    det, camp = resolved["detector"], resolved["campaign"]
    if det["threshold"] is None and det["alpha"] is None:
        raise ConfigError("needs [detector] threshold or alpha", "detector")
    pts = camp["change_points"]
    if pts is not None:
        pts = [math.inf if p == "inf" else p for p in pts]
        for p in pts:
            if p != math.inf and p > book.n:
                raise ConfigError(f"change point {p} exceeds the horizon n={book.n}", "campaign.change_points")
    return ExperimentConfig(
        codebook=book,
        model=model,
        comm=comm,
        threshold=det["threshold"],
        alpha=det["alpha"],
        change_points=pts,
        runs=camp["runs"],
        seed=resolved["seed"],
        codewords=camp["codewords"],
        horizon_cap=camp["horizon_cap"],
        max_censored_fraction=camp["max_censored_fraction"],
        threads=threads,
    )


def _horizon_warnings(cfg: ExperimentConfig, D: float, b_values) -> list:
    warnings = []
    if D <= 0:
        warnings.append("codewords carry no sensing information; delays are unbounded")
        return warnings
    finite = [nu for nu in cfg.sweep() if nu != math.inf]
    last = max(finite) if finite else 1
    need = max(b_values) / D
    if last - 1 + need > cfg.n:
        warnings.append(
            f"horizon n={cfg.n} is short: change point {last} plus the expected delay {need:.1f} exceeds it"
        )
    return warnings


def cmd_simulate(args, resolved: dict) -> int:
    _require_discrete(resolved, "simulate")
    run = _Run("simulate", args, resolved)
    comm, model = build_models(resolved["channel"])
    book = _build_codebook(resolved)
    if book.alphabet_size != model.n_inputs:
        raise ConfigError("codebook alphabet differs from the channel input alphabet", "codebook.counts")
    cfg = _experiment(resolved, book, model, comm, args.threads)
    camp = resolved["campaign"]
    D = float(np.mean(model.symbol_cost(book.codewords[0][: book.L])))
    b_values = [cfg.b] + list(camp["b_grid"] or [])
    report = {"threshold": cfg.b, "divergence": D * run.scale, "warnings": _horizon_warnings(cfg, D, b_values)}
    censored = False

    if camp["far"]:
        far = estimate_far(cfg)
        report["far"] = far.to_dict()
        censored |= far.lower_bound_only
        if cfg.alpha is not None:
            report["calibration"] = {"alpha": cfg.alpha, "far_upper": far.ci_high, "passes": far.ci_high <= cfg.alpha}
    if camp["wadd"]:
        est = estimate_wadd(cfg)
        report["wadd"] = est.to_dict()
        censored |= est.flagged
        run.write_csv(
            "wadd_cells.csv",
            ["codeword", "nu", "mean_delay", "se", "censored", "runs"],
            [(c.codeword, c.nu, c.mean, c.se, c.censored, c.runs) for c in est.cells],
        )
    if camp["b_grid"] is not None:
        fit = fit_delay_slope(cfg, camp["b_grid"])
        body = fit.to_dict()
        body["divergence"] = D * run.scale
        body["reference_slope"] = fit.reference_slope / run.scale
        body["slope"] = fit.slope / run.scale
        report["slope_fit"] = body
        censored |= not fit.fitted
        run.write_csv(
            "slope.csv",
            ["threshold", "wadd", "se", "censored", "runs"],
            [(b, e.mean, e.se, e.censored, e.runs) for b, e in zip(fit.thresholds, fit.estimates)],
        )
    if camp["decode_trials"] > 0:
        worst, per = max_error_probability(book, comm, camp["decode_trials"], seed=resolved["seed"])
        report["decoding"] = {"trials": camp["decode_trials"], "max_error": worst, "per_message": per}

    path = run.write_json("simulate.json", report)
    print(f"wrote {path}")
    for w in report["warnings"]:
        log.warning(w)
    return EXIT_CENSORED if censored else EXIT_OK


# --------------------------------------------------------------------------


COMMANDS = {"region": cmd_region, "codebook": cmd_codebook, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML or JSON experiment file")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--bits", action="store_true", help="report rates and divergences in bits")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qcdtradeoff", description="Rate versus detection-delay experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("region", parents=[common], help="rate-delay boundary curve")
    sub.add_parser("codebook", parents=[common], help="generate a constant subblock-composition codebook")
    sub.add_parser("simulate", parents=[common], help="false-alarm, delay and decoding campaign")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 1 << 64:
            raise ConfigError("seed must lie in [0, 2^64)", "--seed")
        if args.threads < 1:
            raise ConfigError("must be >= 1", "--threads")
        resolved = load(args.config, seed=args.seed)
        return COMMANDS[args.command](args, resolved)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except CodebookTooLarge as e:
        print(f"codebook error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
