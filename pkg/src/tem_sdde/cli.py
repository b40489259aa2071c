"""Batch experiment driver.

Usage::

    tem-sdde {simulate,converge,moments,price} --config run.json [--out DIR] [--seed-override N]

Exit status: 0 on success, 2 for configuration errors, 3 for numerical
failures (non-finite states beyond the configured tolerance, or an implicit
step with no real root).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .analysis import MIN_PATHS
from .config import ExperimentConfig
from .engine import GridSpec, format_number, simulate_ensemble
from .errors import (
    GridError,
    HorizonError,
    InsufficientSampleError,
    ModelDomainError,
    NonFiniteStateError,
    NoRealRootError,
    StepSizeError,
)
from .experiments import Setup, chunk_ranges, map_chunks, run_convergence, run_moments, run_pricing
from .model import SIGMOID, constant_segment, constant_volatility
from .pricing import BarrierOptionSpec, BondSpec, write_price_csv
from .truncation import make_rule, verify_pi_admissibility

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def build_setup(cfg: ExperimentConfig) -> Setup:
    params = cfg.model.to_params(cfg.grid.tau)
    vol = SIGMOID if cfg.volatility.kind == "sigmoid" else constant_volatility(cfg.volatility.value)
    rule = make_rule(params, cfg.truncation.pi_exponent)
    return Setup(params=params, rule=rule, vol=vol, initial=constant_segment(cfg.initial.value),
                 seed=cfg.run.seed)


class Manifest:
    def __init__(self, cfg: ExperimentConfig, command: str):
        self.data = {
            "command": command,
            "config_hash": cfg.config_hash(),
            "seed": cfg.run.seed,
            "version": __version__,
            "warnings": [],
        }

    def record_pi(self, setup: Setup, deltas) -> None:
        report = verify_pi_admissibility(setup.rule, sorted(set(deltas), reverse=True))
        self.data["pi_admissible"] = report.admissible
        self.data["pi_check"] = [
            {"delta": d, "delta_quarter_times_pi": prod, "ok": ok} for d, prod, ok in report.entries
        ]
        self.data["warnings"].extend(report.warnings)

    def write(self, out: Path) -> None:
        text = json.dumps(self.data, indent=2, sort_keys=True, default=_json_default)
        (out / "manifest.json").write_text(text + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(type(obj))


def _check_nonfinite(cfg: ExperimentConfig, bad_paths: int, total: int, manifest: Manifest) -> None:
    frac = bad_paths / total
    manifest.data["nonfinite_fraction"] = frac
    if frac > cfg.run.nonfinite_tolerance:
        raise NumericalFailure(
            f"{bad_paths} of {total} paths produced non-finite states "
            f"(tolerance {cfg.run.nonfinite_tolerance})"
        )


def _single_grid(cfg: ExperimentConfig) -> GridSpec:
    if cfg.grid.M is None:
        raise ConfigError("grid.M: required for this command")
    return GridSpec.from_horizon(cfg.grid.tau, cfg.grid.M, cfg.grid.T)


def _simulate_chunk(setup: Setup, grid: GridSpec, paths, scheme: str):
    return simulate_ensemble(setup.params, setup.rule, grid, setup.initial, setup.vol,
                             setup.seed, paths, scheme, keep_noise=True)


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    setup = build_setup(cfg)
    grid = _single_grid(cfg)
    manifest = Manifest(cfg, "simulate")
    manifest.record_pi(setup, [grid.delta])
    paths_dir = out / "paths"
    paths_dir.mkdir(parents=True, exist_ok=True)
    chunks = chunk_ranges(cfg.run.n_paths, cfg.run.chunk_size)
    ensembles = map_chunks(_simulate_chunk, [(setup, grid, c, cfg.run.scheme) for c in chunks],
                           cfg.run.workers)
    bad = negative = 0
    files = []
    for ens in ensembles:
        bad += int(np.count_nonzero(ens.nonfinite_counts))
        negative += int(ens.negativity_counts.sum())
        for row in range(len(ens)):
            sim = ens.path(row)
            name = f"path_{sim.path_index:06d}.csv"
            sim.write_csv(paths_dir / name)
            files.append(f"paths/{name}")
    manifest.data.update(scheme=cfg.run.scheme, delta=grid.delta, n_paths=cfg.run.n_paths,
                         negative_states=negative, files=files)
    _check_nonfinite(cfg, bad, cfg.run.n_paths, manifest)
    manifest.write(out)
    return manifest.data


def cmd_converge(cfg: ExperimentConfig, out: Path) -> dict:
    g = cfg.grid
    if not g.M_ladder or len(g.M_ladder) < 3:
        raise ConfigError("grid.M_ladder: a convergence run needs at least 3 rungs")
    if g.M_reference is None:
        raise ConfigError("grid.M_reference: required for convergence runs")
    setup = build_setup(cfg)
    manifest = Manifest(cfg, "converge")
    manifest.record_pi(setup, [g.tau / m for m in g.M_ladder + [g.M_reference]])
    report = run_convergence(setup, g.M_ladder, g.M_reference, g.T, cfg.run.n_paths, p=cfg.run.p,
                             scheme=cfg.run.scheme, chunk_size=cfg.run.chunk_size,
                             workers=cfg.run.workers)
    report.write_csv(out / "convergence.csv")
    manifest.data.update(
        scheme=cfg.run.scheme,
        p=cfg.run.p,
        reference_delta=g.tau / g.M_reference,
        slope=report.slope,
        intercept=report.intercept,
        strictly_decreasing=report.strictly_decreasing,
        files=["convergence.csv"],
    )
    manifest.write(out)
    return manifest.data


def _order_tag(p: float) -> str:
    return format_number(int(p)) if float(p).is_integer() else format_number(p)


def cmd_moments(cfg: ExperimentConfig, out: Path) -> dict:
    setup = build_setup(cfg)
    grid = _single_grid(cfg)
    manifest = Manifest(cfg, "moments")
    manifest.record_pi(setup, [grid.delta])
    inverse = cfg.moments.inverse
    if inverse:
        for p in cfg.moments.orders:
            if not p > max(2.0, setup.params.rho - 1):
                raise ConfigError(f"moments.orders: inverse moments need p > 2 v (rho - 1), got {p}")
    run = run_moments(setup, grid, cfg.run.n_paths, cfg.moments.orders, inverse,
                      scheme=cfg.run.scheme, chunk_size=cfg.run.chunk_size,
                      workers=cfg.run.workers)
    _check_nonfinite(cfg, run.nonfinite_paths, cfg.run.n_paths, manifest)
    summary, files = [], []
    for p, acc in run.accumulators.items():
        report = acc.report(MIN_PATHS)
        name = f"moments_{'inv_' if inverse else ''}p{_order_tag(p)}.csv"
        report.write_csv(out / name)
        files.append(name)
        summary.append({"p": p, "sup_estimate": report.sup_estimate, "n_paths": report.n_paths,
                        "excluded_paths": report.excluded})
    manifest.data.update(scheme=cfg.run.scheme, delta=grid.delta, inverse=inverse,
                         moments=summary, files=files)
    manifest.write(out)
    return manifest.data


def cmd_price(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.pricing is None:
        raise ConfigError("pricing: block required for the price command")
    pr = cfg.pricing
    ladder = pr.M_ladder or cfg.grid.M_ladder or ([cfg.grid.M] if cfg.grid.M else None)
    if not ladder:
        raise ConfigError("pricing.M_ladder: no step sizes configured")
    setup = build_setup(cfg)
    manifest = Manifest(cfg, "price")
    manifest.record_pi(setup, [cfg.grid.tau / m for m in ladder])
    bond = BondSpec(pr.bond.maturity) if pr.bond else None
    barrier = (BarrierOptionSpec(pr.barrier.expiry, pr.barrier.strike, pr.barrier.barrier)
               if pr.barrier else None)
    run = run_pricing(setup, ladder, pr.horizon(), cfg.run.n_paths, bond=bond, barrier=barrier,
                      scheme=cfg.run.scheme, chunk_size=cfg.run.chunk_size,
                      workers=cfg.run.workers)
    bad = [est for _, _, est in run.rows if not np.isfinite(est.value)]
    if bad:
        raise NumericalFailure("non-finite price estimate")
    write_price_csv(out / "prices.csv", [(name, est) for name, _, est in run.rows])
    manifest.data.update(scheme=cfg.run.scheme, successive_gaps=run.successive_gaps,
                         files=["prices.csv"])
    manifest.write(out)
    return manifest.data


COMMANDS = {
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "moments": cmd_moments,
    "price": cmd_price,
}


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(part) for part in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tem-sdde", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed-override", type=int, help="replace run.seed")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if args.seed_override is not None:
            raw.setdefault("run", {})["seed"] = args.seed_override
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        print(f"config error:\n{_format_validation(err)}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](cfg, out)
    except (ConfigError, GridError, StepSizeError, HorizonError, ModelDomainError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, NonFiniteStateError, NoRealRootError,
            InsufficientSampleError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
