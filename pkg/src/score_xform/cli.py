"""Command-line entry point: ``score-xform <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, EmptyData, ParseError, ScoreXformError
from .kef import LOSSES, KefModel, default_model, direct_loss, fisher_divergence, kef_fit
from .scorematch import SliceSampler
from .sde import VpSchedule
from .simplexlab import CategoricalSource, run_simplex_sampler
from .suites import SUITES

COMMAND_KEYS = {
    "verify": {"suite", "slices", "seed"},
    "sample-simplex": {"k", "epsilon", "w", "n_samples", "steps", "seed", "schedule", "t0", "component_std",
                       "frequencies"},
    "fit-kef": {"data", "dataset", "loss", "lam", "n_inducing", "slices_per_point", "sampler", "variances",
                "b_dist", "seed", "base_var", "grid"},
    "bench-losses": {"data", "dataset", "losses", "lam", "n_inducing", "slices_per_point", "variances", "b_dist",
                     "seed"},
}

SYNTHETIC = {
    "normal-1d": lambda rng, n: rng.standard_normal((n, 1)),
    "normal-3d": lambda rng, n: rng.standard_normal((n, 3)),
    "mixture-2d": lambda rng, n: np.where(rng.random((n, 1)) < 0.5, -1.5, 1.5) + 0.6 * rng.standard_normal((n, 2)),
    "banana-2d": lambda rng, n: _banana(rng, n),
}


def _banana(rng, n):
    z = rng.standard_normal((n, 2))
    return np.stack([z[:, 0], z[:, 1] + 0.5 * z[:, 0] ** 2 - 0.5], axis=1)


def read_csv_matrix(path) -> np.ndarray:
    """Numeric matrix from CSV, one row per point.

    Blank lines and ``#`` comments are skipped; a non-numeric first row is
    treated as a header.
    """
    rows, width = [], None
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or not "".join(fields).strip() or fields[0].lstrip().startswith("#"):
                continue
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise ParseError(f"non-numeric field in {fields!r}", lineno) from None
            if width is not None and len(values) != width:
                raise ParseError(f"expected {width} columns, found {len(values)}", lineno)
            if not all(np.isfinite(values)):
                raise ParseError("non-finite value", lineno)
            width = len(values)
            rows.append(values)
    if not rows:
        raise EmptyData(f"{path}: no data rows")
    return np.array(rows)


def write_csv_matrix(path, matrix):
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.17g")


def config_hash(command: str, config: dict) -> str:
    blob = json.dumps({"command": command, **config}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load_config(command: str, path, overrides: dict) -> dict:
    config = {}
    if path is not None:
        with open(path) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ConfigError("config file must hold a JSON object")
    config.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(config) - COMMAND_KEYS[command]
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    config.setdefault("seed", 0)
    if not isinstance(config["seed"], int) or config["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return config


def _load_data(config: dict) -> np.ndarray:
    if "data" in config:
        return read_csv_matrix(config["data"])
    ds = config.get("dataset", {"name": "normal-1d", "n_points": 2000})
    if isinstance(ds, str):
        ds = {"name": ds}
    unknown = set(ds) - {"name", "n_points", "seed"}
    if unknown:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
    name = ds.get("name", "normal-1d")
    if name not in SYNTHETIC:
        raise ConfigError(f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTHETIC)}")
    n = int(ds.get("n_points", 2000))
    if n < 1:
        raise EmptyData("dataset needs at least one point")
    rng = np.random.default_rng(np.random.SeedSequence(ds.get("seed", config["seed"]), spawn_key=(1,)))
    return SYNTHETIC[name](rng, n)


def _sampler_for(loss: str, dim: int, config: dict):
    kind = config.get("sampler")
    if loss in ("ssm", "ssm-vr"):
        return SliceSampler(kind or "linear-rademacher", dim)
    if loss == "gssm":
        if kind in (None, "quadratic-goe"):
            return SliceSampler.quadratic(dim, config.get("variances"), config.get("b_dist", "gaussian"))
        return SliceSampler(kind, dim)
    return None


def _fit(data, loss: str, config: dict, model: KefModel):
    return kef_fit(
        data, loss, _sampler_for(loss, data.shape[1], config), float(config.get("lam", 1e-3)), config["seed"],
        model=model, slices_per_point=int(config.get("slices_per_point", 1)),
        variances=config.get("variances"), b_dist=config.get("b_dist", "gaussian"),
    )


def _base_model(data, config: dict) -> KefModel:
    if "grid" in config:
        lo, hi, count = config["grid"]
        if data.shape[1] != 1:
            raise ConfigError("an inducing grid is only supported for 1D data")
        z = np.linspace(lo, hi, int(count))[:, None]
        var = config.get("base_var", 2.0 * data.var(axis=0))
        return KefModel(z, base_mean=data.mean(axis=0), base_var=var)
    model = default_model(data, int(config.get("n_inducing", 20)), config["seed"])
    if "base_var" in config:
        model = KefModel(model.inducing_points, base_mean=model.base_mean, base_var=config["base_var"])
    return model


def cmd_verify(config: dict) -> tuple[dict, bool]:
    suite = config.get("suite")
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    kwargs = {"seed": config["seed"]}
    if suite == "gssm-vr" and "slices" in config:
        kwargs["slices"] = int(config["slices"])
    checks = SUITES[suite](**kwargs)
    worst = max(checks, key=lambda c: np.inf if not c.passed else c.metric / c.tolerance if c.tolerance else 0.0)
    ok = all(c.passed for c in checks)
    report = {
        "suite": suite,
        "status": "pass" if ok else "fail",
        "metric": worst.metric,
        "tolerance": worst.tolerance,
        "checks": [c.to_dict() for c in checks],
    }
    return report, ok


def cmd_sample_simplex(config: dict, out: Path | None) -> tuple[dict, bool]:
    k = int(config.get("k", 12))
    source = CategoricalSource(k + 1, float(config.get("epsilon", 0.01)), config.get("frequencies"),
                               float(config.get("component_std", 0.1)))
    vp = VpSchedule.from_dict(config.get("schedule"))
    run = run_simplex_sampler(source, vp, float(config.get("w", 1.0)), int(config.get("n_samples", 10_000)),
                              int(config.get("steps", 500)), config["seed"], float(config.get("t0", 1e-3)))
    if out is not None:
        write_csv_matrix(out / "samples.csv", run.samples)
    report = {**run.stats(), "source_frequencies": source.frequencies.tolist()}
    return report, True


def cmd_fit_kef(config: dict, out: Path | None) -> tuple[dict, bool]:
    data = _load_data(config)
    loss = config.get("loss", "sm")
    if loss not in LOSSES:
        raise ConfigError(f"unknown loss {loss!r}; choose from {LOSSES}")
    base = _base_model(data, config)
    fit = _fit(data, loss, config, base)
    report = {
        "loss": loss,
        "fitted_loss": fit.loss,
        "sm_loss": direct_loss(fit.model, data).to_dict(),
        "base_sm_loss": direct_loss(base, data).to_dict(),
        "model": fit.model.to_dict(),
    }
    name = config.get("dataset", {}).get("name") if isinstance(config.get("dataset"), dict) else config.get("dataset")
    if "data" not in config and name in (None, "normal-1d", "normal-3d"):
        report["fisher_divergence"] = fisher_divergence(fit.model, data, lambda x: -x)
        report["base_fisher_divergence"] = fisher_divergence(base, data, lambda x: -x)
    ok = bool(np.all(np.isfinite(fit.model.alpha)))
    if out is not None:
        (out / "model.json").write_text(json.dumps(fit.model.to_dict(), indent=2, sort_keys=True) + "\n")
    return report, ok


def cmd_bench_losses(config: dict) -> tuple[dict, bool]:
    data = _load_data(config)
    losses = config.get("losses", list(LOSSES))
    base = _base_model(data, config)
    rows = []
    for loss in losses:
        if loss not in LOSSES:
            raise ConfigError(f"unknown loss {loss!r}; choose from {LOSSES}")
        fit = _fit(data, loss, config, base)
        own = direct_loss(fit.model, data, loss, _sampler_for(loss, data.shape[1], config), config["seed"],
                          int(config.get("slices_per_point", 1)), variances=config.get("variances"),
                          b_dist=config.get("b_dist", "gaussian"))
        sm = direct_loss(fit.model, data)
        rows.append({
            "loss": loss,
            "objective": own.value,
            "objective_stderr": own.stderr,
            "sm_loss": sm.value,
            "sm_stderr": sm.stderr,
        })
    return {"n_points": int(data.shape[0]), "dim": int(data.shape[1]), "table": rows}, True


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="score-xform", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_KEYS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON parameter block")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="directory for report.json and artifacts")
        if name == "verify":
            p.add_argument("--suite", choices=sorted(SUITES))
            p.add_argument("--slices", type=int)
        if name == "sample-simplex":
            p.add_argument("--w", type=float)
            p.add_argument("--n-samples", dest="n_samples", type=int)
            p.add_argument("--steps", type=int)
        if name in ("fit-kef", "bench-losses"):
            p.add_argument("--data", type=str, help="CSV file, one row per point")
        if name == "fit-kef":
            p.add_argument("--loss", choices=LOSSES)
    return parser


def _thread_limit():
    raw = os.environ.get("SCORE_XFORM_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SCORE_XFORM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("SCORE_XFORM_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    out = args.out
    try:
        config = load_config(args.command, args.config, overrides)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        with _thread_limit():
            if args.command == "verify":
                body, ok = cmd_verify(config)
            elif args.command == "sample-simplex":
                body, ok = cmd_sample_simplex(config, out)
            elif args.command == "fit-kef":
                body, ok = cmd_fit_kef(config, out)
            else:
                body, ok = cmd_bench_losses(config)
    except (ScoreXformError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = {
        "command": args.command,
        "version": __version__,
        "config_hash": config_hash(args.command, config),
        "config": config,
        **body,
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out is not None:
        (out / "report.json").write_text(text)
    sys.stdout.write(text)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
