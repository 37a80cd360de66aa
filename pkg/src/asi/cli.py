"""Command-line entry point.

Subcommands:

    run             full pipeline run, artifacts into dump_dir
    sweep           repeat the run across values of one parameter
    ddim-roundtrip  invert-then-generate consistency check
    dump-masks      single layer application, masks and renders only
    selftest        in-binary invariant suites of every module

Configs are flat ``key = value`` text files (UTF-8, ``#`` comments, blank
lines ignored); ``--set key=value`` overrides apply after the file, left to
right. Unknown keys are rejected. Exit codes: 0 success, 1 invalid
configuration or I/O failure, 2 an internal invariant failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .adablending import BlendConfig, asi_layer
from .ddim import OracleDenoiser, ddim_generate, ddim_invert, dump_trajectory, make_schedule
from .errors import AsiError, ConfigError
from .harness import (
    SWEEPABLE_PARAMS,
    ExperimentConfig,
    render_mask_pgm,
    run_pipeline,
    sweep,
    synth_inputs,
)
from .numeric import Matrix, Rng, randn_matrix
from .sica import project_kv, project_q
from .tensorio import save_tensor

__all__ = ["parse_config", "main", "entrypoint"]

ROUNDTRIP_TOLERANCE = 1e-6


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# key -> (parser, target). Targets starting with "blend." land in BlendConfig.
_CONFIG_KEYS: dict[str, tuple] = {
    "seed": (int, "seed"),
    "heads": (int, "heads"),
    "head_dim": (int, "head_dim"),
    "positions": (int, "positions"),
    "tokens": (int, "tokens"),
    "timesteps": (int, "timesteps"),
    "layers_per_step": (int, "layers_per_step"),
    "n": (int, "blend.n"),
    "alpha": (float, "blend.alpha"),
    "eps": (float, "blend.eps"),
    "fusion": (str, "blend.fusion"),
    "perturbation": (float, "perturbation"),
    "apply_asi": (_parse_bool, "apply_asi"),
    "dump_dir": (Path, "dump_dir"),
}


def _parse_kv_line(line: str, origin: str) -> tuple[str, str] | None:
    stripped = line.split("#", 1)[0].strip()
    if not stripped:
        return None
    if "=" not in stripped:
        raise ConfigError(f"{origin}: expected 'key = value', got {line.strip()!r}")
    key, value = stripped.split("=", 1)
    return key.strip(), value.strip()


def parse_config(path: str | Path | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Build a validated config from an optional file plus override strings.

    Raises FileNotFoundError for a missing file and ConfigError, naming the
    offending key, for unknown keys or unparseable values.
    """
    pairs: list[tuple[str, str]] = []
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            parsed = _parse_kv_line(line, f"{path}:{lineno}")
            if parsed:
                pairs.append(parsed)
    for item in overrides:
        parsed = _parse_kv_line(item, f"--set {item!r}")
        if parsed is None:
            raise ConfigError(f"--set {item!r}: expected 'key=value'")
        pairs.append(parsed)

    plain: dict = {}
    blend: dict = {}
    for key, raw in pairs:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        parser, target = _CONFIG_KEYS[key]
        try:
            value = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})") from exc
        if target.startswith("blend."):
            blend[target.split(".", 1)[1]] = value
        else:
            plain[target] = value
    try:
        return ExperimentConfig(blend=BlendConfig(**blend), **plain)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable, applied left to right)",
    )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config, args.overrides)
    report = run_pipeline(cfg)
    print(f"run complete: {cfg.timesteps} steps into {cfg.dump_dir}")
    print(f"blended_fraction = {report.blended_fraction!r}")
    print(f"preserved_mse    = {report.preserved_mse!r}")
    print(f"features         = {report.output_feature_path}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config, args.overrides)
    if args.param not in SWEEPABLE_PARAMS:
        raise ConfigError(f"unknown sweep parameter {args.param!r}; choose from {SWEEPABLE_PARAMS}")
    caster = int if args.param in ("n", "seed") else float
    try:
        values = [caster(v) for v in args.values.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"invalid sweep value list {args.values!r} ({exc})") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")
    reports = sweep(cfg, args.param, values)
    for value, report in zip(values, reports):
        print(f"{args.param}={value}: blended_fraction={report.blended_fraction!r}")
    print(f"combined csv: {cfg.dump_dir / 'sweep.csv'}")
    return 0


def _cmd_ddim_roundtrip(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config, args.overrides)
    rng = Rng(cfg.seed)
    x0 = randn_matrix(rng, cfg.positions, cfg.model_dim)
    noise = randn_matrix(rng, cfg.positions, cfg.model_dim)
    sched = make_schedule(cfg.timesteps)
    denoiser = OracleDenoiser(true_noise=noise, true_x0=x0)
    upward = ddim_invert(x0, denoiser, sched, cfg.timesteps)
    downward = ddim_generate(upward[-1].x, denoiser, sched, cfg.timesteps)
    if args.dump:
        manifest = dump_trajectory(upward, sched, cfg.dump_dir / "trajectory")
        print(f"trajectory manifest: {manifest}")
    error = float(abs(downward[-1].x.a - x0.a).max())
    print(f"max roundtrip error over {cfg.timesteps} steps: {error!r}")
    if error >= ROUNDTRIP_TOLERANCE:
        print(f"FAIL: roundtrip error >= {ROUNDTRIP_TOLERANCE}", file=sys.stderr)
        return 2
    return 0


def _cmd_dump_masks(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config, args.overrides)
    inputs = synth_inputs(cfg)
    q = project_q(inputs.spatial, inputs.params)
    k_s, v_s = project_kv(inputs.style_prompt, inputs.params)
    k_c, v_c = project_kv(inputs.content_prompt, inputs.params)
    result = asi_layer(q, k_s, v_s, k_c, v_c, cfg.blend)
    out_dir = cfg.dump_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    save_tensor(out_dir / "head_mask.asit", result.head_mask.dense(cfg.positions, cfg.head_dim))
    save_tensor(out_dir / "spatial_mask.asit", result.spatial_mask.data)
    save_tensor(out_dir / "fused_mask.asit", result.fused_mask.data)
    for i in range(cfg.heads):
        render_mask_pgm(out_dir / f"mask_head_{i}.pgm", result.fused_mask.data[i])
    print(f"masks written to {out_dir} (heads selected: {result.head_mask.selected_count})")
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_selftest

    failures = run_selftest(verbose=True)
    return 2 if failures else 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="asi",
        description="dual-track attention with mask-guided content-style blending",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full pipeline")
    _add_config_args(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run once per value of one parameter")
    _add_config_args(p_sweep)
    p_sweep.add_argument("--param", required=True, help=f"one of {', '.join(SWEEPABLE_PARAMS)}")
    p_sweep.add_argument("--values", required=True, help="comma-separated value list")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_rt = sub.add_parser("ddim-roundtrip", help="check invert-then-generate consistency")
    _add_config_args(p_rt)
    p_rt.add_argument("--dump", action="store_true", help="also dump the latent trajectory")
    p_rt.set_defaults(func=_cmd_ddim_roundtrip)

    p_masks = sub.add_parser("dump-masks", help="render masks for one layer application")
    _add_config_args(p_masks)
    p_masks.set_defaults(func=_cmd_dump_masks)

    p_self = sub.add_parser("selftest", help="run every module's invariant suite")
    p_self.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AsiError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
