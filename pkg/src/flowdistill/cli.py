"""Command-line entry point: ``flowdistill <subcommand> ...``.

Every subcommand computes its results in memory first and only then writes,
so a run that fails validation (exit 1) leaves no files behind. Each run
also writes a JSON manifest recording its configuration, seed and the
SHA-256 of every artifact. Directory outputs get ``manifest.json`` inside;
single-file outputs get ``<file>.manifest.json`` next to them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import read_config
from .core import FlowDistillError, read_pfm, write_pfm, write_pgm
from .optim import (
    ABLATION_KINDS,
    AdamConfig,
    LossKind,
    Settings,
    ablation_to_csv,
    depth_grid,
    evaluate,
    grad_check,
    optimize_depth,
    report_to_csv,
    settings_from_config,
    settings_to_config,
    sweep_landscape,
    trace_to_csv,
)
from .losses import sigma_to_depth
from .scene import (
    SCENE_FILES,
    RenderedScene,
    load_scene,
    render,
    save_scene,
    spec_from_config,
    spec_to_config,
    stress_scene,
)
from .validation import check_map
from .warping import PaddingMode, inverse_warp


# --- argument types (syntax errors here are usage errors, exit 2) --------------

def _range(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step, got {text!r}") from None
    return lo, hi, step


def _pixel(text: str) -> tuple[int, int]:
    try:
        row, col = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected row,col, got {text!r}") from None
    return row, col


def _kinds(text: str) -> list[str]:
    return [k.strip() for k in text.split(",") if k.strip()]


def _decay(text: str) -> int | None:
    if text.lower() == "none":
        return None
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'none', got {text!r}") from None


# --- shared plumbing -------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    path: Path, command: str, config: dict, seed, artifacts: Sequence[Path], inputs: Sequence[Path] = ()
) -> None:
    manifest = {
        "tool": "flowdistill",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": {k: config[k] for k in sorted(config)},
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
        "inputs": {p.name: _sha256(p) for p in sorted(inputs)},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _scene_inputs(args) -> list[Path]:
    return [Path(args.scene) / name for name in SCENE_FILES + ("scene.cfg",)]


def _settings(args) -> Settings:
    if args.loss_config is None:
        return Settings()
    return settings_from_config(read_config(args.loss_config))


def _adam(args) -> AdamConfig:
    return AdamConfig(lr=args.lr, steps=args.steps, decay_step=args.decay_step)


def _init_sigma(scene: RenderedScene, settings: Settings, init_depth: float) -> np.ndarray:
    if not init_depth > 0:
        raise FlowDistillError(f"init depth must be > 0, got {init_depth}")
    return np.full(scene.depth_gt.shape, float(settings.activation.sigma_for(init_depth)))


def _run_config(settings: Settings, extra: dict) -> dict:
    cfg = {f"loss.{k}": v for k, v in settings_to_config(settings).items()}
    cfg.update(extra)
    return cfg


def _optim_config(args) -> dict:
    return {"init_depth": args.init_depth, "lr": args.lr, "steps": args.steps, "decay_step": args.decay_step}


# --- subcommands -------------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    if args.stress:
        spec, pixel = stress_scene()
    else:
        spec, pixel = spec_from_config(read_config(args.config)), None
    scene = render(spec, args.seed)
    out = Path(args.out)
    written = save_scene(scene, out)
    config = dict(spec_to_config(spec))
    if pixel is not None:
        config["designated_pixel"] = f"{pixel[0]},{pixel[1]}"
    _write_manifest(out / "manifest.json", "gen-scene", config, args.seed, written)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_landscape(args) -> int:
    scene = load_scene(args.scene)
    settings = _settings(args)
    curve = sweep_landscape(scene, args.pixel, depth_grid(*args.range), settings)
    out = _write_text(Path(args.out), curve.to_csv())
    cfg = _run_config(settings, {"pixel": f"{args.pixel[0]},{args.pixel[1]}", "range": ":".join(map(repr, args.range))})
    _write_manifest(out.with_name(out.name + ".manifest.json"), "landscape", cfg, None, [out], _scene_inputs(args))
    print(f"wrote {len(curve.depths)} samples to {out}")
    return 0


def cmd_optimize(args) -> int:
    scene = load_scene(args.scene)
    settings = _settings(args)
    kind = LossKind.parse(args.loss)
    sigma, trace = optimize_depth(scene, _init_sigma(scene, settings, args.init_depth), kind, _adam(args), settings)
    depth = sigma_to_depth(sigma, settings.activation)
    report = evaluate(depth, scene, settings.activation.max_depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "depth.pfm", depth)
    write_pfm(out / "sigma.pfm", sigma)
    written = [
        out / "depth.pfm",
        out / "sigma.pfm",
        _write_text(out / "trace.csv", trace_to_csv(trace)),
        _write_text(out / "eval.csv", report_to_csv(report)),
    ]
    cfg = _run_config(settings, {"loss": str(kind), **_optim_config(args)})
    _write_manifest(out / "manifest.json", "optimize", cfg, None, written, _scene_inputs(args))
    print(f"{kind}: abs_rel={report.abs_rel:.6g} final_loss={trace[-1]:.6g}")
    return 0


def cmd_ablate(args) -> int:
    scene = load_scene(args.scene)
    settings = _settings(args)
    # rows keep the caller's spelling, so Ldr+Lfp is not relabelled Lfd
    kinds = [(label, LossKind.parse(label)) for label in args.losses]
    if not kinds:
        raise FlowDistillError("no losses given")
    init = _init_sigma(scene, settings, args.init_depth)
    results = []
    for label, kind in kinds:
        sigma, _ = optimize_depth(scene, init, kind, _adam(args), settings)
        results.append((label, evaluate(sigma_to_depth(sigma, settings.activation), scene, settings.activation.max_depth)))
    out = _write_text(Path(args.out), ablation_to_csv(results))
    cfg = _run_config(settings, {"losses": ",".join(label for label, _ in kinds), **_optim_config(args)})
    _write_manifest(out.with_name(out.name + ".manifest.json"), "ablate", cfg, None, [out], _scene_inputs(args))
    for name, report in results:
        print(f"{name:10s} abs_rel={report.abs_rel:.6g}")
    return 0


def cmd_grad_check(args) -> int:
    scene = load_scene(args.scene)
    settings = _settings(args)
    act = settings.activation
    if args.depth is not None:
        depth = check_map(read_pfm(args.depth), "depth", scene.depth_gt.shape)
    else:
        # a seeded perturbation of the truth keeps sites off the regression kink
        rng = np.random.default_rng(args.seed)
        depth = scene.depth_gt * np.exp(rng.uniform(-0.2, 0.2, scene.depth_gt.shape))
    sigma = act.sigma_for(depth)
    worst = grad_check(args.loss, scene, sigma, args.trials, args.h_rel, settings, args.seed)
    text = f"metric,value\nmax_rel_error,{float(worst)!r}\ntrials,{args.trials}\n"
    out = _write_text(Path(args.out), text)
    cfg = _run_config(settings, {"loss": str(LossKind.parse(args.loss)), "trials": args.trials, "h_rel": args.h_rel})
    _write_manifest(out.with_name(out.name + ".manifest.json"), "grad-check", cfg, args.seed, [out], _scene_inputs(args))
    print(f"max_rel_error={worst:.3e} over {args.trials} sites")
    return 0


def cmd_warp(args) -> int:
    scene = load_scene(args.scene)
    depth = scene.depth_gt if args.depth is None else read_pfm(args.depth)
    depth = check_map(depth, "depth", scene.depth_gt.shape)
    result = inverse_warp(scene.source, depth, scene.rig, PaddingMode(args.padding))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "warped.pfm", result.image)
    write_pgm(out / "warped.pgm", np.clip(result.image, 0.0, 1.0))
    write_pfm(out / "in_bounds.pfm", result.in_bounds)
    written = [out / "warped.pfm", out / "warped.pgm", out / "in_bounds.pfm"]
    cfg = {"padding": args.padding, "depth": "depth_gt" if args.depth is None else Path(args.depth).name}
    _write_manifest(out / "manifest.json", "warp", cfg, None, written, _scene_inputs(args))
    print(f"wrote warped view to {out}")
    return 0


def cmd_eval(args) -> int:
    scene = load_scene(args.scene)
    depth = check_map(read_pfm(args.depth), "depth", scene.depth_gt.shape)
    report = evaluate(depth, scene, args.max_depth)
    out = _write_text(Path(args.out), report_to_csv(report))
    _write_manifest(out.with_name(out.name + ".manifest.json"), "eval", {"max_depth": args.max_depth}, None, [out], _scene_inputs(args))
    for name, value in report.rows():
        print(f"{name:9s} {value:.6g}")
    return 0


# --- parser ----------------------------------------------------------------------------

def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    defaults = AdamConfig()
    p.add_argument("--init-depth", type=float, default=10.0, help="constant initial depth in metres")
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--steps", type=int, default=defaults.steps)
    p.add_argument("--decay-step", type=_decay, default=defaults.decay_step, help="step of the x0.1 decay, or 'none'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowdistill", description="Flow-distillation loss laboratory on synthetic stereo scenes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen-scene", cmd_gen_scene, "render a scene to a directory of PFM/PGM files")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="flat key=value scene config")
    src.add_argument("--stress", action="store_true", help="use the built-in stress scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("landscape", cmd_landscape, "sweep every loss at one pixel over a depth range")
    p.add_argument("--scene", required=True)
    p.add_argument("--pixel", type=_pixel, required=True, help="row,col")
    p.add_argument("--range", type=_range, default=(1.0, 80.0, 0.05), help="lo:hi:step (default 1:80:0.05)")
    p.add_argument("--loss-config")
    p.add_argument("--out", required=True)

    p = add("optimize", cmd_optimize, "fit a depth field with one loss combination")
    p.add_argument("--scene", required=True)
    p.add_argument("--loss", default="Lfd+Mf")
    _add_optim_flags(p)
    p.add_argument("--loss-config")
    p.add_argument("--out", required=True)

    p = add("ablate", cmd_ablate, "optimize from one init with several loss combinations")
    p.add_argument("--scene", required=True)
    p.add_argument("--losses", type=_kinds, default=list(ABLATION_KINDS), help="comma-separated, e.g. Lp,Lfd+Mf")
    _add_optim_flags(p)
    p.add_argument("--loss-config")
    p.add_argument("--out", required=True)

    p = add("grad-check", cmd_grad_check, "compare analytic and finite-difference gradients")
    p.add_argument("--scene", required=True)
    p.add_argument("--loss", default="Lfd")
    p.add_argument("--depth", help="PFM depth to check at (default: seeded perturbation of the truth)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--h-rel", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-config")
    p.add_argument("--out", required=True)

    p = add("warp", cmd_warp, "inverse-warp the source view with a depth map")
    p.add_argument("--scene", required=True)
    p.add_argument("--depth", help="PFM depth (default: ground truth)")
    p.add_argument("--padding", choices=[m.value for m in PaddingMode], default="border")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "depth error metrics against the scene's ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--max-depth", type=float, default=80.0)
    p.add_argument("--out", required=True)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FlowDistillError, IndexError, OSError) as exc:
        print(f"flowdistill {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
