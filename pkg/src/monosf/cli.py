"""Command line entry point: ``monosf {synth,estimate,calibrate,eval}``.

Every failure prints one line ``error[<exit code>] <Kind>: <message>`` on
stderr.  Exit codes: 2 configuration, 3 I/O or format, 4 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, synth
from .config import RunConfig, load_run_config
from .depthprob import calibration_curve, fit_recalibration, mean_nll
from .errors import ConfigError, FormatError, MonoSFError, SizeMismatch
from .metrics import evaluate, median_epe
from .pipeline import Ablation, estimate
from .scenemodel import SceneFlowField

log = logging.getLogger("monosf")

DEFAULT_LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fail(kind: str, code: int, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"error[{code}] {kind}: {text}", file=sys.stderr)
    return code


# --- flow field files -------------------------------------------------------------------


def write_field(out_dir: Path, field: SceneFlowField) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_pfm(out_dir / "d0.pfm", field.d0)
    io.write_pfm(out_dir / "d1.pfm", field.d1)
    io.write_pfm(out_dir / "flow_u.pfm", field.flow[..., 0])
    io.write_pfm(out_dir / "flow_v.pfm", field.flow[..., 1])


def read_field(d: Path) -> SceneFlowField:
    d0, d1 = io.read_pfm(d / "d0.pfm"), io.read_pfm(d / "d1.pfm")
    fu, fv = io.read_pfm(d / "flow_u.pfm"), io.read_pfm(d / "flow_v.pfm")
    if not d0.shape == d1.shape == fu.shape == fv.shape:
        raise SizeMismatch(f"{d}: maps have different sizes")
    flow = np.stack([fu, fv], axis=-1).astype(np.float64)
    valid = np.isfinite(d0) & np.isfinite(d1) & np.isfinite(flow).all(axis=-1)
    return SceneFlowField(d0.astype(np.float64), d1.astype(np.float64), flow, valid)


# --- synth ----------------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg_path = Path(args.config) if args.config else synth.bundled_config_path()
    kv = io.read_kv(cfg_path)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    cfg = synth.config_from_kv(kv)
    scene = synth.render_pair(cfg)
    prior0, prior1, calib = synth.make_priors(scene, cfg.priors, cfg.seed)

    out = Path(args.out)
    gt = out / "gt"
    gt.mkdir(parents=True, exist_ok=True)
    io.write_pgm(out / "image0.pgm", scene.image0)
    io.write_pgm(out / "image1.pgm", scene.image1)
    io.write_pgm(out / "mask0.pgm", scene.mask0.astype(np.uint16))
    io.write_pgm(out / "mask1.pgm", scene.mask1.astype(np.uint16))
    io.write_mogd(out / "prior0.mogd", prior0)
    io.write_mogd(out / "prior1.mogd", prior1)
    io.write_mogc(out / "calib.mogc", calib)
    io.write_matches(out / "matches.txt", scene.matches)
    write_field(gt, scene.gt)
    io.write_pgm(gt / "valid_noc.pgm", scene.noc0.astype(np.uint8) * 255)
    io.write_pgm(gt / "instances.pgm", scene.mask0.astype(np.uint16))

    K = cfg.K
    run = {"fx": repr(K.fx), "fy": repr(K.fy), "cx": repr(K.cx), "cy": repr(K.cy)}
    run.update({k: f"{k}.{ext}" for k, ext in [("image0", "pgm"), ("image1", "pgm"), ("mask0", "pgm"), ("mask1", "pgm"),
                                                ("prior0", "mogd"), ("prior1", "mogd")]})
    run["matches"] = "matches.txt"
    io.write_kv(out / "run.cfg", run)
    manifest = {"source_config": str(cfg_path), **synth.config_to_kv(cfg)}
    io.write_kv(out / "manifest.txt", manifest)
    print(f"wrote fixture to {out}")
    return 0


# --- estimate -------------------------------------------------------------------------------


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _resolve(cfg: RunConfig, base: Path, key: str, flag_value):
    if flag_value is not None:
        return Path(flag_value)
    if key not in cfg.paths:
        raise ConfigError(f"no path given for {key} (flag --{key} or config key {key})")
    p = Path(cfg.paths[key])
    return p if p.is_absolute() else base / p


def cmd_estimate(args) -> int:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = load_run_config(args.config, overrides)
    base = Path(args.config).parent if args.config else Path.cwd()
    paths = {k: _resolve(cfg, base, k, getattr(args, k)) for k in ("image0", "image1", "prior0", "prior1", "mask0", "mask1", "matches")}

    img0, img1 = io.read_pgm(paths["image0"]), io.read_pgm(paths["image1"])
    prior0, prior1 = io.read_mogd(paths["prior0"]), io.read_mogd(paths["prior1"])
    mask0, mask1 = io.read_pgm(paths["mask0"]), io.read_pgm(paths["mask1"])
    if str(paths["matches"].name) == "auto":
        from .init import census_block_matches
        from .photometric import census_transform

        matches = census_block_matches(census_transform(img0), census_transform(img1))
        log.info("fallback matcher found %d matches", len(matches))
    else:
        matches = io.read_matches(paths["matches"])
    shape = img0.shape
    for name, arr in [("image1", img1), ("mask0", mask0), ("mask1", mask1)]:
        if arr.shape != shape:
            raise SizeMismatch(f"{name} is {arr.shape[1]}x{arr.shape[0]}, image0 is {shape[1]}x{shape[0]}")
    for name, p in [("prior0", prior0), ("prior1", prior1)]:
        if (p.height, p.width) != shape:
            raise SizeMismatch(f"{name} is {p.width}x{p.height}, image0 is {shape[1]}x{shape[0]}")

    recalib = None
    recalib_path = args.recalib if args.recalib is not None else (
        _resolve(cfg, base, "recalib", None) if "recalib" in cfg.paths else None)
    if recalib_path is not None:
        recalib = io.read_recalib(recalib_path)
    ablation = Ablation(pho=not args.no_pho, svd=not args.no_svd, smooth=not args.no_smooth,
                        prob_depth=not args.no_prob_depth, recalib=not args.no_recalib)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = estimate(img0.astype(np.float64), img1.astype(np.float64), prior0, prior1, mask0, mask1, matches, cfg,
                      recalib=recalib, ablation=ablation, trace_path=out / "trace.csv")
    write_field(out, result.flow)
    (out / "run.cfg").write_text(cfg.to_text(), encoding="utf-8")
    trace = result.result.trace
    print(f"energy {trace[0].total:.6g} -> {trace[-1].total:.6g} in {len(trace) - 1} iterations; wrote {out}")
    return 0


# --- calibrate ------------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    calib = io.read_mogc(args.samples)
    try:
        levels = [float(x) for x in args.levels.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--levels: {exc}") from exc
    if not levels or not all(0 < q < 1 for q in levels):
        raise ConfigError("--levels must be numbers in (0, 1)")
    r = fit_recalibration(calib)
    io.write_recalib(args.out, r)
    if args.curve:
        before = calibration_curve(calib, levels)
        after = calibration_curve(calib.recalibrated(r), levels)
        rows = [[repr(q), repr(f0), repr(f1)] for (q, f0), (_, f1) in zip(before, after)]
        io.write_csv(args.curve, ["level", "observed_before", "observed_after"], rows)
    print(f"a={r.a:.6g} b={r.b:.6g} tau_w={r.tau_w:.6g}; mean NLL {mean_nll(calib):.6g} -> {mean_nll(calib, r):.6g}")
    return 0


# --- eval -------------------------------------------------------------------------------------


def cmd_eval(args) -> int:
    gt_dir = Path(args.gt)
    cfg_path = args.config
    if cfg_path is None and (gt_dir.parent / "run.cfg").exists():
        cfg_path = gt_dir.parent / "run.cfg"
    cfg = load_run_config(cfg_path, _overrides(args.set))
    est = read_field(Path(args.est))
    gt = read_field(gt_dir)
    if est.d0.shape != gt.d0.shape:
        raise SizeMismatch(f"estimate is {est.d0.shape[1]}x{est.d0.shape[0]}, ground truth is {gt.d0.shape[1]}x{gt.d0.shape[0]}")
    valid = gt.valid
    if (gt_dir / "valid_noc.pgm").exists():
        valid = valid & (io.read_pgm(gt_dir / "valid_noc.pgm") > 0)
    fg = io.read_pgm(gt_dir / "instances.pgm") if (gt_dir / "instances.pgm").exists() else None
    res = evaluate(est, gt, cfg.eval_config(), valid, fg)
    rows = [[name, repr(r.bg), repr(r.fg), repr(r.all)] for name, r in res.items()]
    epe = median_epe(est.flow, gt.flow, valid)
    rows.append(["EPE_median", "", "", repr(epe)])
    io.write_csv(args.out, ["metric", "bg", "fg", "all"], rows)
    print(" ".join(f"{name}={r.all:.3f}" for name, r in res.items()) + f" EPE_median={epe:.4f}")
    return 0


# --- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="monosf", description="Monocular piecewise-rigid scene flow on synthetic or ingested data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic fixture set")
    s.add_argument("out", help="output directory")
    s.add_argument("--config", help="scene config (key=value); default: bundled road scene")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("estimate", help="estimate scene flow for one image pair")
    e.add_argument("--config", help="run config (key=value); relative paths resolve against its directory")
    e.add_argument("--out", required=True, help="output directory")
    for key in ("image0", "image1", "prior0", "prior1", "mask0", "mask1"):
        e.add_argument(f"--{key}")
    e.add_argument("--matches", help="matches file, or 'auto' for built-in Census block matching")
    e.add_argument("--recalib", help="recalibration map file")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int, help="worker cap (the solver runs single-threaded)")
    e.add_argument("--no-pho", action="store_true")
    e.add_argument("--no-svd", action="store_true")
    e.add_argument("--no-smooth", action="store_true")
    e.add_argument("--no-prob-depth", action="store_true")
    e.add_argument("--no-recalib", action="store_true")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("calibrate", help="fit a recalibration map on a calibration set")
    c.add_argument("samples", help="MOGC calibration set")
    c.add_argument("--out", required=True, help="recalibration map file")
    c.add_argument("--curve", help="calibration curve CSV")
    c.add_argument("--levels", default=",".join(str(q) for q in DEFAULT_LEVELS))
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("eval", help="score an estimate against ground truth")
    v.add_argument("est", help="directory with d0/d1/flow_u/flow_v PFMs")
    v.add_argument("gt", help="ground-truth directory (same layout, optional valid_noc.pgm and instances.pgm)")
    v.add_argument("--config", help="run config providing fx and thresholds; default: run.cfg next to the gt directory")
    v.add_argument("--set", action="append", metavar="KEY=VALUE")
    v.add_argument("--out", default="metrics.csv")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail("UsageError", 2, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except MonoSFError as exc:
        return _fail(type(exc).__name__, exc.code, exc)
    except OSError as exc:
        return _fail("IOError", 3, exc)
    except ValueError as exc:
        # contract violations surfacing from library code are configuration problems
        return _fail("ValueError", 2, exc)


if __name__ == "__main__":
    sys.exit(main())
