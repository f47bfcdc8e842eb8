"""Command-line interface: fuse, register, eval, bench, degrade.

Configuration is a flat key=value text file; command-line --set overrides win
over the file, which wins over the built-in profile and defaults. The fully
resolved configuration is echoed into the output directory so any run can be
replayed exactly.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, evalbench, imgcore, pipelines, registration, rgif, rgmaf

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

DEFAULTS = {
    "seed": 0,
    "jobs": 0,  # 0 = one worker per CPU for fuse; bench always runs 1
    "profile": "default",
    "guided.radius": 8,
    "guided.epsilon": 0.0,
    "guided.subsample": 1,
    "registration.max_iterations": 100,
    "registration.termination_eps": 1e-5,
    "registration.mode": "ecc_affine",
    "registration.pyramid_levels": 3,
    "registration.ransac_iters": 2000,
    "registration.ransac_thresh": 3.0,
    "registration.ransac_seed": None,  # falls back to the global seed
    "registration.flow_cap": 16.0,
    "registration.solve_max_dim": None,
    "rgif.upsample_factor": 2.0,
    "rgif.output_at_native_thermal_grid": True,
    "rgif.normalize_before_resample": False,
    "rgmaf.beta": 0.0,
    "rgmaf.temperature": 1.0,
    "rgmaf.energy_window": 11,
    "rgmaf.ncc_window": 11,
    "rgmaf.gate_smooth_sigma": 2.0,
    "rgmaf.base_sigma": 4.0,
    "rgmaf.detail_clip_k": 2.5,
    "rgmaf.edge_band": 8,
    "baseline.alpha": 0.5,
    "baseline.w_thermal": 0.5,
    "baseline.w_visual": 0.5,
    "baseline.pyramid_levels": 4,
    "baseline.wavelet_levels": 2,
    "baseline.overlay_colormap": "ironbow",
    "baseline.decision_iou_thr": 0.5,
    "bench.warmup": 3,
    "bench.repeats": 50,
}

# Throughput-oriented profile: fuse at the native thermal grid, evaluate
# guided-filter statistics on a decimated grid, and solve ECC on a capped
# registration grid with a bounded iteration budget. Still the full
# registration + guided-filter pipeline.
PROFILES = {
    "default": {},
    "fast": {
        "rgif.upsample_factor": 1.0,
        "guided.subsample": 4,
        "registration.solve_max_dim": 192,
        "registration.max_iterations": 10,
    },
}

_NONE_OK = {"registration.ransac_seed", "registration.solve_max_dim"}


def _coerce(key: str, raw: str):
    if key not in DEFAULTS:
        raise KeyError(f"unknown config key: {key!r}")
    if key in _NONE_OK and raw.lower() in ("none", ""):
        return None
    default = DEFAULTS[key]
    if key in _NONE_OK:
        return int(raw)
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_config_file(path: str) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, raw = (s.strip() for s in text.split("=", 1))
            values[key] = _coerce(key, raw)
    return values


def resolve_config(config_path: str | None, sets: list[str],
                   seed: int | None, jobs: int | None) -> dict:
    cfg = dict(DEFAULTS)
    file_values = parse_config_file(config_path) if config_path else {}
    overrides = {}
    for item in sets or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        overrides[key] = _coerce(key, raw)
    profile = overrides.get("profile", file_values.get("profile", cfg["profile"]))
    if profile not in PROFILES:
        raise ValueError(f"unknown profile: {profile!r}")
    cfg.update(PROFILES[profile])
    cfg["profile"] = profile
    cfg.update(file_values)
    cfg.update(overrides)
    if seed is not None:
        cfg["seed"] = seed
    if jobs is not None:
        cfg["jobs"] = jobs
    return cfg


def echo_config(cfg: dict, out_dir: Path, extra: dict | None = None) -> None:
    """Write the fully resolved config; run metadata goes in as comments so
    the file stays directly loadable via --config."""
    lines = [f"# {k} = {_format_value(v)}" for k, v in sorted((extra or {}).items())]
    lines += [f"{k} = {_format_value(v)}" for k, v in sorted(cfg.items())]
    (out_dir / "config_resolved.cfg").write_text("\n".join(lines) + "\n")


def build_registration_config(cfg: dict) -> registration.RegistrationConfig:
    ransac_seed = cfg["registration.ransac_seed"]
    if ransac_seed is None:
        ransac_seed = cfg["seed"]
    return registration.RegistrationConfig(
        max_iterations=cfg["registration.max_iterations"],
        termination_eps=cfg["registration.termination_eps"],
        mode=cfg["registration.mode"],
        pyramid_levels=cfg["registration.pyramid_levels"],
        ransac_iters=cfg["registration.ransac_iters"],
        ransac_thresh=cfg["registration.ransac_thresh"],
        ransac_seed=ransac_seed,
        flow_cap=cfg["registration.flow_cap"],
        solve_max_dim=cfg["registration.solve_max_dim"],
    )


def build_rgif_config(cfg: dict) -> rgif.RgifConfig:
    return rgif.RgifConfig(
        guided=rgif.GuidedFilterParams(
            radius=cfg["guided.radius"],
            epsilon=cfg["guided.epsilon"],
            subsample=cfg["guided.subsample"],
        ),
        registration=build_registration_config(cfg),
        upsample_factor=cfg["rgif.upsample_factor"],
        output_at_native_thermal_grid=cfg["rgif.output_at_native_thermal_grid"],
        normalize_before_resample=cfg["rgif.normalize_before_resample"],
    )


def build_rgmaf_config(cfg: dict) -> rgmaf.RgmafConfig:
    return rgmaf.RgmafConfig(
        beta=cfg["rgmaf.beta"],
        temperature=cfg["rgmaf.temperature"],
        energy_window=cfg["rgmaf.energy_window"],
        ncc_window=cfg["rgmaf.ncc_window"],
        gate_smooth_sigma=cfg["rgmaf.gate_smooth_sigma"],
        base_sigma=cfg["rgmaf.base_sigma"],
        detail_clip_k=cfg["rgmaf.detail_clip_k"],
        edge_band=cfg["rgmaf.edge_band"],
        registration=build_registration_config(cfg),
    )


def build_baseline_config(cfg: dict) -> baselines.BaselineConfig:
    return baselines.BaselineConfig(
        alpha=cfg["baseline.alpha"],
        w_thermal=cfg["baseline.w_thermal"],
        w_visual=cfg["baseline.w_visual"],
        pyramid_levels=cfg["baseline.pyramid_levels"],
        wavelet_levels=cfg["baseline.wavelet_levels"],
        overlay_colormap=cfg["baseline.overlay_colormap"],
        decision_iou_thr=cfg["baseline.decision_iou_thr"],
    )


def build_method_pipeline(method: str, cfg: dict) -> pipelines.FusionPipeline:
    return pipelines.build_pipeline(
        method,
        rgif_cfg=build_rgif_config(cfg),
        rgmaf_cfg=build_rgmaf_config(cfg),
        baseline_cfg=build_baseline_config(cfg),
    )


def _stem_index(directory: Path) -> dict[str, Path]:
    index = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_EXTS and p.stem not in index:
            index[p.stem] = p
    return index


def discover_pairs(thermal_dir: str, visual_dir: str):
    t_index = _stem_index(Path(thermal_dir))
    v_index = _stem_index(Path(visual_dir))
    stems = sorted(set(t_index) & set(v_index))
    unmatched = sorted(set(t_index) ^ set(v_index))
    pairs = [(s, t_index[s], v_index[s]) for s in stems]
    return pairs, unmatched


def _load_pair(thermal_path: Path, visual_path: Path):
    thermal = imgcore.load_image(thermal_path)
    if thermal.ndim == 3:
        thermal = imgcore.to_grayscale(thermal)
    visual = imgcore.load_image(visual_path)
    if visual.ndim == 2:
        visual = np.repeat(visual[..., None], 3, axis=2)
    return thermal, visual


def _fuse_one(task: tuple) -> dict:
    """Worker for one pair; rebuilds the pipeline so the task pickles."""
    stem, thermal_path, visual_path, method, cfg, out_dir, dump_diags = task
    import time
    row = {"stem": stem, "method": method}
    try:
        thermal, visual = _load_pair(Path(thermal_path), Path(visual_path))
        pipeline = build_method_pipeline(method, cfg)
        t0 = time.perf_counter()
        state = pipeline.preprocess(thermal, visual)
        t1 = time.perf_counter()
        raw = pipeline.fuse(state)
        t2 = time.perf_counter()
        out = pipeline.postprocess(state, raw)
        t3 = time.perf_counter()
        out_path = Path(out_dir) / f"{stem}.png"
        imgcore.save_image(out_path, out.image)
        if dump_diags:
            for name, arr in sorted(out.diagnostics.items()):
                imgcore.save_image(Path(out_dir) / f"{stem}_{name}.png", arr * 255.0)
        row.update(status="ok", used_fallback=int(out.used_fallback),
                   output=out_path.name,
                   t_pre_ms=(t1 - t0) * 1000.0, t_inf_ms=(t2 - t1) * 1000.0,
                   t_post_ms=(t3 - t2) * 1000.0)
    except Exception as e:  # per-pair failures never abort the batch
        row.update(status="error", used_fallback=0, output="", error=str(e))
    return row


def cmd_fuse(args, cfg: dict) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs, unmatched = discover_pairs(args.thermal_dir, args.visual_dir)
    for stem in unmatched:
        print(f"skipping unmatched stem: {stem}", file=sys.stderr)
    if not pairs:
        print("error: no thermal/visual pairs found", file=sys.stderr)
        return 1
    echo_config(cfg, out_dir, extra={"command": "fuse", "method": args.method})

    tasks = [(stem, str(tp), str(vp), args.method, cfg, str(out_dir),
              args.dump_diagnostics) for stem, tp, vp in pairs]
    jobs = cfg["jobs"] or None  # None lets the executor pick cpu_count
    if cfg["jobs"] == 1 or len(tasks) == 1:
        rows = [_fuse_one(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_fuse_one, tasks))
    rows.sort(key=lambda r: r["stem"])

    manifest_lines = []
    timing_lines = []
    failed = 0
    for r in rows:
        line = (f"{r['stem']} method={r['method']} status={r['status']} "
                f"used_fallback={r['used_fallback']} output={r['output']}")
        if r["status"] == "error":
            failed += 1
            line += f" error={r['error']!r}"
            print(f"pair {r['stem']} failed: {r['error']}", file=sys.stderr)
        else:
            timing_lines.append(
                f"{r['stem']} t_pre_ms={r['t_pre_ms']:.3f} "
                f"t_inf_ms={r['t_inf_ms']:.3f} t_post_ms={r['t_post_ms']:.3f}")
        manifest_lines.append(line)
    (out_dir / "manifest.txt").write_text("\n".join(manifest_lines) + "\n")
    manifest_json = [{k: v for k, v in r.items() if not k.endswith("_ms")}
                     for r in rows]
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest_json, indent=2, sort_keys=True) + "\n")
    # Wall-clock stage times are jittery by nature, so they live outside the
    # bit-reproducible manifest.
    (out_dir / "timings.txt").write_text("\n".join(timing_lines) + "\n")
    print(f"fused {len(rows) - failed}/{len(rows)} pairs -> {out_dir}")
    return 1 if failed else 0


def cmd_register(args, cfg: dict) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reg_cfg = build_registration_config(cfg)
    if args.mode:
        reg_cfg = dataclasses.replace(reg_cfg, mode=args.mode)
    thermal, visual = _load_pair(Path(args.thermal), Path(args.visual))
    h, w = thermal.shape
    vis_gray = imgcore.resample_bilinear(imgcore.to_grayscale(visual), w, h)
    echo_config(cfg, out_dir, extra={"command": "register", "mode": reg_cfg.mode})

    warp_path = out_dir / "warp.txt"
    if reg_cfg.mode == "feature_homography":
        try:
            hom = registration.feature_homography(vis_gray, thermal, reg_cfg)
            warped = registration.warp_homography(vis_gray, hom, w, h)
            warp_path.write_text(registration.warp_to_text(hom) + "\n")
            print("homography recovered")
        except registration.InsufficientMatches as e:
            warped = vis_gray
            warp_path.write_text(
                "# fallback\n" + registration.warp_to_text(
                    registration.AffineWarp.identity()) + "\n")
            print(f"fallback: {e}")
    else:
        res = registration.ecc_align(thermal, vis_gray, reg_cfg)
        if res.converged:
            warped = registration.warp_affine(vis_gray, res.warp, w, h)
            if reg_cfg.mode == "ecc_then_flow":
                flow = registration.dense_flow_refine(thermal, warped, reg_cfg)
                warped = registration.apply_flow(warped, flow)
            warp_path.write_text(registration.warp_to_text(res.warp) + "\n")
            print(f"correlation={res.correlation:.6f} iterations={res.iterations}")
        else:
            warped = vis_gray
            warp_path.write_text(
                "# fallback\n" + registration.warp_to_text(
                    registration.AffineWarp.identity()) + "\n")
            print(f"fallback: not converged (iterations={res.iterations})")
    imgcore.save_image(out_dir / "warped.png", warped)
    return 0


def _parse_thresholds(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def cmd_eval(args, cfg: dict) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_dir = Path(args.pred_dir)
    gt_dir = Path(args.gt_dir)
    pred_files = sorted(p for p in pred_dir.iterdir() if p.suffix == ".txt")
    if not pred_files:
        print("error: no prediction files found", file=sys.stderr)
        return 1
    missing = [p.stem for p in pred_files if not (gt_dir / p.name).exists()]
    if missing:
        print(f"error: missing ground truth for stems: {', '.join(missing)}",
              file=sys.stderr)
        return 1
    thresholds = (_parse_thresholds(args.thresholds) if args.thresholds
                  else list(evalbench.MAP_50_95_THRESHOLDS))
    echo_config(cfg, out_dir, extra={"command": "eval", "format": args.format,
                                     "thresholds": " ".join(f"{t:g}" for t in thresholds)})

    items = []
    for pf in pred_files:
        preds_ann = evalbench.parse_annotations(pf, args.format)
        gts_ann = evalbench.parse_annotations(gt_dir / pf.name, args.format)
        preds = [evalbench.Detection(box=a.box, score=1.0 if a.score is None else a.score,
                                     class_id=a.class_id) for a in preds_ann]
        gts = [(a.class_id, a.box) for a in gts_ann]
        items.append((pf.stem, preds, gts))

    for stem, preds, gts in items:
        report = evalbench.map_at(preds, gts, thresholds)
        (out_dir / f"{stem}_report.txt").write_text(report.to_text())
        (out_dir / f"{stem}_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    aggregate = evalbench.map_at_dataset(
        [(preds, gts) for _, preds, gts in items], thresholds)
    (out_dir / "aggregate_report.txt").write_text(aggregate.to_text())
    (out_dir / "aggregate_report.json").write_text(
        json.dumps(aggregate.to_dict(), indent=2, sort_keys=True) + "\n")
    print(aggregate.to_text(), end="")
    return 0


def cmd_bench(args, cfg: dict) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs, _ = discover_pairs(args.thermal_dir, args.visual_dir)
    if not pairs:
        print("error: no thermal/visual pairs found", file=sys.stderr)
        return 1
    warmup = args.warmup if args.warmup is not None else cfg["bench.warmup"]
    repeats = args.repeats if args.repeats is not None else cfg["bench.repeats"]
    inputs = [_load_pair(tp, vp) for _, tp, vp in pairs]
    pipeline = build_method_pipeline(args.method, cfg)
    report, per_repeat = evalbench.benchmark(pipeline, inputs,
                                             warmup=warmup, repeats=repeats)
    lat = np.asarray(per_repeat)
    cov = float(lat.std() / lat.mean()) if lat.mean() > 0 else 0.0
    h, w = inputs[0][0].shape
    extra = {
        "method": args.method,
        "pairs": len(inputs),
        "thermal_resolution": f"{w}x{h}",
        "warmup": warmup,
        "repeats": repeats,
        "latency_cov": f"{cov:.6f}",
    }
    echo_config(cfg, out_dir, extra={"command": "bench", **extra})
    text = report.to_text() + "".join(f"{k} = {v}\n" for k, v in extra.items())
    (out_dir / "timing_report.txt").write_text(text)
    payload = {**report.to_dict(), **extra, "per_repeat_latency_ms": list(lat)}
    (out_dir / "timing_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return 0


def cmd_degrade(args, cfg: dict) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out)
    files = sorted(p for p in in_dir.rglob("*") if p.suffix.lower() in IMAGE_EXTS)
    if not files:
        print("error: no images found", file=sys.stderr)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir, extra={"command": "degrade", "kind": args.kind})
    for p in files:
        rel = p.relative_to(in_dir)
        dst = out_dir / rel.with_suffix(".png")
        dst.parent.mkdir(parents=True, exist_ok=True)
        img = imgcore.load_image(p)
        imgcore.save_image(dst, evalbench.degrade(img, args.kind))
    print(f"degraded {len(files)} images -> {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="irvfuse",
        description="Thermal-visible fusion, registration, evaluation, and benchmarking")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker processes for fuse (0 = cpu count)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse all thermal/visual pairs in two directories")
    p.add_argument("--method", required=True, choices=pipelines.METHODS)
    p.add_argument("--thermal-dir", required=True)
    p.add_argument("--visual-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-diagnostics", action="store_true",
                   help="write weight/reliability maps as PNGs (rgmaf)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("register", help="estimate and apply a warp for one pair")
    p.add_argument("--thermal", required=True)
    p.add_argument("--visual", required=True)
    p.add_argument("--mode", choices=("ecc_affine", "feature_homography", "ecc_then_flow"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="detection metrics from prediction/GT files")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--format", default="voc", choices=("voc", "coco_center"))
    p.add_argument("--thresholds", help="IoU thresholds, e.g. '0.5' or '0.5,0.55,...'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-threaded latency/FPS benchmark")
    p.add_argument("--method", required=True, choices=pipelines.METHODS)
    p.add_argument("--thermal-dir", required=True)
    p.add_argument("--visual-dir", required=True)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("degrade", help="apply the evaluation-time degradation")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--kind", required=True, choices=("visual", "thermal"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.set, args.seed, args.jobs)
    except (KeyError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
