"""Command-line interface wiring all modules into subcommands.

Exit codes: 0 success, 1 validation/data errors (machine-readable JSON on
stderr), 2 usage errors. Output files are written atomically (temp file +
rename) and every randomized subcommand demands an explicit --seed.
Human-facing report values are rounded to 6 decimals so golden files stay
stable; data interchange files keep full precision.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, anchors, cgt, clinical, geometry, heatmaps, priors, sei, stats, zones
from ._kernels import KERNEL_BACKEND
from .errors import CephGeoError, ParseError, ValidationError
from .model import (
    CANONICAL_LANDMARKS,
    ImageRecord,
    Landmark,
    Manifest,
    import_isbi_annotations,
    load_manifest,
    manifest_to_dict,
    resolve_name,
    save_manifest,
    to_mm,
)

REPORT_DECIMALS = 6


def _round(value):
    if isinstance(value, float):
        return round(value, REPORT_DECIMALS)
    if isinstance(value, dict):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    return value


def atomic_write_text(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, os.cpu_count() or 1)


def _parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            raise ParseError(
                f"{p}: TOML config requires Python >= 3.11 (tomllib); use JSON instead"
            ) from None
        try:
            return tomllib.loads(p.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ParseError(f"cannot parse config {p}: {exc}") from exc
    try:
        return json.loads(p.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {p} is not valid JSON: {exc}") from exc


def _tolerances(config: dict) -> geometry.ToleranceTable:
    return geometry.ToleranceTable(
        overrides=config.get("tolerances"),
        default=config.get("default_tolerance", geometry.DEFAULT_TOLERANCE_MM),
    )


def _sigmas(config: dict) -> priors.SigmaTable:
    return priors.SigmaTable(overrides=config.get("sigmas"))


# ---------------------------------------------------------------------------
# prediction / landmark-set files ({"records": [{"id", "landmarks": [...]}]})
# ---------------------------------------------------------------------------

def load_landmark_sets(path) -> Dict[str, Dict[str, Landmark]]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p} is not valid JSON: {exc}") from exc
    records = doc.get("records") if isinstance(doc, dict) else None
    if records is None:
        raise ParseError(f"{p}: expected a JSON object with a 'records' list")
    out: Dict[str, Dict[str, Landmark]] = {}
    for rec in records:
        lms = {}
        for ld in rec.get("landmarks", []):
            name = resolve_name(str(ld["name"]))
            x = ld.get("x")
            y = ld.get("y")
            lms[name] = Landmark(
                name=name,
                x=None if x is None else float(x),
                y=None if y is None else float(y),
                visible=bool(ld.get("visible", True)),
            )
        out[str(rec["id"])] = lms
    return out


def landmark_sets_to_doc(sets: Dict[str, Dict[str, Landmark]], extra_per_record=None) -> dict:
    records = []
    for image_id in sorted(sets):
        rec = {
            "id": image_id,
            "landmarks": [
                {"name": lm.name, "x": lm.x, "y": lm.y, "visible": lm.visible}
                for lm in sorted(sets[image_id].values(), key=lambda l: CANONICAL_LANDMARKS.index(l.name))
            ],
        }
        if extra_per_record and image_id in extra_per_record:
            rec.update(extra_per_record[image_id])
        records.append(rec)
    return {"records": records}


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_import_isbi(args, config) -> int:
    names = [ln.strip() for ln in Path(args.names).read_text().splitlines() if ln.strip()]
    files = sorted(Path(args.annotations).glob("*.txt"))
    if not files:
        raise ValidationError(f"no .txt annotation files under {args.annotations}")
    manifest = import_isbi_annotations(
        files,
        names,
        width=args.width,
        height=args.height,
        pixel_spacing=args.spacing,
        split=args.split,
        source=args.source,
        seed=args.seed if args.seed is not None else 0,
    )
    atomic_write_text(args.out, json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n")
    print(f"imported {len(manifest.records)} records -> {args.out}")
    return 0


def cmd_zones(args, config) -> int:
    manifest = load_manifest(args.manifest)
    if args.zones_cmd == "calibrate":
        specs = zones.calibrate(manifest, margin=args.margin)
        zones_doc = [
            {"zone": s.zone, "box": list(s.box), "landmarks": list(s.landmarks)} for s in specs
        ]
        atomic_write_json(args.out, zones_doc)
        print(f"calibrated {len(specs)} zones -> {args.out}")
        return 0
    specs = zones.load_zone_specs(args.zones)
    report = zones.containment_report(manifest, specs)
    doc = _round(report)
    if args.out:
        atomic_write_json(args.out, doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_simplify(args, config) -> int:
    manifest = load_manifest(args.manifest)
    tol = _tolerances(config)
    contour_map = geometry.load_contours(args.contours)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(image_id):
        rec = manifest.record(image_id)
        simplified = [geometry.simplify(c, tol, rec.pixel_spacing) for c in contour_map[image_id]]
        return image_id, simplified

    ids = sorted(set(contour_map) & {r.id for r in manifest.records})
    if not ids:
        raise ValidationError("no contour image ids match the manifest")
    results = _parallel_map(work, ids, _threads(args))
    for image_id, simplified in sorted(results):
        doc = [geometry.contour_to_dict(c) for c in simplified]
        atomic_write_text(out / f"{image_id}.json", json.dumps(doc, indent=2) + "\n")
    print(f"simplified contours for {len(results)} images -> {out}")
    return 0


def cmd_extract_anchors(args, config) -> int:
    manifest = load_manifest(args.manifest)
    tol = _tolerances(config)
    contour_map = geometry.load_contours(args.contours)
    catalog = anchors.RuleCatalog()

    def work(image_id):
        rec = manifest.record(image_id)
        by_class, errs = anchors.contours_by_class(contour_map[image_id])
        lms, more = anchors.extract_all(by_class, catalog, tol, rec.pixel_spacing)
        return image_id, {lm.name: lm for lm in lms}, errs + more

    ids = sorted(set(contour_map) & {r.id for r in manifest.records})
    if not ids:
        raise ValidationError("no contour image ids match the manifest")
    results = _parallel_map(work, ids, _threads(args))
    sets = {image_id: lms for image_id, lms, _ in results}
    errors = {image_id: errs for image_id, _, errs in results if errs}
    doc = landmark_sets_to_doc(sets)
    if errors:
        doc["errors"] = errors
    atomic_write_json(args.out, doc)
    print(f"extracted anchors for {len(results)} images -> {args.out}")
    return 0


_CONDITION_ALIASES = {
    "gt": "gt_derived",
    "gt_derived": "gt_derived",
    "zero": "zero",
    "popmean": "population_mean",
    "population_mean": "population_mean",
    "random": "random",
}


def cmd_gen_priors(args, config, parser=None) -> int:
    manifest = load_manifest(args.manifest)
    sigmas = _sigmas(config)
    variant = _CONDITION_ALIASES[args.condition]
    if variant == "random" and args.seed is None:
        raise UsageError("--condition random requires an explicit --seed")
    population = None
    if variant == "population_mean":
        population, missing = priors.population_stats(manifest, split=args.split)
        if missing:
            print(f"note: no visible samples for {', '.join(missing)}; channels stay zero", file=sys.stderr)
    cond = priors.PriorCondition(variant=variant, seed=args.seed, population=population)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = args.resolution

    def work(rec: ImageRecord):
        stack = priors.make_condition_stack(cond, rec, sigmas, res, res)
        return rec.id, stack.astype(np.float32)

    results = _parallel_map(work, list(manifest.records), _threads(args))
    for image_id, stack in sorted(results):
        cgt.write_cgt(out / f"{image_id}.cgt", stack, list(CANONICAL_LANDMARKS))
    print(f"wrote {len(results)} prior stacks ({variant}) -> {out}")
    return 0


def cmd_decode(args, config) -> int:
    tensor_files = sorted(Path(args.tensors).glob("*.cgt"))
    if not tensor_files:
        raise ValidationError(f"no .cgt tensors under {args.tensors}")
    manifest = load_manifest(args.manifest) if args.manifest else None
    presmooth = config.get("presmooth", args.presmooth)

    def work(path):
        tensor, names, _ = cgt.read_cgt(path)
        grid = tensor.astype(np.float64)
        if presmooth:
            from scipy.ndimage import gaussian_filter

            grid = np.stack([gaussian_filter(ch, presmooth) for ch in grid])
        image_id = path.stem
        sx = sy = 1.0
        if manifest is not None:
            rec = manifest.record(image_id)
            sy = rec.height / grid.shape[1]
            sx = rec.width / grid.shape[2]
        lms = {}
        peaks = {}
        for k, name in enumerate(names or CANONICAL_LANDMARKS[: grid.shape[0]]):
            channel = grid[k]
            if channel.max() <= 0:
                lms[name] = Landmark(name=name, x=None, y=None, visible=False)
                continue
            x, y, peak = heatmaps.decode(heatmaps.Heatmap(channel, name))
            lms[name] = Landmark(name=name, x=x * sx, y=y * sy, visible=True)
            peaks[name] = peak
        return image_id, lms, peaks

    results = _parallel_map(work, tensor_files, _threads(args))
    sets = {image_id: lms for image_id, lms, _ in results}
    extra = {image_id: {"peaks": _round({k: float(v) for k, v in peaks.items()})} for image_id, _, peaks in results}
    atomic_write_json(args.out, landmark_sets_to_doc(sets, extra))
    print(f"decoded {len(results)} tensors -> {args.out}")
    return 0


def cmd_ensemble(args, config) -> int:
    stacks = []
    names_ref = None
    for path in args.inputs:
        tensor, names, _ = cgt.read_cgt(path)
        if names_ref is None:
            names_ref = names
            shape_ref = tensor.shape
        elif names != names_ref or tensor.shape != shape_ref:
            raise ValidationError(f"{path}: tensor layout differs from {args.inputs[0]}")
        stacks.append(tensor.astype(np.float64))
    mean = np.mean(stacks, axis=0).astype(np.float32)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cgt.write_cgt(args.out, mean, names_ref)
    print(f"averaged {len(stacks)} tensors -> {args.out}")
    return 0


def cmd_map_metrics(args, config) -> int:
    manifest = load_manifest(args.manifest)
    specs = {s.zone: s for s in zones.load_zone_specs(args.zones)}
    tensor_files = sorted(Path(args.act).glob("*.cgt"))
    if not tensor_files:
        raise ValidationError(f"no .cgt activation maps under {args.act}")

    def work(path):
        tensor, names, _ = cgt.read_cgt(path)
        rec = manifest.record(path.stem)
        gt = rec.landmark_map()
        height, width = tensor.shape[1], tensor.shape[2]
        masks = {zone: zones.rasterize(spec, height, width) for zone, spec in specs.items()}
        rows = []
        for k, name in enumerate(names or CANONICAL_LANDMARKS[: tensor.shape[0]]):
            lm = gt.get(name)
            if lm is None or not lm.visible:
                continue
            scaled = Landmark(name, lm.x * width / rec.width, lm.y * height / rec.height, True)
            zone = zones.ZONE_OF[name]
            m = heatmaps.map_metrics(tensor[k].astype(np.float64), scaled, masks[zone])
            rows.append((rec.id, name, zone, m))
        return rows

    results = _parallel_map(work, tensor_files, _threads(args))
    lines = ["image_id,landmark,zone,peak_to_gt_px,entropy_bits,in_roi_ratio,off_zone_ratio"]
    for rows in results:
        for image_id, name, zone, m in rows:
            lines.append(
                f"{image_id},{name},{zone},"
                f"{m['peak_to_gt_px']:.{REPORT_DECIMALS}f},{m['entropy_bits']:.{REPORT_DECIMALS}f},"
                f"{m['in_roi_ratio']:.{REPORT_DECIMALS}f},{m['off_zone_ratio']:.{REPORT_DECIMALS}f}"
            )
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"map metrics for {len(results)} tensors -> {args.out}")
    return 0


_ANGLES = ("anb", "snb", "fma", "impa", "gogn_sn")


def cmd_measure(args, config) -> int:
    pred_sets = load_landmark_sets(args.pred)
    gt_sets = load_landmark_sets(args.gt)
    scheme = clinical.THRESHOLD_SCHEMES[args.scheme]
    facing = config.get("facing", args.facing)
    impa_supplement = bool(config.get("impa_supplement", False))
    ids = sorted(set(pred_sets) & set(gt_sets))
    if not ids:
        raise ValidationError("no shared image ids between --pred and --gt")

    header = ["image_id"]
    for angle in _ANGLES:
        header += [f"{angle}_pred", f"{angle}_gt", f"{angle}_error"]
    header += [
        "sagittal_pred", "sagittal_gt", "vertical_pred", "vertical_gt",
        "near_sagittal_lo", "near_sagittal_hi", "near_vertical_lo", "near_vertical_hi",
    ]
    lines = [",".join(header)]

    paired = {angle: ([], []) for angle in _ANGLES}
    sag_labels, vert_labels = ([], []), ([], [])
    boundary_counts = {"sagittal_lo": 0, "sagittal_hi": 0, "vertical_lo": 0, "vertical_hi": 0}

    def fmt(v):
        return "" if v is None else f"{v:.{REPORT_DECIMALS}f}"

    for image_id in ids:
        mp = clinical.measure(pred_sets[image_id], facing=facing, impa_supplement=impa_supplement)
        mg = clinical.measure(gt_sets[image_id], facing=facing, impa_supplement=impa_supplement)
        row = [image_id]
        for angle in _ANGLES:
            pv, gv = getattr(mp, angle), getattr(mg, angle)
            row += [fmt(pv), fmt(gv), fmt(pv - gv if pv is not None and gv is not None else None)]
            if pv is not None and gv is not None:
                paired[angle][0].append(pv)
                paired[angle][1].append(gv)
        sag_p = clinical.classify_sagittal(mp.anb, scheme) if mp.anb is not None else ""
        sag_g = clinical.classify_sagittal(mg.anb, scheme) if mg.anb is not None else ""
        vert_p = clinical.classify_vertical(mp.gogn_sn, scheme) if mp.gogn_sn is not None else ""
        vert_g = clinical.classify_vertical(mg.gogn_sn, scheme) if mg.gogn_sn is not None else ""
        flags = ["", "", "", ""]
        if mg.anb is not None and mg.gogn_sn is not None:
            cls = clinical.classify(mg, scheme)
            flags = [
                str(cls.near_sagittal_lo).lower(), str(cls.near_sagittal_hi).lower(),
                str(cls.near_vertical_lo).lower(), str(cls.near_vertical_hi).lower(),
            ]
            for key, flag in zip(boundary_counts, [cls.near_sagittal_lo, cls.near_sagittal_hi, cls.near_vertical_lo, cls.near_vertical_hi]):
                boundary_counts[key] += int(flag)
        if sag_p and sag_g:
            sag_labels[0].append(sag_p)
            sag_labels[1].append(sag_g)
        if vert_p and vert_g:
            vert_labels[0].append(vert_p)
            vert_labels[1].append(vert_g)
        row += [sag_p, sag_g, vert_p, vert_g] + flags
        lines.append(",".join(row))

    atomic_write_text(args.out, "\n".join(lines) + "\n")

    summary = {"scheme": scheme.name, "n_images": len(ids), "boundary_counts": boundary_counts, "angles": {}}
    for angle in _ANGLES:
        pv, gv = paired[angle]
        if pv:
            entry = stats.bias_mae(pv, gv)
            entry["icc_a1"] = stats.icc_a1(np.column_stack([pv, gv])) if len(pv) >= 2 else None
            entry["n"] = len(pv)
            summary["angles"][angle] = entry
    if sag_labels[0]:
        summary["sagittal"] = clinical.agreement_report(sag_labels[0], sag_labels[1], clinical.SAGITTAL_ORDER)
    if vert_labels[0]:
        summary["vertical"] = clinical.agreement_report(vert_labels[0], vert_labels[1], clinical.VERTICAL_ORDER)
    summary_path = Path(args.out).with_suffix(".summary.json")
    atomic_write_json(summary_path, _round(summary))
    print(f"clinical table -> {args.out}; summary -> {summary_path}")
    return 0


def build_error_table(pred_sets, manifest: Manifest) -> stats.ErrorTable:
    rows = []
    for rec in manifest.records:
        preds = pred_sets.get(rec.id, {})
        for lm in rec.landmarks:
            if not lm.visible:
                continue
            p = preds.get(lm.name)
            if p is None or not p.visible or p.x is None:
                rows.append(stats.ErrorRow(rec.id, lm.name, math.nan, visible=False, source=rec.source))
                continue
            err_px = math.hypot(p.x - lm.x, p.y - lm.y)
            rows.append(
                stats.ErrorRow(rec.id, lm.name, to_mm(err_px, rec.pixel_spacing), visible=True, source=rec.source)
            )
    return stats.ErrorTable(rows)


def cmd_evaluate(args, config) -> int:
    manifest = load_manifest(args.gt)
    pred_sets = load_landmark_sets(args.pred)
    if args.bootstrap and args.seed is None:
        raise UsageError("--bootstrap requires an explicit --seed")
    table = build_error_table(pred_sets, manifest)
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    report = {
        "unit": "mm",
        "n_pairs": int(len(table.visible_rows())),
        "mre": stats.mre(table),
        "sdr": {str(t): stats.sdr(table, t) for t in thresholds},
        "per_landmark": {
            name: {"mre": m, "n": int(table.group_errors("landmark")[name].size)}
            for name, m in stats.mre_by(table, "landmark").items()
        },
        "per_source": stats.mre_by(table, "source"),
        "provenance": {"version": __version__, "kernel_backend": KERNEL_BACKEND},
    }
    for name, grp in stats.sdr_by(table, 2.0, "landmark").items():
        report["per_landmark"][name]["sdr@2"] = grp
    if args.bootstrap:
        lo, hi = stats.bootstrap_ci(table.errors(), resamples=args.bootstrap, seed=args.seed)
        report["mre_ci95"] = [lo, hi]
        report["provenance"]["bootstrap"] = {"resamples": args.bootstrap, "seed": args.seed}
    atomic_write_json(args.out, _round(report))
    if args.errors_out:
        stats.save_error_table(table, args.errors_out)
    print(f"MRE {report['mre']:.3f} mm over {report['n_pairs']} pairs -> {args.out}")
    return 0


def cmd_compare(args, config) -> int:
    table_a = stats.load_error_table(args.a)
    table_b = stats.load_error_table(args.b)
    requested = [t.strip() for t in args.tests.split(",") if t.strip()]
    unknown = set(requested) - {"t", "perm", "wilcoxon"}
    if unknown:
        raise UsageError(f"unknown tests: {', '.join(sorted(unknown))}")
    if "perm" in requested and args.seed is None:
        raise UsageError("the permutation test requires an explicit --seed")

    if args.row_level:
        keyed_a = {(r.image_id, r.landmark): r.error_mm for r in table_a.visible_rows()}
        keyed_b = {(r.image_id, r.landmark): r.error_mm for r in table_b.visible_rows()}
    else:
        # patient level: mean error per image id
        def per_image(table):
            return {k: float(v.mean()) for k, v in table.group_errors("image_id").items()}

        keyed_a = per_image(table_a)
        keyed_b = per_image(table_b)
    shared = sorted(set(keyed_a) & set(keyed_b))
    if len(shared) < 2:
        raise ValidationError("fewer than 2 paired observations between the two tables")
    a = [keyed_a[k] for k in shared]
    b = [keyed_b[k] for k in shared]

    results = {
        "pairing": "row" if args.row_level else "patient",
        "n_pairs": len(shared),
        "mean_a": float(np.mean(a)),
        "mean_b": float(np.mean(b)),
        "mean_difference": float(np.mean(a) - np.mean(b)),
    }
    if "t" in requested:
        r = stats.paired_t(a, b)
        results["paired_t"] = {"t": r.statistic, "p": r.p_value, **r.detail}
    if "perm" in requested:
        r = stats.permutation_test(a, b, permutations=args.permutations, seed=args.seed)
        results["permutation"] = {"statistic": r.statistic, "p": r.p_value, "method": r.method, **r.detail}
    if "wilcoxon" in requested:
        r = stats.wilcoxon_signed_rank(a, b)
        results["wilcoxon"] = {"w_plus": r.statistic, "p": r.p_value, "method": r.method, **r.detail}
    atomic_write_json(args.out, _round(results))
    print(json.dumps(_round(results), indent=2, sort_keys=True))
    return 0


def cmd_sei(args, config) -> int:
    manifest = load_manifest(args.manifest)
    points = sei.mean_landmark_positions(manifest, split=args.split)
    report = sei.sei(points, grid=args.grid, radius=args.radius, zmax=args.zmax)
    doc = report.to_dict()
    if args.coverage_sigma:
        doc["coverage"] = {
            "sigma": args.coverage_sigma,
            "fraction": sei.coverage_fraction(points, args.coverage_sigma),
            "note": "dilation radius is user-supplied; not comparable across conventions",
        }
    if args.per_image:
        per_image = {}
        for rec in manifest.records if args.split is None else manifest.by_split(args.split):
            pts = [
                (lm.x / rec.width, lm.y / rec.height)
                for lm in rec.landmarks
                if lm.visible and lm.x is not None
            ]
            if len(pts) >= 2:
                arr = np.clip(np.asarray(pts), 0.0, 1.0)
                per_image[rec.id] = sei.sei(arr, grid=args.grid, radius=args.radius, zmax=args.zmax).sei
        doc["per_image"] = per_image
    atomic_write_json(args.out, _round(doc))
    print(f"SEI {report.sei:.4f} (H_norm {report.normalized_entropy:.3f}, "
          f"D_pair {report.pairwise_distance:.3f}, Z {report.cluster_count}) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except CephGeoError as exc:
        raise CephGeoError(f"stage {name}: {exc}") from exc


def cmd_pipeline(args, config) -> int:
    if args.verify:
        return _verify_bundle(Path(args.verify))
    if args.seed is None:
        raise UsageError("pipeline requires an explicit --seed")
    if not args.contours or not args.manifest or not args.out:
        raise UsageError("pipeline requires --contours, --manifest and --out")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}
    manifest = _stage("load-manifest", load_manifest, args.manifest)
    inputs[str(args.manifest)] = sha256_of(args.manifest)
    contour_map = _stage("load-contours", geometry.load_contours, args.contours)
    contours_path = Path(args.contours)
    for f in sorted(contours_path.glob("*.json")) if contours_path.is_dir() else [contours_path]:
        inputs[str(f)] = sha256_of(f)

    tol = _tolerances(config)
    sigmas = _sigmas(config)
    catalog = anchors.RuleCatalog()
    threads = _threads(args)
    ids = sorted(set(contour_map) & {r.id for r in manifest.records})
    if not ids:
        raise ValidationError("no contour image ids match the manifest")

    # stage: simplify
    def simplify_one(image_id):
        rec = manifest.record(image_id)
        return image_id, [geometry.simplify(c, tol, rec.pixel_spacing) for c in contour_map[image_id]]

    simplified = dict(_stage("simplify", _parallel_map, simplify_one, ids, threads))
    simp_dir = out / "simplified"
    simp_dir.mkdir(exist_ok=True)
    for image_id in ids:
        doc = [geometry.contour_to_dict(c) for c in simplified[image_id]]
        atomic_write_text(simp_dir / f"{image_id}.json", json.dumps(doc, indent=2) + "\n")

    # stage: extract anchors (from the already-simplified contours)
    def anchors_one(image_id):
        rec = manifest.record(image_id)
        by_class, errs = anchors.contours_by_class(simplified[image_id])
        lms, more = anchors.extract_all(by_class, catalog, tol, rec.pixel_spacing)
        return image_id, {lm.name: lm for lm in lms}, errs + more

    anchor_results = _stage("extract-anchors", _parallel_map, anchors_one, ids, threads)
    anchor_doc = landmark_sets_to_doc({i: l for i, l, _ in anchor_results})
    anchor_errors = {i: e for i, _, e in anchor_results if e}
    if anchor_errors:
        anchor_doc["errors"] = anchor_errors
    atomic_write_json(out / "anchors.json", anchor_doc)

    # stage: GT-derived priors
    cond = priors.PriorCondition(variant=_CONDITION_ALIASES[args.condition], seed=args.seed)
    res = args.resolution

    def priors_one(rec):
        return rec.id, priors.make_condition_stack(cond, rec, sigmas, res, res).astype(np.float32)

    records = [manifest.record(i) for i in ids]
    prior_results = _stage("gen-priors", _parallel_map, priors_one, records, threads)
    priors_dir = out / "priors"
    priors_dir.mkdir(exist_ok=True)
    for image_id, stack in sorted(prior_results):
        cgt.write_cgt(priors_dir / f"{image_id}.cgt", stack, list(CANONICAL_LANDMARKS))

    # optional stage: decode external tensors and evaluate against the manifest
    if args.tensors:
        decode_args = argparse.Namespace(
            tensors=args.tensors, manifest=args.manifest, out=out / "decoded.json",
            presmooth=0.0, threads=args.threads,
        )
        _stage("decode", cmd_decode, decode_args, config)
        pred_sets = load_landmark_sets(out / "decoded.json")
        table = build_error_table(pred_sets, manifest)
        report = {"unit": "mm", "mre": stats.mre(table), "n_pairs": len(table.visible_rows())}
        atomic_write_json(out / "report.json", _round(report))

    # provenance over every emitted file
    outputs = {}
    for f in sorted(out.rglob("*")):
        if f.is_file() and f.name != "provenance.json":
            outputs[str(f.relative_to(out))] = sha256_of(f)
    # thread count is deliberately not recorded: outputs must not depend on it
    provenance = {
        "version": __version__,
        "kernel_backend": KERNEL_BACKEND,
        "seed": args.seed,
        "condition": _CONDITION_ALIASES[args.condition],
        "resolution": res,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }
    atomic_write_json(out / "provenance.json", provenance)
    print(f"pipeline bundle -> {out} ({len(ids)} images, backend {KERNEL_BACKEND})")
    return 0


def _verify_bundle(bundle: Path) -> int:
    prov_path = bundle / "provenance.json"
    if not prov_path.is_file():
        raise ValidationError(f"no provenance.json under {bundle}")
    provenance = json.loads(prov_path.read_text())
    failures = []
    for rel, digest in provenance.get("outputs", {}).items():
        f = bundle / rel
        if not f.is_file():
            failures.append({"file": rel, "problem": "missing"})
        elif sha256_of(f) != digest:
            failures.append({"file": rel, "problem": "hash mismatch"})
    for path, digest in provenance.get("inputs", {}).items():
        if Path(path).is_file() and sha256_of(path) != digest:
            failures.append({"file": path, "problem": "input hash mismatch"})
    if failures:
        raise ValidationError("provenance verification failed: " + json.dumps(failures))
    print(f"provenance verified: {len(provenance.get('outputs', {}))} outputs intact")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cephgeo",
        description="Deterministic cephalometric geometry, priors, and evaluation statistics",
    )
    parser.add_argument("--version", action="version", version=f"cephgeo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--seed", type=int, default=None, help="seed for randomized steps")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: logical cores)")
        p.add_argument("--config", default=None, help="JSON (or TOML on Python >= 3.11) config file")

    p = sub.add_parser("import-isbi", help="import ISBI-style plain-text annotations")
    p.add_argument("--annotations", required=True, help="directory of .txt files (x,y per line)")
    p.add_argument("--names", required=True, help="sidecar file: one landmark label per line")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--spacing", type=float, required=True, help="mm per pixel")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--source", default="isbi")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_import_isbi)

    p = sub.add_parser("zones", help="calibrate or check anatomical zones")
    zsub = p.add_subparsers(dest="zones_cmd", required=True)
    pz = zsub.add_parser("calibrate")
    pz.add_argument("--manifest", required=True)
    pz.add_argument("--margin", type=float, default=0.02)
    pz.add_argument("--out", required=True)
    common(pz)
    pz.set_defaults(handler=cmd_zones)
    pz = zsub.add_parser("check")
    pz.add_argument("--manifest", required=True)
    pz.add_argument("--zones", required=True)
    pz.add_argument("--out", default=None)
    common(pz)
    pz.set_defaults(handler=cmd_zones)

    p = sub.add_parser("simplify", help="simplify contours at per-class tolerances")
    p.add_argument("--contours", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_simplify)

    p = sub.add_parser("extract-anchors", help="topology-based anchor extraction")
    p.add_argument("--contours", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_extract_anchors)

    p = sub.add_parser("gen-priors", help="generate Gaussian prior stacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--condition", required=True, choices=sorted(_CONDITION_ALIASES))
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=priors.DEFAULT_RESOLUTION)
    p.add_argument("--split", default="train", help="split used for population statistics")
    common(p)
    p.set_defaults(handler=cmd_gen_priors)

    p = sub.add_parser("decode", help="decode heatmap tensors to sub-pixel coordinates")
    p.add_argument("--tensors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None, help="rescale decoded coords to image pixels")
    p.add_argument("--presmooth", type=float, default=0.0, help="optional Gaussian pre-smoothing sigma")
    common(p)
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("ensemble", help="average heatmap tensors pixelwise")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_ensemble)

    p = sub.add_parser("map-metrics", help="score activation maps against zones")
    p.add_argument("--act", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_map_metrics)

    p = sub.add_parser("measure", help="clinical angles and classifications")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--scheme", default="steiner", choices=sorted(clinical.THRESHOLD_SCHEMES))
    p.add_argument("--facing", default="right", choices=["right", "left"])
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_measure)

    p = sub.add_parser("evaluate", help="MRE/SDR report with bootstrap CI")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="ground-truth manifest JSON")
    p.add_argument("--thresholds", default="2,2.5,3,4")
    p.add_argument("--bootstrap", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--errors-out", default=None, help="also dump the per-row error table CSV")
    common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("compare", help="paired statistical tests between two error tables")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--tests", default="t,perm,wilcoxon")
    p.add_argument("--permutations", type=int, default=10000)
    p.add_argument("--row-level", action="store_true", help="pair rows instead of per-patient means")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("sei", help="Spatial Entropy Index of a landmark configuration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", type=int, default=sei.DEFAULT_GRID)
    p.add_argument("--radius", type=float, default=sei.DEFAULT_RADIUS)
    p.add_argument("--zmax", type=int, default=sei.DEFAULT_ZMAX)
    p.add_argument("--split", default=None)
    p.add_argument("--per-image", action="store_true")
    p.add_argument("--coverage-sigma", type=float, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=cmd_sei)

    p = sub.add_parser("pipeline", help="simplify -> anchors -> priors with provenance")
    p.add_argument("--contours")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--condition", default="gt", choices=sorted(_CONDITION_ALIASES))
    p.add_argument("--resolution", type=int, default=priors.DEFAULT_RESOLUTION)
    p.add_argument("--tensors", default=None, help="optional heatmaps to decode and evaluate")
    p.add_argument("--verify", default=None, metavar="BUNDLE", help="verify an existing bundle instead of running")
    common(p)
    p.set_defaults(handler=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return args.handler(args, config)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except CephGeoError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1
    except OSError as exc:
        payload = {"error": "OSError", "message": str(exc), "path": getattr(exc, "filename", None)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
