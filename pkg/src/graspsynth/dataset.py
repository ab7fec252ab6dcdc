"""End-to-end dataset generation and manifest validation.

Layout of an output directory::

    manifest.json
    depth/<object>_<view>.png   (or .raw)

Random streams derive from the master seed through
``SeedSequence(master, spawn_key=(object, purpose, view))``, so each
object's output is independent of how objects are spread over workers.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .camera import (CameraIntrinsics, CameraPose, icosahedron_face_directions, render_depth,
                     sample_view_distance, viewpoint_pose)
from .config import RunConfig
from .depth_io import read_depth, write_depth
from .errors import DatasetError, GraspSynthError
from .mesh import BoundingBall, bounding_ball, load_mesh
from .projection import ImageGrasp, filter_tilt, project_grasp
from .sampling import ContactPair, label_top_fraction, robust_force_closure_many, sample_antipodal

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "graspsynth-dataset"
MANIFEST_VERSION = 1
MESH_SUFFIXES = (".obj", ".off")

# spawn_key purposes
_SAMPLE, _QUALITY, _VIEW = 0, 1, 2


def derive_seed(master, obj, purpose, view=0):
    """64-bit seed for one (object, purpose, view) stream."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(obj), int(purpose), int(view)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(master, obj, purpose, view=0):
    return np.random.default_rng(derive_seed(master, obj, purpose, view))


def list_meshes(object_dir):
    d = Path(object_dir)
    if not d.is_dir():
        raise DatasetError(f"{object_dir}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in MESH_SUFFIXES)


def _object_record(obj_id, mesh_path, out_dir, cfg: RunConfig):
    """Manifest record for one object: ``(record, None)``, or ``(None, warning)`` if the mesh fails to load."""
    try:
        mesh = load_mesh(mesh_path, scale=cfg.mesh_scale)
    except (GraspSynthError, OSError, ValueError) as exc:
        return None, {"mesh": mesh_path.name, "error": str(exc)}
    ball = bounding_ball(mesh)
    # center on the ball so views and stored contacts share one frame
    mesh = mesh.transformed(translation=-ball.center)
    radius = float(ball.radius)
    gripper = cfg.gripper

    pairs = sample_antipodal(mesh, gripper, cfg.grasp_samples, _rng(cfg.seed, obj_id, _SAMPLE))
    qual = robust_force_closure_many(pairs, mesh, gripper.friction_mu, cfg.quality.sigma_c,
                                     cfg.quality.trials, _rng(cfg.seed, obj_id, _QUALITY))
    grasps = [
        {"id": i, "contacts": p.to_dict(), "quality": q.score, "in_force_closure": q.in_force_closure}
        for i, (p, q) in enumerate(zip(pairs, qual))
    ]

    intr = cfg.intrinsics
    stem = mesh_path.stem
    views = []
    directions = icosahedron_face_directions()[: cfg.views_per_object]
    centered = BoundingBall(np.zeros(3), radius)
    for v, direction in enumerate(directions):
        seed = derive_seed(cfg.seed, obj_id, _VIEW, v)
        dist = sample_view_distance(radius, np.random.default_rng(seed))
        pose = viewpoint_pose(centered, direction, dist)
        img = render_depth(mesh, intr, pose)
        rel = f"depth/{obj_id:03d}_{stem}_{v:02d}.{cfg.depth_format}"
        write_depth(img, Path(out_dir) / rel)

        labels = [project_grasp(p, intr, pose, gamma_pixel_w=cfg.gamma_pixel_w) for p in pairs]
        keep = filter_tilt(labels, cfg.tilt_limit)
        kept_ids = [i for i, g in enumerate(labels) if any(g is k for k in keep)]
        scores = [qual[i].score for i in kept_ids]
        flags = label_top_fraction(scores, cfg.top_fraction)
        views.append({
            "index": v,
            "seed": seed,
            "distance": dist,
            "camera": {"intrinsics": intr.to_dict(), "pose": pose.to_dict()},
            "depth": rel,
            "grasps": [
                {"grasp": i, "label": g.to_dict(), "score": qual[i].score, "positive": bool(f)}
                for i, g, f in zip(kept_ids, keep, flags)
            ],
        })
    rec = {
        "id": obj_id,
        "name": stem,
        "mesh": os.path.relpath(mesh_path.resolve(), Path(out_dir).resolve()),
        "transform": {"scale": cfg.mesh_scale, "translation": (-ball.center).tolist()},
        "bounding_radius": radius,
        "grasps": grasps,
        "views": views,
    }
    return rec, None


def _worker(args):
    return _object_record(*args)


def generate_dataset(object_dir, out_dir, config: RunConfig = None, jobs=1) -> dict:
    """Render, label and score every mesh in ``object_dir`` into ``out_dir``.

    Per object: antipodal grasps are sampled once in 3D and scored with
    robust force closure; each view renders a depth file, projects and
    tilt-filters the grasps and marks the top fraction by score. Meshes
    that fail to load become manifest warnings. Returns the manifest,
    which is also written to ``out_dir/manifest.json``.
    """
    cfg = RunConfig() if config is None else config
    meshes = list_meshes(object_dir)
    if not meshes:
        raise DatasetError(f"{object_dir}: no .obj or .off meshes")
    out = Path(out_dir)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    tasks = [(i, p, out, cfg) for i, p in enumerate(meshes)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]
    objects, warns = [], []
    for rec, warn in results:
        if warn is not None:
            warnings.warn(f"skipping {warn['mesh']}: {warn['error']}")
            warns.append(warn)
        else:
            objects.append(rec)
    if not objects:
        raise DatasetError(f"{object_dir}: no loadable mesh")
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "master_seed": cfg.seed,
        "config": cfg.to_dict(),
        "warnings": warns,
        "objects": objects,
    }
    write_manifest(manifest, out / MANIFEST_NAME)
    return manifest


def write_manifest(manifest, path):
    text = json.dumps(manifest, indent=1, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def read_manifest(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None


# --------------------------------------------------------------------------
# validation


def validate_manifest(path, label_tol=1e-6, check_depth=True) -> list:
    """Check every manifest invariant; returns a list of problems (empty when clean).

    Checks: referenced files exist (and depth files load at the camera's
    size), labels pass the tilt filter and the image-grasp ranges, each
    view holds at most ``grasp_samples`` grasps, exactly
    ``ceil(top_fraction * n)`` are positive, positives score no lower than
    negatives, and each label re-projects from its stored contacts.
    """
    path = Path(path)
    m = read_manifest(path)
    root = path.parent
    issues = []

    def bad(code, msg, **where):
        issues.append({"code": code, "message": msg, **where})

    if m.get("format") != MANIFEST_FORMAT:
        bad("format", f"unexpected format {m.get('format')!r}")
        return issues
    try:
        cfg = RunConfig.from_dict(m.get("config", {}))
    except GraspSynthError as exc:
        bad("config", str(exc))
        return issues
    for obj in m.get("objects", []):
        oid = obj.get("id")
        mesh = root / obj["mesh"]
        if not mesh.exists():
            bad("missing_file", f"mesh file not found: {obj['mesh']}", object=oid, file=obj["mesh"])
        contacts = {g["id"]: (ContactPair.from_dict(g["contacts"]), g["quality"]) for g in obj["grasps"]}
        for view in obj["views"]:
            vid = view["index"]
            where = {"object": oid, "view": vid}
            fpath = root / view["depth"]
            intr_d = view["camera"]["intrinsics"]
            if not fpath.exists():
                bad("missing_file", f"depth file not found: {view['depth']}", file=view["depth"], **where)
            elif check_depth:
                try:
                    shape = read_depth(fpath).shape
                    if shape != (intr_d["height"], intr_d["width"]):
                        bad("depth_shape", f"{view['depth']}: shape {shape} does not match camera", **where)
                except (ValueError, OSError) as exc:
                    bad("depth_unreadable", f"{view['depth']}: {exc}", **where)
            entries = view["grasps"]
            if len(entries) > cfg.grasp_samples:
                bad("too_many_grasps", f"{len(entries)} grasps > grasp_samples {cfg.grasp_samples}", **where)
            pos = [e["score"] for e in entries if e["positive"]]
            neg = [e["score"] for e in entries if not e["positive"]]
            expect = math.ceil(round(cfg.top_fraction * len(entries), 9)) if entries else 0
            if len(pos) != expect:
                bad("positive_count", f"{len(pos)} positives, expected {expect}", **where)
            if pos and neg and min(pos) < max(neg):
                bad("positive_order", "a positive grasp scores below a negative one", **where)
            intr = CameraIntrinsics.from_dict(intr_d)
            pose = CameraPose.from_dict(view["camera"]["pose"])
            for e in entries:
                g = ImageGrasp.from_dict(e["label"])
                gw = {"grasp": e["grasp"], **where}
                if abs(g.gamma) > cfg.tilt_limit:
                    bad("tilt", f"gamma {g.gamma} outside +-{cfg.tilt_limit}", **gw)
                if not (-90.0 <= g.theta <= 90.0 and g.w > 0 and g.z > 0):
                    bad("label_range", "theta, w or z out of range", **gw)
                if e["grasp"] not in contacts:
                    bad("unknown_grasp", f"grasp id {e['grasp']} not in object grasp list", **gw)
                    continue
                pair, quality = contacts[e["grasp"]]
                if e["score"] != quality:
                    bad("score_mismatch", "view score differs from the object grasp quality", **gw)
                ref = project_grasp(pair, intr, pose, gamma_pixel_w=cfg.gamma_pixel_w)
                if not _labels_close(g, ref, label_tol):
                    bad("label_mismatch", "label does not re-project from its contacts", **gw)
    return issues


def _labels_close(a: ImageGrasp, b: ImageGrasp, tol):
    va = np.array([a.x, a.y, a.w, a.h, a.z, a.gamma])
    vb = np.array([b.x, b.y, b.w, b.h, b.z, b.gamma])
    dtheta = abs(a.theta - b.theta)
    dtheta = min(dtheta, abs(dtheta - 180.0))
    return bool(np.all(np.abs(va - vb) <= tol) and dtheta <= tol)
