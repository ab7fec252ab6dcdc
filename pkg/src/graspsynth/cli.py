"""Command-line interface: ``graspsynth <subcommand> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error (missing or
malformed input), 3 validation failure. Errors go to stderr as one JSON
object ``{"error": <type>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVALID = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _read_json(path):
    from .errors import DatasetError

    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None


def _config(args, **overrides):
    from .config import load_config

    ov = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "seed", None) is not None:
        ov["seed"] = args.seed
    return load_config(getattr(args, "config", None), ov)


def _labels_from(data):
    from .projection import ImageGrasp

    items = data["labels"] if isinstance(data, dict) else data
    return [ImageGrasp.from_dict(d) for d in items]


# --------------------------------------------------------------------------
# subcommands


def cmd_render(args):
    from .camera import icosahedron_face_directions, render_depth, sample_view_distance, viewpoint_pose
    from .dataset import _VIEW, derive_seed
    from .depth_io import write_depth
    from .mesh import BoundingBall, bounding_ball, load_mesh

    cfg = _config(args, views_per_object=args.views, depth_format=args.format, mesh_scale=args.scale)
    mesh = load_mesh(args.mesh, scale=cfg.mesh_scale)
    ball = bounding_ball(mesh)
    mesh = mesh.transformed(translation=-ball.center)
    centered = BoundingBall(np.zeros(3), ball.radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    intr = cfg.intrinsics
    views = []
    for v, d in enumerate(icosahedron_face_directions()[: cfg.views_per_object]):
        seed = derive_seed(cfg.seed, 0, _VIEW, v)
        pose = viewpoint_pose(centered, d, sample_view_distance(ball.radius, np.random.default_rng(seed)))
        name = f"{Path(args.mesh).stem}_{v:02d}.{cfg.depth_format}"
        write_depth(render_depth(mesh, intr, pose), out / name)
        views.append({"depth": name, "seed": seed, "intrinsics": intr.to_dict(), "pose": pose.to_dict()})
    _emit({"mesh": str(args.mesh), "translation": (-ball.center).tolist(), "views": views}, out / "cameras.json")
    print(f"wrote {len(views)} depth images to {out}")
    return EXIT_OK


def cmd_sample_grasps(args):
    from .mesh import load_mesh
    from .sampling import label_top_fraction, robust_force_closure_many, sample_antipodal

    cfg = _config(args, grasp_samples=args.n, mesh_scale=args.scale)
    mesh = load_mesh(args.mesh, scale=cfg.mesh_scale)
    rng = np.random.default_rng(cfg.seed)
    pairs = sample_antipodal(mesh, cfg.gripper, cfg.grasp_samples, rng)
    qual = robust_force_closure_many(pairs, mesh, cfg.gripper.friction_mu, cfg.quality.sigma_c,
                                     cfg.quality.trials, rng)
    flags = label_top_fraction([q.score for q in qual], cfg.top_fraction)
    grasps = [{"contacts": p.to_dict(), "width": p.width, "quality": q.score,
               "in_force_closure": q.in_force_closure, "positive": f}
              for p, q, f in zip(pairs, qual, flags)]
    _emit({"mesh": str(args.mesh), "seed": cfg.seed, "grasps": grasps}, args.out)
    if args.out:
        print(f"{len(grasps)} grasps -> {args.out}")
    return EXIT_OK


def cmd_gen_dataset(args):
    from .dataset import generate_dataset

    cfg = _config(args, views_per_object=args.views, grasp_samples=args.grasps)
    m = generate_dataset(args.object_dir, args.out, cfg, jobs=args.jobs)
    n_views = sum(len(o["views"]) for o in m["objects"])
    n_labels = sum(len(v["grasps"]) for o in m["objects"] for v in o["views"])
    print(f"{len(m['objects'])} objects, {n_views} views, {n_labels} labels, "
          f"{len(m['warnings'])} warnings -> {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def cmd_augment(args):
    from .augment import sample_pair
    from .depth_io import read_depth, write_depth

    cfg = _config(args)
    img = read_depth(args.depth)
    labels = _labels_from(_read_json(args.labels)) if args.labels else []
    rng = np.random.default_rng(cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = Path(args.depth).suffix
    for i in range(args.count):
        t, _ = sample_pair(cfg.augmentation, rng)
        s = t.apply(img, labels, rng)
        write_depth(s.image, out / f"aug_{i:03d}{suffix}")
        _emit({"labels": [g.to_dict() for g in s.labels], "ops": _jsonable(s.applied_ops)},
              out / f"aug_{i:03d}.json")
    print(f"wrote {args.count} augmented samples to {out}")
    return EXIT_OK


def _jsonable(ops):
    out = []
    for kind, info in ops:
        out.append({"kind": kind, **{k: (None if isinstance(v, float) and math.isinf(v) else v)
                                     for k, v in info.items()}})
    return out


def cmd_match(args):
    from .rotated import generate_anchors, match_topk

    cfg = _config(args)
    mc = cfg.matching
    labels = _labels_from(_read_json(args.labels))
    stride = args.stride or mc.stride
    fh = args.feat_h or int(math.ceil(cfg.camera.height / stride))
    fw = args.feat_w or int(math.ceil(cfg.camera.width / stride))
    anchors = generate_anchors(fh, fw, stride, mc.scales, mc.ratios, mc.angles)
    gts = [g.to_box() for g in labels]
    k = args.k or mc.k
    a = match_topk(anchors, gts, mc.pos_thresh, mc.neg_thresh, k, np.random.default_rng(cfg.seed))
    stats = {"anchors": len(anchors), "gts": len(gts), "k": k, **a.counts(len(gts))}
    _emit(stats, args.out)
    return EXIT_OK


def cmd_losscheck(args):
    from .gradcheck import TOL, run_all

    results = run_all(seed=args.seed or 0, n_inputs=args.inputs)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<14} inputs={r.n_inputs} "
              f"max_rel_err={r.max_rel_error:.3e} tol={TOL:.0e} ({r.seconds:.2f}s)")
    return EXIT_OK if ok else EXIT_INVALID


def _load_scene(scene_dir, trunc):
    from .camera import CameraIntrinsics, CameraPose
    from .collision import build_scene
    from .depth_io import read_depth

    d = Path(scene_dir)
    meta = _read_json(d / "scene.json")
    intr = CameraIntrinsics.from_dict(meta["intrinsics"])
    pose = CameraPose.from_dict(meta["pose"]) if "pose" in meta else CameraPose.identity()
    depths = [read_depth(d / name) for name in meta.get("objects", [])]
    return build_scene(depths, intr, pose, trunc=meta.get("trunc", trunc))


def cmd_refine_beta(args):
    from .collision import beta_grid, collision_score, rank_graspable, refine_beta
    from .projection import ImageGrasp

    cfg = _config(args, collision={"grid_step": args.grid_step} if args.grid_step else None)
    cc = cfg.collision
    scene = _load_scene(args.scene, cc.trunc)
    items = _read_json(args.grasps)
    items = items["grasps"] if isinstance(items, dict) else items
    rows, best = [], []
    for gi, it in enumerate(items):
        g = ImageGrasp.from_dict(it["label"])
        obj = it.get("object")
        for b in beta_grid(cc.grid_step):
            s = collision_score(g, b, scene, cfg.gripper, target=obj).value
            rows.append((gi, "" if obj is None else obj, float(b), s))
        beta, score = refine_beta(g, scene, cc.grid_step, cfg.gripper, target=obj)
        best.append((gi, obj, beta, score))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grasp", "object", "beta", "score"])
        w.writerows((a, b, f"{c:g}", f"{d:.9g}") for a, b, c, d in rows)
    for gi, obj, beta, score in best:
        print(f"grasp {gi} object {obj}: beta* = {beta:g} deg, score = {score:.6f} m")
    if args.rank:
        n_obj = len(scene)
        per = [[] for _ in range(n_obj)]
        for it in items:
            if it.get("object") is not None:
                per[int(it["object"])].append(ImageGrasp.from_dict(it["label"]))
        ranking, report = rank_graspable(per, scene, cc.grid_step, cfg.gripper)
        with open(args.rank, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "object", "beta", "clearance"])
            for i, e in enumerate(ranking):
                w.writerow([i + 1, e.object_id, f"{e.grasp.beta:g}", f"{-e.score:.9g}"])
        for i, e in enumerate(ranking):
            print(f"#{i + 1}: object {e.object_id} beta {e.grasp.beta:g} clearance {-e.score:.4f} m")
        for r in report:
            print(f"omitted object {r['object']}: {r['reason']}")
    return EXIT_OK


def cmd_train_toy(args):
    from .dataset import read_manifest
    from .depth_io import read_depth
    from .toy import synthetic_depth_images, toy_contrastive_train

    cfg = _config(args)
    if args.manifest:
        m = read_manifest(args.manifest)
        root = Path(args.manifest).parent
        images = [read_depth(root / v["depth"]) for o in m["objects"] for v in o["views"]]
    else:
        images = synthetic_depth_images(args.images, seed=cfg.seed)
    momentum = args.momentum if args.momentum is not None else cfg.losses.momentum
    res = toy_contrastive_train(images, cfg.augmentation, epochs=args.epochs, batch=args.batch,
                                seed=cfg.seed, lr=cfg.losses.lr, momentum=momentum,
                                tau=cfg.losses.tau, queue_size=cfg.losses.queue_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(res.losses))
    write_loss_svg(res.losses, out / "loss.svg", reference=math.log(args.batch))
    print(f"epoch 1 loss {res.losses[0]:.4f}, epoch {len(res.losses)} loss {res.losses[-1]:.4f} -> {out}")
    return EXIT_OK


def write_loss_svg(losses, path, reference=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(losses) + 1), losses, lw=1.5, label="mean InfoNCE")
    if reference is not None:
        ax.axhline(reference, color="gray", ls="--", lw=1, label="ln N")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_validate(args):
    from .dataset import validate_manifest

    issues = validate_manifest(args.manifest)
    for it in issues:
        print(json.dumps(it, sort_keys=True))
    if issues:
        print(f"{len(issues)} problem(s) found", file=sys.stderr)
        return EXIT_INVALID
    print("manifest OK")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="graspsynth", description="Synthetic grasp datasets and grasp geometry tools.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="master seed (u64)")
        sp.set_defaults(func=fn)
        return sp

    sp = add("render", cmd_render, "render depth images of a mesh from icosahedron viewpoints")
    sp.add_argument("mesh")
    sp.add_argument("--out", required=True)
    sp.add_argument("--views", type=int)
    sp.add_argument("--format", choices=("png", "raw"))
    sp.add_argument("--scale", type=float)

    sp = add("sample-grasps", cmd_sample_grasps, "sample and score antipodal grasps on a mesh")
    sp.add_argument("mesh")
    sp.add_argument("--n", type=int)
    sp.add_argument("--scale", type=float)
    sp.add_argument("--out")

    sp = add("gen-dataset", cmd_gen_dataset, "generate a labeled dataset from a mesh directory")
    sp.add_argument("object_dir")
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--views", type=int)
    sp.add_argument("--grasps", type=int)

    sp = add("augment", cmd_augment, "draw augmented samples of a depth image and its labels")
    sp.add_argument("depth")
    sp.add_argument("--labels", help="JSON list of image grasps")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=1)

    sp = add("match", cmd_match, "anchor matching statistics for a label file")
    sp.add_argument("labels")
    sp.add_argument("--feat-h", type=int)
    sp.add_argument("--feat-w", type=int)
    sp.add_argument("--stride", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--out")

    sp = add("losscheck", cmd_losscheck, "finite-difference checks of every loss gradient")
    sp.add_argument("--inputs", type=int, default=100)

    sp = add("refine-beta", cmd_refine_beta, "collision score table over beta for grasps in a scene")
    sp.add_argument("--scene", required=True, help="directory with scene.json and depth files")
    sp.add_argument("--grasps", required=True, help="JSON list of {label, object}")
    sp.add_argument("--grid-step", type=float)
    sp.add_argument("--out", required=True, help="beta table CSV")
    sp.add_argument("--rank", help="also write an object ranking CSV")

    sp = add("train-toy", cmd_train_toy, "toy contrastive training; writes loss.csv and loss.svg")
    sp.add_argument("--manifest", help="train on a dataset's depth images instead of synthetic ones")
    sp.add_argument("--images", type=int, default=64)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch", type=int, default=16)
    sp.add_argument("--momentum", type=float)
    sp.add_argument("--out", required=True)

    sp = add("validate", cmd_validate, "check a dataset manifest; exit 3 on any problem")
    sp.add_argument("manifest")
    return p


def main(argv=None):
    from .errors import ConfigError, GraspSynthError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("graspsynth: a subcommand is required")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        code = EXIT_USAGE
        err = exc
    except (GraspSynthError, OSError, ValueError, KeyError) as exc:
        code = EXIT_DATA
        err = exc
    msg = str(err) if not isinstance(err, KeyError) else f"missing field {err}"
    print(json.dumps({"error": type(err).__name__, "message": msg}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
