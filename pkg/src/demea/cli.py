"""Command-line front end.

Exit codes: 0 success, 1 verification or training failure, 2 usage or input error.
Progress goes to stderr; results go to files (and a short summary to stdout).
"""
import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

_threads = os.environ.get("DEMEA_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np  # noqa: E402

from . import gradcheck, latent, shapes, synthetic  # noqa: E402
from .autoencoder import MeshAutoencoder, ModelConfig, TrainingError, build_supports, train  # noqa: E402
from .edl import bind_skinning  # noqa: E402
from .hierarchy import (HierarchyError, build_hierarchy, extract_graph, graph_level_for,  # noqa: E402
                        load_hierarchy, save_hierarchy)
from .mesh import MeshError, compute_metrics, load_mesh, save_mesh  # noqa: E402

log = logging.getLogger("demea")

CONFIG_NAME = "config.json"
HIERARCHY_DIR = "hierarchy"
CHECKPOINT_NAME = "model.ckpt"


class UsageError(Exception):
    pass


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def write_manifest(out_dir, args, argv, **extra):
    """Record the command as issued next to its outputs."""
    data = {
        "command": args.command,
        "argv": list(argv),
        "config": getattr(args, "config", None),
        "data": getattr(args, "data", None),
        "out": str(out_dir),
        "seed": getattr(args, "seed", None),
        **extra,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _make_hierarchy(mesh, graph_nodes, levels):
    if levels[0] != mesh.n_vertices:
        levels = [mesh.n_vertices] + list(levels)
    if graph_nodes not in levels[1:]:
        raise UsageError(f"graph node count {graph_nodes} must appear in the level counts {levels}")
    graph = extract_graph(mesh, graph_nodes)
    return build_hierarchy(mesh, graph, levels)


def print_levels(hierarchy, out=None):
    out = out or sys.stdout
    print("level  vertices  faces  graph", file=out)
    for k, lv in enumerate(hierarchy.levels):
        mark = "*" if k == hierarchy.graph_level else ""
        print(f"{k:5d}  {lv.n_vertices:8d}  {len(lv.mesh.faces):5d}  {mark}", file=out)


# -- commands -------------------------------------------------------------------

def cmd_build_hierarchy(args, argv):
    mesh = load_mesh(args.mesh)
    h = _make_hierarchy(mesh, args.graph_nodes, args.levels)
    supports = build_supports(h, "spiral", args.spiral_length)
    if args.spectral:
        for k, sup in build_supports(h, "spectral").items():
            supports[k].update(sup)
    out = Path(args.out)
    save_hierarchy(h, out, supports)
    print_levels(h)
    return 0


def _load_dataset(data_dir):
    root = Path(data_dir)
    if not root.is_dir():
        raise UsageError(f"dataset directory {root} does not exist")
    template_path = root / "template.obj"
    if not template_path.exists():
        raise UsageError(f"{root} has no template.obj")
    template = load_mesh(template_path)
    samples = sorted(p for p in root.glob("*.obj") if p.name != "template.obj")
    if not samples:
        raise UsageError(f"{root} has no training meshes besides template.obj")
    data = []
    for p in samples:
        m = load_mesh(p)
        if m.n_vertices != template.n_vertices or not np.array_equal(m.faces, template.faces):
            raise UsageError(f"{p} does not share the template's topology")
        data.append(m.vertices)
    return template, np.stack(data), samples


def cmd_train(args, argv):
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.variant:
        cfg.variant = args.variant
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.max_steps = args.steps
    cfg.validate()
    template, data, _ = _load_dataset(args.data)
    hier_dir = Path(args.data) / HIERARCHY_DIR
    supports = None
    if args.hierarchy or hier_dir.exists():
        h, supports = load_hierarchy(args.hierarchy or hier_dir)
        if h.levels[0].n_vertices != template.n_vertices:
            raise UsageError("hierarchy does not match the template")
    else:
        if not cfg.level_counts or not cfg.graph_nodes:
            raise UsageError("config needs level_counts and graph_nodes when the dataset has no hierarchy/")
        h = _make_hierarchy(template, cfg.graph_nodes, cfg.level_counts)
    model = MeshAutoencoder(h, cfg, supports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / CONFIG_NAME)
    save_hierarchy(h, out / HIERARCHY_DIR, model.supports)
    write_manifest(out, args, argv)
    t0 = time.time()
    history = train(model, data, checkpoint=out / CHECKPOINT_NAME, history_path=out / "loss.csv",
                    progress=args.progress)
    model.save(out / CHECKPOINT_NAME)
    l1, euclid = model.mean_vertex_error(data)
    diag = compute_metrics(template).bbox_diagonal
    summary = {"steps": len(history), "final_loss": history[-1][2] if history else None,
               "mean_l1_error": l1, "mean_euclidean_error": euclid, "bbox_diagonal": diag,
               "seconds": time.time() - t0}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    last = "n/a" if not history else f"{history[-1][2]:.6g}"
    print(f"steps {len(history)}  final loss {last}  "
          f"mean l1 error {l1:.6g} ({l1 / diag:.3g} x bbox diagonal)")
    return 0


def load_model(ckpt):
    """Model from a training output directory (config.json, hierarchy/ and checkpoint)."""
    ckpt = Path(ckpt)
    if not ckpt.exists():
        raise UsageError(f"checkpoint {ckpt} does not exist")
    root = ckpt.parent
    cfg = ModelConfig.load(root / CONFIG_NAME)
    h, supports = load_hierarchy(root / HIERARCHY_DIR)
    model = MeshAutoencoder(h, cfg, supports)
    model.load(ckpt, with_moments=False)
    return model


def _mesh_out(model, vertices, path):
    save_mesh(model.template.with_vertices(vertices), path)


def cmd_roundtrip(args, argv):
    model = load_model(args.ckpt)
    mesh = load_mesh(args.mesh)
    if mesh.n_vertices != model.template.n_vertices:
        raise UsageError(f"{args.mesh} has {mesh.n_vertices} vertices, model expects "
                         f"{model.template.n_vertices}")
    rec = model.reconstruct(model.encode(mesh.vertices).astype(np.float64))
    _mesh_out(model, rec, args.out)
    err = np.linalg.norm(rec - mesh.vertices, axis=1)
    report = {"input": str(args.mesh), "output": str(args.out),
              "mean_vertex_error": float(err.mean()), "max_vertex_error": float(err.max())}
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"mean per-vertex error {report['mean_vertex_error']:.6g}")
    return 0


def _codes_from(model, paths):
    """Latent codes for a list of OBJ files and/or latent CSV files."""
    codes = []
    for p in paths:
        if str(p).endswith(".csv"):
            codes.extend(latent.read_latents(p))
        else:
            if model is None:
                raise UsageError("--ckpt is required to encode meshes")
            codes.append(model.encode(load_mesh(p).vertices).astype(np.float64))
    return np.array(codes)


def _decode_all(model, codes, out_dir, prefix):
    # one code at a time: float32 matmul rounding depends on the batch shape,
    # and decoded files should not depend on what they were decoded alongside
    out = Path(out_dir)
    for i, z in enumerate(np.asarray(codes)):
        _mesh_out(model, model.reconstruct(z), out / f"{prefix}_{i:03d}.obj")


def cmd_encode(args, argv):
    model = load_model(args.ckpt)
    latent.write_latents(args.out, _codes_from(model, args.meshes))
    return 0


def cmd_decode(args, argv):
    model = load_model(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _decode_all(model, latent.read_latents(args.latents), out, "decoded")
    return 0


def cmd_latent(args, argv):
    model = load_model(args.ckpt) if args.ckpt else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.op == "interpolate":
        s, t = _codes_from(model, [args.source])[0], _codes_from(model, [args.target])[0]
        codes = np.array([latent.interpolate(s, t, a) for a in args.alphas])
        prefix = "interp"
    elif args.op == "transfer":
        seq = _codes_from(model, args.sequence)
        first = _codes_from(model, [args.target_first])[0]
        codes = latent.transfer(seq, first)
        prefix = "transfer"
    else:
        codes = latent.smooth(_codes_from(model, args.sequence), args.alpha)
        prefix = "smooth"
    latent.write_latents(out / "latents.csv", codes)
    if model is not None and not args.no_decode:
        _decode_all(model, codes, out, prefix)
    write_manifest(out, args, argv)
    return 0


def cmd_gradcheck(args, argv):
    scopes = gradcheck.SCOPES if args.scope == "all" else (args.scope,)
    ok = True
    for scope in scopes:
        for seed in range(args.seed, args.seed + args.seeds):
            r = gradcheck.run_check(scope, seed, fault=args.inject_fault)
            ok &= r.passed
            print(f"{scope:9s} seed {seed:4d}  max rel err {r.max_rel_error:.3e}  "
                  f"tol {r.tolerance:.0e}  {'PASS' if r.passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_synth(args, argv):
    rng = np.random.default_rng(args.seed)
    if args.shape == "bar":
        mesh = shapes.ellipsoid_bar()
        levels, nodes = [506, 128, 32, 8], 128
    else:
        mesh = shapes.icosphere(3)
        levels, nodes = [642, 162, 42, 12], 162
    h = _make_hierarchy(mesh, nodes, levels)
    binding = bind_skinning(mesh, h.graph, h.graph_level)
    if args.shape == "bar":
        data = synthetic.bar_dataset(mesh, h.graph, binding, args.count, rng)
    else:
        data = synthetic.random_dataset(mesh, h.graph, binding, args.count, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, out / "template.obj")
    for i, v in enumerate(data):
        save_mesh(mesh.with_vertices(v), out / f"sample_{i:03d}.obj")
    save_hierarchy(h, out / HIERARCHY_DIR, build_supports(h, "spiral"))
    write_manifest(out, args, argv, level_counts=levels, graph_nodes=nodes)
    print_levels(h)
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="demea", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-hierarchy", help="simplify a template into a mesh hierarchy")
    b.add_argument("mesh")
    b.add_argument("--graph-nodes", type=int, required=True)
    b.add_argument("--levels", type=_ints, required=True,
                   help="vertex counts from fine to coarse, e.g. 162,42,12")
    b.add_argument("--spiral-length", type=int)
    b.add_argument("--spectral", action="store_true", help="also write Laplacians")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_hierarchy)

    t = sub.add_parser("train", help="train the autoencoder on a directory of meshes")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="directory with template.obj and training meshes")
    t.add_argument("--hierarchy", help="hierarchy directory (default: <data>/hierarchy)")
    t.add_argument("--out", required=True)
    t.add_argument("--variant", choices=("EDL", "GL", "LP"))
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--progress", type=int, default=100, help="log every N steps")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("roundtrip", help="encode and reconstruct one mesh")
    r.add_argument("--ckpt", required=True)
    r.add_argument("mesh")
    r.add_argument("--out", required=True)
    r.add_argument("--report", help="JSON error report (default: next to --out)")
    r.set_defaults(func=cmd_roundtrip)

    e = sub.add_parser("encode", help="write latent codes of meshes as CSV")
    e.add_argument("--ckpt", required=True)
    e.add_argument("meshes", nargs="+")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct meshes from a latent CSV")
    d.add_argument("--ckpt", required=True)
    d.add_argument("latents")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    lat = sub.add_parser("latent", help="latent interpolation, transfer and smoothing")
    lsub = lat.add_subparsers(dest="op", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ckpt", help="needed to encode OBJ inputs and to decode results")
    common.add_argument("--out", required=True)
    common.add_argument("--no-decode", action="store_true", help="only write latents.csv")
    li = lsub.add_parser("interpolate", parents=[common])
    li.add_argument("--source", required=True, help="OBJ or latent CSV")
    li.add_argument("--target", required=True, help="OBJ or latent CSV")
    li.add_argument("--alphas", type=_floats, default=[0, 0.2, 0.4, 0.6, 0.8, 1.0])
    lt = lsub.add_parser("transfer", parents=[common])
    lt.add_argument("--sequence", nargs="+", required=True, help="source frames (OBJ or CSV)")
    lt.add_argument("--target-first", required=True, help="first frame of the new identity")
    ls = lsub.add_parser("smooth", parents=[common])
    ls.add_argument("--sequence", nargs="+", required=True)
    ls.add_argument("--alpha", type=float, required=True)
    lat.set_defaults(func=cmd_latent)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--scope", choices=gradcheck.SCOPES + ("all",), default="all")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    g.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic training set")
    s.add_argument("--shape", choices=("bar", "sphere"), default="bar")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args, argv)
    except (UsageError, MeshError, HierarchyError, FileNotFoundError, ValueError,
            latent.LatentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
