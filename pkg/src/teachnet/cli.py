"""``teachnet`` command-line entry point.

Every subcommand reads an optional JSON config (``--config`` or the file
named by ``TEACHNET_CONFIG``), validated against the bundled schema, and
lets flags override the file. Errors print one line
``teachnet: error [<kind>]: <message>`` to stderr and exit nonzero:

===========  ====  =============================================
kind         exit  meaning
===========  ====  =============================================
usage        2     unknown subcommand or bad flags (argparse)
missing      3     an input file or directory does not exist
config       4     config file unreadable or fails the schema
input        5     input data malformed or a dataset failed validation
training     6     training diverged
check        7     a gradient check exceeded its tolerance
===========  ====  =============================================
"""

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

ENV_CONFIG = "TEACHNET_CONFIG"
EXIT = {"usage": 2, "missing": 3, "config": 4, "input": 5, "training": 6, "check": 7}


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def schema():
    return json.loads(resources.files("teachnet").joinpath("data/config.schema.json").read_text())


def load_config(path=None):
    """Config dict from ``path`` or ``$TEACHNET_CONFIG``; ``{}`` when neither is set."""
    import jsonschema

    path = path or os.environ.get(ENV_CONFIG)
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("missing", f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except ValueError as exc:
        raise CliError("config", f"{path}: not valid JSON ({exc})") from None
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise CliError("config", f"{path}: {where}: {exc.message}") from None
    return cfg


def _section(cfg, name, **overrides):
    out = dict(cfg.get(name, {}))
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _need(path, what):
    if not Path(path).exists():
        raise CliError("missing", f"{what} not found: {path}")
    return Path(path)


def _dataset_config(cfg, **overrides):
    from .dataset import DatasetConfig

    try:
        return DatasetConfig.from_dict(_section(cfg, "dataset", **overrides))
    except TypeError as exc:
        raise CliError("config", str(exc)) from None


def _load_manifest(path):
    from .dataset import Manifest

    p = _need(path, "dataset")
    mp = p / "manifest.json" if p.is_dir() else p
    _need(mp, "manifest")
    try:
        return Manifest.load(mp)
    except (ValueError, KeyError) as exc:
        raise CliError("input", f"{mp}: {exc}") from None


def _split(cfg, manifest, which, fraction=None, seed=None):
    from .dataset import split_dataset

    if which == "all":
        return manifest
    sp = _section(cfg, "split", train_fraction=fraction, seed=seed)
    train, test = split_dataset(manifest, sp.get("train_fraction", 0.75), sp.get("seed", 0))
    part = train if which == "train" else test
    if len(part) == 0:
        raise CliError("input", f"the {which} split of {manifest.root} is empty")
    return part


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


# -- subcommands -----------------------------------------------------------------


def cmd_gen_dataset(args, cfg):
    from .dataset import generate_dataset

    g = _section(cfg, "gen", n=args.n, seed=args.seed, jobs=args.jobs)
    if "n" not in g:
        raise CliError("config", "gen-dataset needs --n or gen.n in the config")
    dcfg = _dataset_config(cfg, image_size=args.image_size)
    m = generate_dataset(int(g["n"]), int(g.get("seed", 0)), args.out, dcfg, n_jobs=int(g.get("jobs", 1)))
    _emit({"out": str(args.out), "accepted": m.data["accepted"], "skipped": len(m.data["skipped"]),
           "rejected_attempts": m.data["rejected_attempts"]})


def _read_poses(path):
    data = json.loads(_need(path, "keypoint file").read_text())
    if isinstance(data, dict):
        data = data.get("poses", [data.get("keypoints")])
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (21, 3):
        raise CliError("input", f"{path}: expected 21x3 keypoints (or a list of them), got shape {arr.shape}")
    return arr


def cmd_retarget(args, cfg):
    from .kinematics import JOINT_NAMES, load_model
    from .retarget import SolveConfig, GoalError, retarget_hand

    s = _section(cfg, "solve", restarts=args.restarts, seed=args.seed, scale=args.scale)
    weights = tuple(s.pop("weights", (1.0, 0.2, 0.2)))
    scale = s.pop("scale", 1.0)
    try:
        solve = SolveConfig(**s)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from None
    model = load_model()
    results = []
    for kp in _read_poses(args.keypoints):
        try:
            sol = retarget_hand(model, kp, weights, solve, scale=scale)
        except (GoalError, ValueError) as exc:
            raise CliError("input", str(exc)) from None
        results.append({"theta": [float(v) for v in sol.theta], "cost": sol.cost,
                        "collision_cost": sol.diagnostics["collision_cost"]})
    out = {"joint_names": list(JOINT_NAMES), "results": results}
    text = json.dumps(out, indent=1) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        _emit({"out": str(args.out), "n": len(results)})
    else:
        sys.stdout.write(text)


def cmd_render(args, cfg):
    from .dataset import _hand_center_cam
    from .geometry import crop_resize_normalize, render_depth, write_depth, write_image_blob
    from .kinematics import keypoint_positions, load_model

    dcfg = _dataset_config(cfg)
    model = load_model(dcfg.model_path)
    if args.theta:
        data = json.loads(_need(args.theta, "theta file").read_text())
        theta = np.asarray(data["theta"] if isinstance(data, dict) else data, dtype=float)
        if theta.shape != (17,):
            raise CliError("input", f"{args.theta}: theta must have 17 entries, got {theta.shape}")
    else:
        theta = model.mid_range
    cams = dcfg.cameras()
    views = range(len(cams)) if args.view is None else [args.view]
    if any(not 0 <= v < len(cams) for v in views):
        raise CliError("input", f"--view must be in 0..{len(cams) - 1}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kp = keypoint_positions(model, theta)
    for v in views:
        img = render_depth(model, theta, cams[v])
        if args.raw:
            write_depth(out / f"view_{v}.f32", img)
        else:
            norm = crop_resize_normalize(img, _hand_center_cam(cams[v], kp), dcfg.cube_size, dcfg.image_size)
            write_image_blob(out / f"view_{v}.f32", norm, {"camera_id": v, "normalized": True})
    _emit({"out": str(out), "views": list(views)})


def cmd_train(args, cfg):
    from .train import TrainConfig, TrainingDiverged, train

    manifest = _load_manifest(args.dataset)
    part = _split(cfg, manifest, args.split, args.train_fraction, args.split_seed)
    hp = _section(cfg, "train", variant=args.variant, seed=args.seed, epochs=args.epochs,
                  batch_size=args.batch, learning_rate=args.lr, input_size=args.input_size,
                  teacher_pretrain_epochs=args.teacher_pretrain_epochs)
    variant = hp.pop("variant", "teach_hard_late")
    seed = hp.pop("seed", 0)
    try:
        TrainConfig.from_dict(dict(hp, variant=variant, seed=seed))
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    part.save(out / "train_manifest.json")
    try:
        res = train(part, variant, hp, seed, out)
    except TrainingDiverged as exc:
        raise CliError("training", str(exc)) from None
    _emit({"checkpoint": str(res.checkpoint), "log": str(res.log), "n_train": len(part)})


def cmd_eval(args, cfg):
    from .kinematics import load_model
    from .metrics import emit_report
    from .net.checkpoint import CheckpointError
    from .train import evaluate

    _need(args.ckpt, "checkpoint")
    manifest = _load_manifest(args.dataset)
    part = _split(cfg, manifest, args.split, args.train_fraction, args.split_seed)
    report = Path(args.report)
    pred_path = Path(args.predictions) if args.predictions else report / "predictions.csv"
    try:
        pred, gt = evaluate(args.ckpt, part, pred_path, branch=args.branch)
    except (CheckpointError, ValueError) as exc:
        raise CliError("input", str(exc)) from None
    rep = emit_report(pred, gt, report, model=load_model())
    _emit({"predictions": str(pred_path), "report": str(report), "frames": rep["n_frames"],
           "summary": {str(t): v for t, v in rep["summary"].items()}})


def cmd_report(args, cfg):
    from .kinematics import load_model
    from .metrics import emit_report
    from .train import read_predictions

    try:
        pred, gt, _ = read_predictions(_need(args.predictions, "predictions file"))
        rep = emit_report(pred, gt, args.out, model=None if args.no_distance else load_model())
    except ValueError as exc:
        raise CliError("input", f"{args.predictions}: {exc}") from None
    _emit({"report": str(args.out), "frames": rep["n_frames"],
           "summary": {str(t): v for t, v in rep["summary"].items()}})


def cmd_grad_check(args, cfg):
    from .net.gradcheck import TOL, run_all

    results = run_all(seed=args.seed, n_probes=args.probes)
    for r in results:
        print(f"{r.name:18s} max_rel_error={r.max_rel_error:.3e} {'PASS' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError("check", f"gradient error >= {TOL:g} in: {', '.join(failed)}")


def cmd_validate_dataset(args, cfg):
    from .validate import validate_dataset

    p = _need(args.dataset, "dataset")
    _need(p / "manifest.json" if p.is_dir() else p, "manifest")
    try:
        rep = validate_dataset(p, rerender=not args.no_rerender)
    except (ValueError, KeyError) as exc:
        raise CliError("input", f"{p}: unreadable dataset ({exc})") from None
    for e in rep.errors[:50]:
        print(e)
    if not rep.ok:
        raise CliError("input", f"{len(rep.errors)} problem(s) in {rep.n_checked} checked record(s)")
    _emit({"dataset": str(p), "checked": rep.n_checked, "ok": True})


# -- parser ----------------------------------------------------------------------


def build_parser():
    from .train import VARIANTS

    ap = argparse.ArgumentParser(prog="teachnet", description="Hand retargeting, dataset and training pipeline.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help=f"JSON config (default: ${ENV_CONFIG})")
        p.set_defaults(func=fn)
        return p

    def split_flags(p, default):
        p.add_argument("--split", choices=("train", "test", "all"), default=default)
        p.add_argument("--train-fraction", type=float)
        p.add_argument("--split-seed", type=int)

    p = add("gen-dataset", cmd_gen_dataset, "generate a paired dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--image-size", type=int)

    p = add("retarget", cmd_retarget, "map human keypoints to robot joint angles")
    p.add_argument("--keypoints", required=True, help="JSON with 21x3 keypoints or a list of poses")
    p.add_argument("--out")
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=float)

    p = add("render", cmd_render, "render robot depth views of a joint vector")
    p.add_argument("--theta", help="JSON with a 17-entry theta (default: mid-range pose)")
    p.add_argument("--view", type=int, help="camera index 0..8 (default: all)")
    p.add_argument("--raw", action="store_true", help="write metric depth instead of normalized crops")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train one variant")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--input-size", type=int)
    p.add_argument("--teacher-pretrain-epochs", type=int)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    split_flags(p, "train")

    p = add("eval", cmd_eval, "predict on a dataset split and write a report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--predictions")
    p.add_argument("--branch", choices=("human", "robot"))
    split_flags(p, "test")

    p = add("report", cmd_report, "metrics CSVs from a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-distance", action="store_true", help="skip keypoint distance curves")

    p = add("grad-check", cmd_grad_check, "finite-difference check of every layer and loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=100)

    p = add("validate-dataset", cmd_validate_dataset, "re-check every record of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--no-rerender", action="store_true")
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed its own message
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except CliError as exc:
        print(f"teachnet: error [{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT[exc.kind]
    return 0


if __name__ == "__main__":
    sys.exit(main())
