"""``contact-quality`` command line: generate, train, score, sweep, detect, eval.

Every option can also be set through an environment variable named
``CQ_<OPTION>`` (``--fine-res`` becomes ``CQ_FINE_RES``); an explicit flag wins
over the environment, which wins over the built-in default. Reports embed the
resolved configuration and the sha256 of the weights file they used.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .activation import slice_through, write_grid_csv, write_slice_csv
from .detect import DEFAULT_FRACTION, Scene, body_diagonal, detect_candidates
from .errors import ContactQualityError, DegenerateGeometryError
from .features import compute_features, feature_report, oracle_label
from .geometry import load_points
from .model import (
    ContactNet, EpochRecord, GridDataset, NetConfig, TrainConfig, build, evaluate,
    load_weights, metrics_from_probabilities, prepare_input, quality_score, save_weights,
    score_inputs, score_pair, train, weights_digest,
)
from .synthgen import (
    GenerationPlan, build_dataset, load_entry_pairs, read_manifest, sweep_pairs,
    table_analog_set, write_manifest,
)

log = logging.getLogger("contact_quality")

ENV_PREFIX = "CQ_"
DEFAULT_SEED = 0
SPLITS = ("train", "validation", "all")


class CliError(Exception):
    """User-facing failure; reported as a one-line message with exit code 1."""


@dataclass
class RunConfig:
    command: str
    seed: int = DEFAULT_SEED
    out: str | None = None
    inputs: dict = field(default_factory=dict)
    net: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# output helpers


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _prepare_out_dir(out) -> Path | None:
    if out is None:
        return None
    p = Path(out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {p}: {exc.strerror or exc}") from exc
    if not os.access(p, os.W_OK):
        raise CliError(f"output directory {p} is not writable")
    return p


def _emit(out_dir: Path | None, name: str, text: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        _atomic_write(out_dir / name, text)


def _require_file(path, what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


# --------------------------------------------------------------------------
# config resolution


def _net_config(args) -> NetConfig:
    return NetConfig(coarse_res=args.coarse_res, fine_res=args.fine_res, head=args.head,
                     seed=args.seed)


def _load_model(args) -> tuple[ContactNet, str]:
    path = _require_file(args.weights, "--weights")
    model = load_weights(path)
    cfg = model.config
    for flag, want, have in (("--coarse-res", args.coarse_res, cfg.coarse_res),
                             ("--fine-res", args.fine_res, cfg.fine_res)):
        if want is not None and want != have:
            raise CliError(f"{flag} {want} disagrees with the weights file ({have})")
    return model, weights_digest(path)


def _model_section(model: ContactNet, digest: str) -> dict:
    net = asdict(model.config)
    net["conv_channels"] = list(net["conv_channels"])
    net["head_hidden"] = list(net["head_hidden"])
    return {"net": net, "weights_sha256": digest}


# --------------------------------------------------------------------------
# datasets from a manifest


def manifest_dataset(data_dir, split: str, cfg: NetConfig, dtype=np.float32) -> GridDataset:
    """Rebuild the network inputs of one manifest split from its point files."""
    from .activation import build_multires

    try:
        entries, root = read_manifest(data_dir)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(str(exc)) from exc
    if split != "all":
        entries = [e for e in entries if e["split"] == split]
    if not entries:
        raise CliError(f"{data_dir}: no samples in split {split!r}")
    pairs = load_entry_pairs(entries, root)
    inputs = [build_multires(p, cfg.coarse_res, cfg.fine_res, cfg.cubic_bins) for p in pairs]
    return GridDataset.from_inputs(inputs, [e["label"] for e in entries],
                                   [e["band"] for e in entries], [e["id"] for e in entries], dtype)


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    out = _prepare_out_dir(args.out or "data")
    plan = GenerationPlan()
    manifest = build_dataset(plan, seed=args.seed, coarse_res=args.coarse_res,
                             fine_res=args.fine_res)
    write_manifest(manifest, out)
    counts = {str(c): sum(e["label"] == c for e in manifest.entries if e["augmentation_of"] is None)
              for c in (1, 2, 3)}
    log.info("wrote %d entries (%s base per class) to %s", len(manifest.entries), counts, out)
    return 0


def cmd_train(args) -> int:
    data = args.data or "data"
    out = _prepare_out_dir(args.out or "run")
    cfg = _net_config(args)
    hyper = TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed)
    train_set = manifest_dataset(data, "train", cfg)
    val_set = manifest_dataset(data, "validation", cfg)
    model = build(cfg)

    def report(rec: EpochRecord):
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.3f lr %.2e",
                 rec.epoch, rec.train_loss, rec.val_loss, rec.val_acc, rec.lr)

    model, history = train(model, train_set, val_set, hyper, on_epoch=report)
    digest = save_weights(model, out / "weights.json")
    fields = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")
    _atomic_write(out / "history.csv",
                  _csv_text(fields, [[getattr(r, f) for f in fields] for r in history]))
    run = RunConfig("train", args.seed, str(out), {"data": str(data)},
                    training=asdict(hyper))
    doc = {"config": run.to_dict(), **_model_section(model, digest),
           "epochs_run": len(history), "validation": evaluate(model, val_set)}
    _atomic_write(out / "train_report.json", _dump_json(doc))
    log.info("weights sha256 %s", digest)
    return 0


def cmd_score(args) -> int:
    points = _require_file(args.points, "points file")
    out = _prepare_out_dir(args.out)
    if args.emit_grids and out is None:
        raise CliError("--emit-grids needs --out")
    model, digest = _load_model(args)
    pair = load_points(points)
    rep = score_pair(model, pair, pair_id=points.stem)
    try:
        f = compute_features(pair)
        oracle = feature_report(f, oracle_label(f))
    except DegenerateGeometryError as exc:
        oracle = {"error": str(exc)}
    run = RunConfig("score", args.seed, args.out, {"points": str(points), "weights": str(args.weights)},
                    options={"emit_grids": bool(args.emit_grids)})
    doc = {"config": run.to_dict(), **_model_section(model, digest), **rep.to_dict(),
           "oracle": oracle}
    _emit(out, "score.json", _dump_json(doc))
    if args.emit_grids:
        mri = prepare_input(model, pair)
        mid = (pair.side_a.centroid + pair.side_b.centroid) / 2
        gdir = out / "grids"
        gdir.mkdir(exist_ok=True)
        for tag, grid in (("coarse", mri.coarse), ("fine", mri.fine)):
            write_grid_csv(grid, gdir / f"{tag}.csv")
            for axis, name in enumerate("xyz"):
                idx = slice_through(grid, axis, float(mid[axis]))
                write_slice_csv(grid, axis, idx, gdir / f"{tag}_slice_{name}.csv")
    return 0


def cmd_sweep(args) -> int:
    out = _prepare_out_dir(args.out)
    model, digest = _load_model(args)
    steps = sweep_pairs(args.kind, args.steps, seed=args.seed)
    inputs = [prepare_input(model, p) for _, p in steps]
    probs = score_inputs(model, inputs)
    scores = np.atleast_1d(quality_score(probs))
    rows = [[v, *p, c] for (v, _), p, c in zip(steps, probs, scores)]
    _emit(out, f"sweep_{args.kind}.csv", _csv_text(("parameter", "P1", "P2", "P3", "C"), rows))
    if out is not None:
        run = RunConfig("sweep", args.seed, str(out), {"weights": str(args.weights)},
                        options={"kind": args.kind, "steps": len(steps)})
        _atomic_write(out / f"sweep_{args.kind}.json",
                      _dump_json({"config": run.to_dict(), **_model_section(model, digest)}))
    return 0


def cmd_detect(args) -> int:
    scene_path = _require_file(args.scene, "scene file")
    out = _prepare_out_dir(args.out)
    fraction = args.fraction
    if not fraction > 0:
        raise CliError(f"--fraction must be positive, got {fraction}")
    scene = Scene.from_file(scene_path)
    diag = body_diagonal(scene)
    cands = detect_candidates(scene, fraction)
    run = RunConfig("detect", args.seed, args.out, {"scene": str(scene_path)},
                    options={"fraction": fraction})
    doc = {"config": run.to_dict(), "surface_ids": scene.ids, "body_diagonal": diag,
           "tolerance": fraction * diag, "pairs": [c.to_dict(diag) for c in cands]}
    _emit(out, "pairs.json", _dump_json(doc))
    return 0


def cmd_eval(args) -> int:
    out = _prepare_out_dir(args.out)
    model, digest = _load_model(args)
    if args.table:
        cases = table_analog_set()
        probs = score_inputs(model, [prepare_input(model, c.pair) for c in cases])
        scores = np.atleast_1d(quality_score(probs))
        rows = []
        for c, p, s in zip(cases, probs, scores):
            lo, hi = c.label.band
            rows.append({"name": c.name, "category": c.category, "band": [lo, hi],
                         "P1": float(p[0]), "P2": float(p[1]), "P3": float(p[2]),
                         "score": float(s), "in_band": bool(lo <= s <= hi)})
        labels = np.array([c.label.class_label for c in cases])
        bands = np.array([c.label.band for c in cases])
        metrics = metrics_from_probabilities(probs, labels, bands)
        metrics["n_in_band"] = int(sum(r["in_band"] for r in rows))
        source, name = {"set": "table_analog"}, "eval_table.json"
    else:
        data = args.data or "data"
        ds = manifest_dataset(data, args.split, model.config, model.dtype)
        metrics = evaluate(model, ds)
        rows = None
        source, name = {"data": str(data), "split": args.split}, f"eval_{args.split}.json"
    run = RunConfig("eval", args.seed, args.out, {"weights": str(args.weights), **source})
    doc = {"config": run.to_dict(), **_model_section(model, digest), "metrics": metrics}
    if rows is not None:
        doc["rows"] = rows
    _emit(out, name, _dump_json(doc))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _env(name: str, conv, default):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    try:
        return conv(raw)
    except ValueError as exc:
        raise CliError(f"bad value for {ENV_PREFIX}{name.upper().replace('-', '_')}: {raw!r}") from exc


def _flag_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(raw)


def build_parser() -> argparse.ArgumentParser:
    d = NetConfig()
    t = TrainConfig()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=_env("seed", int, DEFAULT_SEED))
    common.add_argument("--out", default=_env("out", str, None),
                        help="output directory (reports go to stdout when omitted, where allowed)")
    common.add_argument("--weights", default=_env("weights", str, None))
    common.add_argument("--coarse-res", type=int, default=_env("coarse-res", int, None))
    common.add_argument("--fine-res", type=int, default=_env("fine-res", int, None))
    common.add_argument("--fraction", type=float, default=_env("fraction", float, DEFAULT_FRACTION))
    common.add_argument("--epochs", type=int, default=_env("epochs", int, t.epochs))
    common.add_argument("--lr", type=float, default=_env("lr", float, t.lr))
    common.add_argument("--batch", type=int, default=_env("batch", int, t.batch))
    common.add_argument("--head", choices=("softmax", "sigmoid"), default=_env("head", str, d.head))
    common.add_argument("--emit-grids", action="store_true",
                        default=_env("emit-grids", _flag_bool, False))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="contact-quality", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="build the synthetic dataset")
    g.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", parents=[common], help="train a network on a generated dataset")
    tr.add_argument("--data", default=_env("data", str, None), help="dataset directory")
    tr.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score one two-surface point file")
    s.add_argument("points")
    s.set_defaults(func=cmd_score)

    sw = sub.add_parser("sweep", parents=[common], help="score a parametric sweep")
    sw.add_argument("kind", choices=("translate", "rotate", "scale"))
    sw.add_argument("--steps", type=int, default=_env("steps", int, None))
    sw.set_defaults(func=cmd_sweep)

    dt = sub.add_parser("detect", parents=[common], help="find candidate contact pairs in a scene")
    dt.add_argument("scene")
    dt.set_defaults(func=cmd_detect)

    ev = sub.add_parser("eval", parents=[common], help="evaluate weights on a split or the table set")
    ev.add_argument("--data", default=_env("data", str, None))
    ev.add_argument("--split", choices=SPLITS, default=_env("split", str, "validation"))
    ev.add_argument("--table", action="store_true", default=_env("table", _flag_bool, False),
                    help="use the fixed 24-pair held-out table set")
    ev.set_defaults(func=cmd_eval)
    return p


def _fill_resolutions(args) -> None:
    # training-time commands need concrete resolutions; weight-based ones take them from the file
    if args.command in ("generate", "train"):
        d = NetConfig()
        args.coarse_res = d.coarse_res if args.coarse_res is None else args.coarse_res
        args.fine_res = d.fine_res if args.fine_res is None else args.fine_res


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except CliError as exc:
        print(f"contact-quality: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    _fill_resolutions(args)
    try:
        return args.func(args)
    except (CliError, ContactQualityError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"contact-quality: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
