"""``trace-forge`` command line.

Exit codes: 0 success, 1 usage error (bad flags, missing inputs), 2 runtime
failure. Diagnostics go to standard error; results go to files under the
output path or to standard output.

Every subcommand also accepts ``--config FILE`` holding ``key = value``
lines named like the long flags (``scenes = 20``, ``learning-rate = 1e-4``);
flags given on the command line override the file. The default seed is 42
unless the environment variable TRACE_FORGE_SEED sets another one.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, TraceForgeError

log = logging.getLogger("trace_forge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    env = os.environ.get("TRACE_FORGE_SEED")
    if env is None:
        return 42
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TRACE_FORGE_SEED must be an integer, got {env!r}") from None


def _common(p: argparse.ArgumentParser, seed: int) -> None:
    p.add_argument("--seed", type=int, default=seed, help="random seed (default: 42 or $TRACE_FORGE_SEED)")
    p.add_argument("--config", type=Path, default=None, help="key = value file; flags override it (default: none)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for parallel steps (default: 1)")


def build_parser(seed: int = 42) -> argparse.ArgumentParser:
    parser = _Parser(prog="trace-forge", description="Multi-view eyeglass frame tracing toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--scenes", type=int, default=100, help="number of two-eye scenes (default: 100)")
    g.add_argument("--out", type=Path, required=True, help="dataset directory to create")
    g.add_argument("--color", choices=("rgb", "gray"), default="rgb", help="image color mode (default: rgb)")
    g.add_argument("--crop-size", type=int, default=256, help="per-eye crop size in pixels (default: 256)")
    _common(g, seed)

    t = sub.add_parser("trace-geometric", help="trace from four rim masks without learning")
    t.add_argument("--masks", type=Path, required=True,
                   help="directory with mask_0.png..mask_3.png (and optional offsets.txt), "
                        "or with right/ and left/ subdirectories holding those")
    t.add_argument("--rig", type=Path, required=True, help="rig description file")
    t.add_argument("--out", type=Path, required=True, help="output directory for trace_<eye>.txt")
    t.add_argument("--eye", choices=("right", "left"), default="right",
                   help="eye of a single mask set (default: right)")
    t.add_argument("--center", choices=("boxing", "centroid"), default="boxing",
                   help="trace center definition (default: boxing)")
    _common(t, seed)

    tr = sub.add_parser("train", help="train one fusion model")
    tr.add_argument("--data", type=Path, required=True, help="dataset directory")
    tr.add_argument("--out", type=Path, required=True, help="checkpoint file to write (.tfck)")
    tr.add_argument("--modality", choices=("rgb_noseg", "gray_depth", "rgb_depth"), default="gray_depth",
                    help="input modality (default: gray_depth)")
    tr.add_argument("--fusion", choices=("early_max", "early_learned", "late_max", "late_learned"),
                    default="late_max", help="view fusion strategy (default: late_max)")
    tr.add_argument("--size", choices=("S", "M", "L"), default="S", help="model width (default: S)")
    tr.add_argument("--epochs", type=int, default=200, help="training epochs (default: 200)")
    tr.add_argument("--learning-rate", type=float, default=1e-4, help="Adam learning rate (default: 1e-4)")
    tr.add_argument("--batch-size", type=int, default=8, help="mini-batch size (default: 8)")
    tr.add_argument("--augment-copies", type=int, default=0,
                    help="augmented copies per training sample (default: 0)")
    tr.add_argument("--input-size", type=int, default=64, help="network input resolution (default: 64)")
    _common(tr, seed)

    e = sub.add_parser("evaluate", help="run an experiment grid and write a report")
    e.add_argument("--grid", type=Path, required=True, help="grid description file")
    e.add_argument("--out", type=Path, required=True, help="report directory")
    e.add_argument("--data", type=Path, default=None, help="dataset directory (default: 'data' key of the grid)")
    e.add_argument("--no-plots", action="store_true", help="skip the best/median/worst SVG plots")
    e.add_argument("--geometric", action="store_true", help="also compare against the geometric tracer")
    _common(e, seed)

    pl = sub.add_parser("plot", help="draw a predicted and a true trace as SVG")
    pl.add_argument("--truth", type=Path, required=True, help="ground-truth trace file")
    pl.add_argument("--pred", type=Path, default=None, help="predicted trace file (default: none)")
    pl.add_argument("--out", type=Path, required=True, help="SVG file to write")
    pl.add_argument("--title", default=None, help="plot title (default: none)")
    _common(pl, seed)

    v = sub.add_parser("validate", help="check every invariant of a generated dataset")
    v.add_argument("dataset", type=Path, help="dataset directory")
    _common(v, seed)
    return parser


def _read_config(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def parse_args(argv, seed: int) -> argparse.Namespace:
    parser = build_parser(seed)
    # find --config and the subcommand first: file values must become defaults
    # before required flags are checked
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path, default=None)
    known, rest = pre.parse_known_args(argv)
    subs = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in subs), None)
    if known.config is None or command is None:
        return parser.parse_args(argv)
    cfg = _read_config(known.config)
    sub = subs[command]
    actions = {a.dest: a for a in sub._actions}
    unknown = [k for k in cfg if k not in actions or k in ("config", "help")]
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    defaults = {}
    for k, raw in cfg.items():
        a = actions[k]
        try:
            if isinstance(a, argparse._StoreTrueAction):
                val = raw.lower() in ("1", "true", "yes")
            else:
                val = a.type(raw) if a.type is not None else raw
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {k}: {raw!r}") from None
        if a.choices is not None and val not in a.choices:
            raise UsageError(f"bad value for {k}: {raw!r}")
        defaults[k] = val
        a.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _need(path: Path, what: str, kind: str = "file") -> None:
    ok = path.is_file() if kind == "file" else path.is_dir()
    if not ok:
        raise UsageError(f"{what} not found: {path}")


# -- subcommands ------------------------------------------------------------
def cmd_generate(args) -> int:
    from .synthgen.dataset import build_dataset
    from .synthgen.render import RenderConfig

    if args.scenes < 10:
        raise UsageError("--scenes must be at least 10")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    m = build_dataset(args.out, args.scenes, args.seed, render_cfg=RenderConfig(crop_size=args.crop_size, color=args.color),
                      jobs=args.jobs)
    counts = {s: len(m.ids(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(m.entries)} samples to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def _mask_sets(root: Path, eye: str):
    subdirs = [e for e in ("right", "left") if (root / e).is_dir()]
    sets = [(e, root / e) for e in subdirs] if subdirs else [(eye, root)]
    for _, d in sets:
        for k in range(4):
            _need(d / f"mask_{k}.png", "mask image")
    return sets


def _angle_ranges(count) -> str:
    bad = np.flatnonzero(np.asarray(count) < 2)
    if bad.size == 0:
        return "none"
    step = 360.0 / len(count)
    runs, start = [], bad[0]
    for a, b in zip(bad[:-1], bad[1:]):
        if b != a + 1:
            runs.append((start, a))
            start = b
    runs.append((start, bad[-1]))
    return ", ".join(f"{s * step:.1f}-{e * step:.1f} deg" for s, e in runs)


def cmd_trace_geometric(args) -> int:
    from .geometry.baseline import geometric_trace
    from .geometry.rigfile import read_rig
    from .synthgen.dataset import read_masks
    from .trace import write_trace

    _need(args.masks, "mask directory", "dir")
    _need(args.rig, "rig file")
    sets = _mask_sets(args.masks, args.eye)
    rig = read_rig(args.rig)
    args.out.mkdir(parents=True, exist_ok=True)
    for eye, d in sets:
        masks, offsets = read_masks(d)
        try:
            tr = geometric_trace(masks, rig, offsets=offsets, eye=eye, center_mode=args.center)
        except DegenerateGeometry as exc:
            count = getattr(exc, "views_per_angle", None)
            detail = f"; angles seen by fewer than 2 views: {_angle_ranges(count)}" if count is not None else ""
            raise TraceForgeError(f"{eye}: degenerate geometry: {exc}{detail}") from None
        occluded = int(np.count_nonzero(tr.flags))
        if occluded:
            print(f"{eye}: {occluded} of {tr.radii_mm.size} angles seen by fewer than 2 views "
                  f"({_angle_ranges(tr.meta['views_per_angle'])}), filled by interpolation", file=sys.stderr)
        path = args.out / f"trace_{eye}.txt"
        write_trace(tr, path)
        print(path)
    return 0


def cmd_train(args) -> int:
    from .fusionnet.checkpoint import save_checkpoint
    from .fusionnet.model import build_model
    from .fusionnet.train import TrainConfig, train
    from .synthgen.dataset import Dataset

    _need(args.data / "manifest.txt", "dataset manifest")
    if args.out.parent and not args.out.parent.exists():
        args.out.parent.mkdir(parents=True, exist_ok=True)
    try:
        cfg = TrainConfig(args.batch_size, args.learning_rate, epochs=args.epochs, seed=args.seed,
                          augment_copies=args.augment_copies)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = Dataset(args.data)
    model = build_model(args.modality, args.fusion, args.size, args.input_size, seed=args.seed)

    def progress(epoch, hist):
        val = f" val {hist.val_mean_mm[-1]:.4f} mm" if hist.val_mean_mm else ""
        log.info("epoch %d loss %.5f train %.4f mm%s", epoch, hist.train_loss[-1], hist.train_mean_mm[-1], val)

    model, hist = train(model, ds.split("train"), ds.split("val"), cfg, progress)
    save_checkpoint(model, args.out)
    best = hist.val_mean_mm[hist.best_epoch] if hist.val_mean_mm else float("nan")
    print(f"wrote {args.out} (best epoch {hist.best_epoch}, val mean {best:.4f} mm)")
    return 0


def cmd_evaluate(args) -> int:
    from .evalharness.harness import compare_to_geometric, read_grid, run_grid, select_cases
    from .evalharness.plot import plot_trace
    from .evalharness.report import format_table, write_report
    from .fusionnet.checkpoint import load_checkpoint
    from .fusionnet.train import predict_trace
    from .synthgen.dataset import Dataset

    _need(args.grid, "grid file")
    overrides = {"data": str(args.data) if args.data is not None else None}
    grid = read_grid(args.grid, overrides)
    if "seeds" not in args.grid.read_text(encoding="utf-8"):
        grid = type(grid)(grid.modalities, grid.sizes, grid.fusions, (args.seed,), grid.data, grid.train,
                          grid.input_size)
    if not grid.data:
        raise UsageError("no dataset: pass --data or set 'data' in the grid file")
    _need(Path(grid.data) / "manifest.txt", "dataset manifest")
    ds = Dataset(grid.data)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    report = run_grid(grid, ds, out / "checkpoints",
                      progress=lambda c: log.info("cell %s: %s", c.key, c.aggregates.get("mean_mm", c.error)))
    write_report(report, out / "report.json")
    (out / "table.tsv").write_text(format_table(report), encoding="utf-8")
    if report.ranking and not args.no_plots and len(report.test_ids) < 3:
        print(f"only {len(report.test_ids)} test samples: skipping case plots", file=sys.stderr)
    elif report.ranking and not args.no_plots:
        top = report.ranking[0]
        c = report.cell(top)
        model = load_checkpoint(out / "checkpoints" / f"{c.modality}_{c.size}_{c.fusion}_seed{c.seed}.tfck")
        for role, sid in select_cases(report, top).items():
            s = ds.load(sid)
            plot_trace(predict_trace(model, s), s.truth, out / f"case_{role}.svg", f"{role}: {sid}")
    if args.geometric:
        cmp_ = compare_to_geometric(report, ds)
        (out / "geometric.tsv").write_text(cmp_.format(), encoding="utf-8")
    sys.stdout.write(format_table(report))
    return 0 if any(c.ok for c in report.cells) else 2


def cmd_plot(args) -> int:
    from .evalharness.plot import plot_trace
    from .trace import read_trace

    _need(args.truth, "truth trace")
    if args.pred is not None:
        _need(args.pred, "predicted trace")
    truth = read_trace(args.truth)
    pred = read_trace(args.pred) if args.pred is not None else None
    if args.out.parent and not args.out.parent.exists():
        args.out.parent.mkdir(parents=True, exist_ok=True)
    plot_trace(pred, truth, args.out, args.title)
    print(args.out)
    return 0


def cmd_validate(args) -> int:
    from .synthgen.dataset import validate_dataset

    _need(args.dataset / "manifest.txt", "dataset manifest")
    problems = validate_dataset(args.dataset)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return 2
    print(f"{args.dataset}: ok")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "trace-geometric": cmd_trace_geometric,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv, _default_seed())
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"trace-forge: error: {exc}", file=sys.stderr)
        return 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"trace-forge {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (TraceForgeError, OSError) as exc:
        print(f"trace-forge {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
