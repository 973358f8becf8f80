"""Seeded on-disk datasets of per-eye samples.

Layout of a dataset directory::

    manifest.txt          header lines "key = value", then one tab-separated
                          row per sample: id, split, eye, scene, sample file,
                          trace file, contour family
    rig.txt               camera rig (geometry rig file format)
    samples/<id>.bin      sample container
    traces/<id>.txt       ground-truth trace

Splits are assigned per scene so both eyes of a face land in the same split.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import IoError, ParseError, TraceForgeError
from ..geometry.camera import CameraRig, default_rig
from ..geometry.rigfile import read_rig, write_rig
from ..trace import N_POINTS, read_trace, write_trace
from .render import RenderConfig
from .sample import MultiViewSample, read_sample, write_sample
from .scene import SceneConfig, generate_scene_samples

DATASET_FORMAT = "trace-forge-dataset 1"
SPLITS = ("train", "val", "test")
_COLUMNS = ("id", "split", "eye", "scene", "sample", "trace", "family")


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    split: str
    eye: str
    scene: int
    sample_path: str
    trace_path: str
    family: str


@dataclass(frozen=True)
class Manifest:
    header: dict
    entries: tuple

    def ids(self, split: str | None = None) -> list[str]:
        return [e.sample_id for e in self.entries if split is None or e.split == split]

    def entry(self, sample_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.sample_id == sample_id:
                return e
        raise KeyError(sample_id)

    @property
    def split_hash(self) -> str:
        return split_hash((e.sample_id, e.split) for e in self.entries)


def split_hash(pairs) -> str:
    h = hashlib.sha256()
    for sid, split in sorted(pairs):
        h.update(f"{sid}\t{split}\n".encode("utf-8"))
    return h.hexdigest()


def scene_splits(n_scenes: int, seed: int, fractions=(0.8, 0.1, 0.1)) -> list[str]:
    """Split label of each scene; counts are rounded fractions, test takes the rest."""
    n_train = int(round(fractions[0] * n_scenes))
    n_val = int(round(fractions[1] * n_scenes))
    if n_train + n_val > n_scenes:
        raise ValueError("split fractions exceed the scene count")
    order = np.random.default_rng([seed, 0x5EED]).permutation(n_scenes)
    labels = [""] * n_scenes
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return labels


def format_manifest(manifest: Manifest) -> str:
    lines = [f"{k} = {v}" for k, v in manifest.header.items()]
    lines.append("\t".join(_COLUMNS))
    for e in manifest.entries:
        lines.append("\t".join([e.sample_id, e.split, e.eye, str(e.scene), e.sample_path, e.trace_path, e.family]))
    return "\n".join(lines) + "\n"


def parse_manifest(text: str, path=None) -> Manifest:
    header: dict = {}
    entries = []
    in_rows = False
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        if not in_rows:
            if line == "\t".join(_COLUMNS):
                in_rows = True
                continue
            if " = " not in line:
                raise ParseError(f"bad manifest header line {line!r}", lineno, path)
            k, v = line.split(" = ", 1)
            header[k] = v
            continue
        cols = line.split("\t")
        if len(cols) != len(_COLUMNS):
            raise ParseError(f"expected {len(_COLUMNS)} columns, got {len(cols)}", lineno, path)
        if cols[1] not in SPLITS:
            raise ParseError(f"unknown split {cols[1]!r}", lineno, path)
        try:
            scene = int(cols[3])
        except ValueError:
            raise ParseError(f"bad scene index {cols[3]!r}", lineno, path) from None
        entries.append(ManifestEntry(cols[0], cols[1], cols[2], scene, cols[4], cols[5], cols[6]))
    if header.get("format") != DATASET_FORMAT:
        raise ParseError(f"not a {DATASET_FORMAT} manifest", None, path)
    return Manifest(header, tuple(entries))


def _scene_job(args):
    seed, index, rig, scene_cfg, render_cfg = args
    return generate_scene_samples(seed, index, rig, scene_cfg, render_cfg)


def build_dataset(
    out_dir,
    n_scenes: int,
    seed: int,
    rig: CameraRig | None = None,
    scene_cfg: SceneConfig = SceneConfig(),
    render_cfg: RenderConfig = RenderConfig(),
    fractions=(0.8, 0.1, 0.1),
    jobs: int = 1,
) -> Manifest:
    """Generate ``n_scenes`` two-eye scenes (2 samples each) under ``out_dir``.

    The output is a pure function of the arguments except ``jobs``.
    """
    if n_scenes < 10:
        raise ValueError("a dataset needs at least 10 scenes")
    rig = rig or default_rig()
    root = Path(out_dir)
    try:
        (root / "samples").mkdir(parents=True, exist_ok=True)
        (root / "traces").mkdir(parents=True, exist_ok=True)
        write_rig(rig, root / "rig.txt")
    except OSError as exc:
        raise IoError(f"cannot create dataset directory {root}: {exc}") from exc
    splits = scene_splits(n_scenes, seed, fractions)
    tasks = [(seed, i, rig, scene_cfg, render_cfg) for i in range(n_scenes)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_scene_job, tasks)
            entries = _write_all(root, results, splits)
    else:
        entries = _write_all(root, map(_scene_job, tasks), splits)
    mm_per_px = rig.working_distance_mm / float(np.mean([c.focal_length_px for c in rig.cameras]))
    header = {
        "format": DATASET_FORMAT,
        "seed": str(seed),
        "n_scenes": str(n_scenes),
        "n_samples": str(len(entries)),
        "n_points": str(N_POINTS),
        "crop_size": str(render_cfg.crop_size),
        "color": render_cfg.color,
        "mm_per_px": repr(mm_per_px),
        "rig": "rig.txt",
    }
    manifest = Manifest(header, tuple(entries))
    header["split_hash"] = manifest.split_hash
    try:
        (root / "manifest.txt").write_bytes(format_manifest(manifest).encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return manifest


def _write_all(root: Path, results, splits) -> list[ManifestEntry]:
    entries = []
    for index, pair in enumerate(results):
        for smp in sorted(pair, key=lambda s: s.eye != "right"):
            sp = f"samples/{smp.sample_id}.bin"
            tp = f"traces/{smp.sample_id}.txt"
            write_sample(smp, root / sp)
            write_trace(smp.truth, root / tp)
            entries.append(
                ManifestEntry(smp.sample_id, splits[index], smp.eye, index, sp, tp, smp.meta.get("family", ""))
            )
    return entries


class Dataset:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / "manifest.txt"
        try:
            text = mpath.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read manifest {mpath}: {exc}") from exc
        self.manifest = parse_manifest(text, mpath)
        self.rig = read_rig(self.root / self.manifest.header.get("rig", "rig.txt"))

    def ids(self, split: str | None = None) -> list[str]:
        return self.manifest.ids(split)

    def load(self, sample_id: str) -> MultiViewSample:
        e = self.manifest.entry(sample_id)
        truth = read_trace(self.root / e.trace_path)
        smp = read_sample(self.root / e.sample_path, truth)
        smp.meta.update({"family": e.family, "split": e.split, "scene": e.scene})
        return smp

    def split(self, split: str) -> list[MultiViewSample]:
        return [self.load(i) for i in self.ids(split)]

    def __len__(self) -> int:
        return len(self.manifest.entries)


def validate_dataset(root) -> list[str]:
    """Check every invariant a dataset must satisfy; returns the problems found."""
    problems: list[str] = []
    try:
        ds = Dataset(root)
    except TraceForgeError as exc:
        return [str(exc)]
    ids = ds.ids()
    if len(set(ids)) != len(ids):
        problems.append("duplicate sample ids")
    by_split = {s: set(ds.ids(s)) for s in SPLITS}
    if by_split["train"] & by_split["test"] or by_split["train"] & by_split["val"] or by_split["val"] & by_split["test"]:
        problems.append("a sample id appears in more than one split")
    scenes: dict = {}
    for e in ds.manifest.entries:
        scenes.setdefault(e.scene, set()).add(e.split)
    if any(len(s) > 1 for s in scenes.values()):
        problems.append("the two eyes of a scene fall in different splits")
    if ds.manifest.header.get("split_hash") not in (None, ds.manifest.split_hash):
        problems.append("split hash does not match the manifest rows")
    if ds.manifest.header.get("n_samples") not in (None, str(len(ids))):
        problems.append("sample count does not match the header")
    for sid in ids:
        try:
            smp = ds.load(sid)
        except TraceForgeError as exc:
            problems.append(f"{sid}: {exc}")
            continue
        if smp.sample_id != sid:
            problems.append(f"{sid}: container holds id {smp.sample_id}")
        if smp.eye != smp.truth.eye:
            problems.append(f"{sid}: eye differs between container and trace")
        for k, v in enumerate(smp.views):
            if not v.mask.any():
                problems.append(f"{sid}: view {k} has an empty mask")
                continue
            if not v.mask.all() and v.depth[v.mask].min() <= v.depth[~v.mask].max():
                problems.append(f"{sid}: view {k} breaks the depth convention")
            if ndimage.label(v.mask)[1] != 1:
                problems.append(f"{sid}: view {k} mask is not one connected region")
    return problems


def export_masks(sample: MultiViewSample, out_dir) -> None:
    """Write ``mask_0.png`` .. ``mask_3.png`` and ``offsets.txt`` for one sample."""
    from PIL import Image

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for k, v in enumerate(sample.views):
            Image.fromarray(v.mask.astype(np.uint8) * 255).save(out / f"mask_{k}.png")
        (out / "offsets.txt").write_text(
            "".join(f"{int(x)} {int(y)}\n" for x, y in sample.offsets), encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write masks to {out}: {exc}") from exc


def read_masks(in_dir):
    """Inverse of :func:`export_masks`; offsets default to zero when absent."""
    from PIL import Image

    src = Path(in_dir)
    masks = []
    for k in range(4):
        p = src / f"mask_{k}.png"
        try:
            with Image.open(p) as im:
                masks.append(np.asarray(im.convert("L")) > 127)
        except OSError as exc:
            raise IoError(f"cannot read mask {p}: {exc}") from exc
    offsets = np.zeros((4, 2), dtype=np.int64)
    op = src / "offsets.txt"
    if op.exists():
        rows = [ln.split() for ln in op.read_text(encoding="utf-8").splitlines() if ln.strip()]
        if len(rows) != 4 or any(len(r) != 2 for r in rows):
            raise ParseError("offsets.txt needs 4 lines of 'x0 y0'", None, op)
        try:
            offsets = np.array([[int(a), int(b)] for a, b in rows], dtype=np.int64)
        except ValueError:
            raise ParseError("offsets must be integers", None, op) from None
    return masks, offsets


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))
