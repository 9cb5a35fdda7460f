"""Signature image ingestion, catalogs, splits, and evaluation pairing.

Directory conventions understood by `index_dataset`:

* ``cedar``: ``<root>/full_org/original_W_N.png`` holds writer W's genuine
  signatures and ``<root>/full_forg/forgeries_W_N.png`` the forgeries
  targeting writer W.
* ``sigcomp-dutch``: ``<root>/{train,test}/<writer>/{genuine,forged}/*.png``.
  When a fold instead holds the competition's native flat naming
  (``NFI-AAABBCCC.*``: author AAA signing as writer CCC), files are
  adapted in place: the image belongs to writer CCC and is genuine when
  AAA equals CCC. Writer ids are prefixed with their fold so train and
  test identities can never collide.

Every ingested image is converted to grayscale (luma 0.299 R + 0.587 G +
0.114 B), bilinearly resized to 300x180, and scaled to [0, 1]. A
synthetic generator of procedural stroke "signatures" is included for
desk-scale runs of the full pipeline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

__all__ = [
    "TARGET_HEIGHT",
    "TARGET_WIDTH",
    "SignatureImage",
    "WriterImages",
    "SignatureCatalog",
    "EvalPair",
    "IngestError",
    "load_image",
    "bilinear_resize",
    "index_dataset",
    "writer_disjoint_split",
    "generate_eval_pairs",
    "synthesize_dataset",
    "write_dataset_tree",
    "write_manifest",
]

TARGET_HEIGHT = 180
TARGET_WIDTH = 300

GENUINE = "genuine"
FORGED = "forged"

_NFI_PATTERN = re.compile(r"^NFI-(\d{3})(\d{2})(\d{3})$", re.IGNORECASE)
_RASTER_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class IngestError(ValueError):
    """A file or directory could not be ingested."""


class SignatureImage:
    """One signature: 180x300 grayscale pixels in [0, 1], lazily loaded."""

    __slots__ = ("writer_id", "label", "source_path", "_pixels")

    def __init__(self, writer_id: str, label: str, source_path: str, pixels: np.ndarray | None = None):
        if label not in (GENUINE, FORGED):
            raise ValueError(f"label must be 'genuine' or 'forged', got {label!r}")
        self.writer_id = writer_id
        self.label = label
        self.source_path = source_path
        if pixels is not None:
            pixels = np.asarray(pixels, dtype=np.float32)
            _check_pixels(pixels)
        self._pixels = pixels

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is None:
            self._pixels = load_image(self.source_path)
        return self._pixels

    def __repr__(self) -> str:
        return f"SignatureImage({self.writer_id!r}, {self.label!r}, {self.source_path!r})"


def _check_pixels(pixels: np.ndarray) -> None:
    if pixels.shape != (TARGET_HEIGHT, TARGET_WIDTH):
        raise IngestError(f"pixels must be {TARGET_HEIGHT}x{TARGET_WIDTH}, got {pixels.shape}")
    if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
        raise IngestError("pixel values must be finite and within [0, 1]")


@dataclass
class WriterImages:
    genuine: list[SignatureImage] = field(default_factory=list)
    forged: list[SignatureImage] = field(default_factory=list)


@dataclass
class SignatureCatalog:
    """Writer-indexed inventory with a train/test writer assignment."""

    writers: dict[str, WriterImages]
    split: dict[str, str]
    provenance: str
    skipped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for wid in self.writers:
            self.split.setdefault(wid, "train")
        extra = set(self.split) - set(self.writers)
        if extra:
            raise ValueError(f"split assigns unknown writers: {sorted(extra)}")

    def writer_ids(self, split: str | None = None) -> list[str]:
        ids = sorted(self.writers)
        if split is None:
            return ids
        return [w for w in ids if self.split[w] == split]

    def images(self, split: str | None = None) -> list[SignatureImage]:
        out: list[SignatureImage] = []
        for wid in self.writer_ids(split):
            entry = self.writers[wid]
            out.extend(entry.genuine)
            out.extend(entry.forged)
        return out

    def counts(self) -> dict[str, int]:
        g = sum(len(e.genuine) for e in self.writers.values())
        f = sum(len(e.forged) for e in self.writers.values())
        return {"writers": len(self.writers), "genuine": g, "forged": f}


@dataclass(frozen=True)
class EvalPair:
    """A scored comparison: a genuine reference against a probe."""

    first: SignatureImage
    second: SignatureImage
    label: str  # "genuine-pair" | "forgery-pair"

    def __post_init__(self):
        if self.label == "genuine-pair":
            ok = (
                self.first.writer_id == self.second.writer_id
                and self.first.label == GENUINE
                and self.second.label == GENUINE
                and self.first is not self.second
            )
        elif self.label == "forgery-pair":
            ok = (
                self.first.label == GENUINE
                and self.second.label == FORGED
                and self.first.writer_id == self.second.writer_id
            )
        else:
            ok = False
        if not ok:
            raise ValueError(f"invalid {self.label} pairing")


# -- ingestion --


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear interpolation with half-pixel sample centers, edge-clamped."""
    in_h, in_w = img.shape
    y = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    x = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def load_image(path) -> np.ndarray:
    """Decode, grayscale, resize to 300x180, and scale to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                gray = np.asarray(im, dtype=np.float64)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    except FileNotFoundError:
        raise IngestError(f"image file not found: {path}") from None
    except Exception as exc:
        raise IngestError(f"cannot decode image {path}: {exc}") from exc
    if gray.ndim != 2 or gray.size == 0:
        raise IngestError(f"zero-extent or non-raster image: {path}")
    resized = bilinear_resize(gray, TARGET_HEIGHT, TARGET_WIDTH) / 255.0
    pixels = np.clip(resized, 0.0, 1.0).astype(np.float32)
    _check_pixels(pixels)
    return pixels


def _is_raster(path: Path) -> bool:
    return path.suffix.lower() in _RASTER_SUFFIXES


def _index_cedar(root: Path, catalog: dict[str, WriterImages], skipped: list[str]) -> None:
    patterns = {
        "full_org": (re.compile(r"^original_(\d+)_\d+$"), GENUINE),
        "full_forg": (re.compile(r"^forgeries_(\d+)_\d+$"), FORGED),
    }
    for sub, (pattern, label) in patterns.items():
        folder = root / sub
        if not folder.is_dir():
            raise IngestError(f"cedar layout requires directory {folder}")
        for path in sorted(folder.iterdir()):
            if not path.is_file() or not _is_raster(path):
                continue
            m = pattern.match(path.stem)
            if not m:
                skipped.append(str(path))
                continue
            wid = m.group(1)
            entry = catalog.setdefault(wid, WriterImages())
            (entry.genuine if label == GENUINE else entry.forged).append(
                SignatureImage(wid, label, str(path))
            )


def _index_sigcomp_fold(fold_dir: Path, fold: str, catalog: dict[str, WriterImages], split: dict[str, str], skipped: list[str]) -> None:
    writer_dirs = [
        d for d in sorted(fold_dir.iterdir())
        if d.is_dir() and ((d / GENUINE).is_dir() or (d / FORGED).is_dir())
    ]
    if writer_dirs:
        for wdir in writer_dirs:
            wid = f"{fold}/{wdir.name}"
            entry = catalog.setdefault(wid, WriterImages())
            split[wid] = fold
            for label in (GENUINE, FORGED):
                sub = wdir / label
                if not sub.is_dir():
                    continue
                for path in sorted(sub.iterdir()):
                    if path.is_file() and _is_raster(path):
                        (entry.genuine if label == GENUINE else entry.forged).append(
                            SignatureImage(wid, label, str(path))
                        )
        return
    # competition-native flat naming, searched recursively
    for path in sorted(fold_dir.rglob("*")):
        if not path.is_file() or not _is_raster(path):
            continue
        m = _NFI_PATTERN.match(path.stem)
        if not m:
            skipped.append(str(path))
            continue
        author, _, target = m.groups()
        wid = f"{fold}/{target}"
        label = GENUINE if author == target else FORGED
        entry = catalog.setdefault(wid, WriterImages())
        split[wid] = fold
        (entry.genuine if label == GENUINE else entry.forged).append(
            SignatureImage(wid, label, str(path))
        )


def index_dataset(root, layout: str) -> SignatureCatalog:
    """Build a catalog from a dataset tree; see module docstring for layouts."""
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root does not exist: {root}")
    writers: dict[str, WriterImages] = {}
    split: dict[str, str] = {}
    skipped: list[str] = []
    warnings: list[str] = []

    if layout == "cedar":
        _index_cedar(root, writers, skipped)
        if len(writers) != 55:
            warnings.append(f"cedar: expected 55 writers, found {len(writers)}")
        for wid, entry in sorted(writers.items()):
            if len(entry.genuine) != 24 or len(entry.forged) != 24:
                warnings.append(
                    f"cedar: writer {wid} has {len(entry.genuine)} genuine / "
                    f"{len(entry.forged)} forged, expected 24 / 24"
                )
    elif layout == "sigcomp-dutch":
        for fold in ("train", "test"):
            fold_dir = root / fold
            if fold_dir.is_dir():
                _index_sigcomp_fold(fold_dir, fold, writers, split, skipped)
        for wid, entry in sorted(writers.items()):
            if split.get(wid) == "train" and (len(entry.genuine) < 24 or len(entry.forged) < 8):
                warnings.append(
                    f"sigcomp-dutch: train writer {wid} has {len(entry.genuine)} genuine / "
                    f"{len(entry.forged)} forged, expected >= 24 / >= 8"
                )
    else:
        raise ValueError(f"unknown layout {layout!r}; expected 'cedar' or 'sigcomp-dutch'")

    if not any(e.genuine or e.forged for e in writers.values()):
        raise IngestError(f"no signature images found under {root} for layout {layout!r}")
    return SignatureCatalog(
        writers=writers, split=split, provenance=layout, skipped=skipped, warnings=warnings
    )


def writer_disjoint_split(catalog: SignatureCatalog, train_writers: int, seed: int) -> SignatureCatalog:
    """Assign writers to train/test uniformly at random (seeded).

    sigcomp-dutch catalogs keep the dataset's own fold assignment; every
    other provenance gets a fresh, writer-disjoint resampling.
    """
    if catalog.provenance == "sigcomp-dutch":
        return catalog
    ids = sorted(catalog.writers)
    if train_writers >= len(ids):
        raise ValueError(
            f"train_writers={train_writers} must be smaller than the "
            f"{len(ids)} writers available"
        )
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(ids), size=train_writers, replace=False).tolist())
    split = {wid: ("train" if i in chosen else "test") for i, wid in enumerate(ids)}
    return SignatureCatalog(
        writers=catalog.writers,
        split=split,
        provenance=catalog.provenance,
        skipped=list(catalog.skipped),
        warnings=list(catalog.warnings),
    )


def generate_eval_pairs(
    catalog: SignatureCatalog,
    per_writer_cap: int | None = None,
    seed: int = 0,
    split: str = "test",
) -> list[EvalPair]:
    """All genuine-genuine and genuine-forgery pairs per writer in a split.

    With a cap, each writer's pair lists are deterministically subsampled
    to at most `per_writer_cap` pairs per type.
    """
    writer_ids = catalog.writer_ids(split)
    if not writer_ids:
        raise ValueError(f"catalog has no writers in split {split!r}")
    rng = np.random.default_rng(seed)
    pairs: list[EvalPair] = []
    for wid in writer_ids:
        entry = catalog.writers[wid]
        genuine = entry.genuine
        genuine_pairs = [
            EvalPair(genuine[i], genuine[j], "genuine-pair")
            for i in range(len(genuine))
            for j in range(i + 1, len(genuine))
        ]
        forgery_pairs = [
            EvalPair(g, f, "forgery-pair") for g in genuine for f in entry.forged
        ]
        for group in (genuine_pairs, forgery_pairs):
            if per_writer_cap is not None and len(group) > per_writer_cap:
                keep = rng.choice(len(group), size=per_writer_cap, replace=False)
                group = [group[i] for i in sorted(keep.tolist())]
            pairs.extend(group)
    return pairs


# -- synthetic signatures --


def _catmull_rom(points: np.ndarray, samples_per_segment: int = 24) -> np.ndarray:
    """Smooth curve through the given anchor points."""
    pts = np.vstack([points[0], points, points[-1]])
    out = []
    for i in range(len(points) - 1):
        p0, p1, p2, p3 = pts[i], pts[i + 1], pts[i + 2], pts[i + 3]
        t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
        out.append(
            0.5
            * (
                2 * p1
                + (p2 - p0) * t
                + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2
                + (3 * p1 - p0 - 3 * p2 + p3) * t**3
            )
        )
    out.append(points[-1][None, :])
    return np.vstack(out)


def _writer_latent(rng: np.random.Generator) -> list[dict]:
    """A writer's signing pattern: a few strokes sweeping left to right."""
    strokes = []
    for _ in range(int(rng.integers(3, 6))):
        n = int(rng.integers(4, 7))
        xs = np.sort(rng.uniform(25, TARGET_WIDTH - 25, size=n))
        ys = rng.uniform(35, TARGET_HEIGHT - 35, size=n)
        strokes.append(
            {
                "anchors": np.column_stack([xs, ys]),
                "width": int(rng.integers(2, 5)),
            }
        )
    return strokes


def _render(latent: list[dict], rng: np.random.Generator, jitter: float, max_shift: int, width_delta: int, elastic_amp: float) -> np.ndarray:
    canvas = Image.new("L", (TARGET_WIDTH, TARGET_HEIGHT), 255)
    draw = ImageDraw.Draw(canvas)
    dx = int(rng.integers(-max_shift, max_shift + 1))
    dy = int(rng.integers(-max_shift, max_shift + 1))
    for stroke in latent:
        anchors = stroke["anchors"] + rng.normal(0.0, jitter, size=stroke["anchors"].shape)
        curve = _catmull_rom(anchors)
        if elastic_amp > 0:
            t = np.linspace(0, 2 * np.pi, len(curve))
            fx, fy = rng.uniform(0.5, 1.5, size=2)
            px, py = rng.uniform(0, 2 * np.pi, size=2)
            curve = curve + elastic_amp * np.column_stack(
                [np.sin(fx * t + px), np.sin(fy * t + py)]
            )
        curve = curve + np.array([dx, dy], dtype=np.float64)
        width = max(1, stroke["width"] + width_delta)
        draw.line([tuple(p) for p in curve.tolist()], fill=0, width=width, joint="curve")
    smoothed = canvas.filter(ImageFilter.GaussianBlur(radius=0.8))
    return (np.asarray(smoothed, dtype=np.float32) / 255.0).clip(0.0, 1.0)


def synthesize_dataset(writers: int, genuine_per_writer: int, forged_per_writer: int, seed: int) -> SignatureCatalog:
    """Procedural stroke signatures for desk-scale experiments.

    Each writer owns a distinct latent stroke pattern. Genuine samples
    re-render it with small jitter (translation <= 3 px, stroke width
    +/- 1, mild elastic wobble); forgeries render a different latent from
    the same family, imitating the idea of a skilled fake. Fully
    deterministic for a given seed.
    """
    if writers < 1 or genuine_per_writer < 1 or forged_per_writer < 1:
        raise ValueError("writers and per-writer counts must all be >= 1")
    catalog: dict[str, WriterImages] = {}
    for widx in range(writers):
        wid = f"w{widx:03d}"
        latent = _writer_latent(np.random.default_rng([seed, widx, 0]))
        n_forger_styles = max(1, forged_per_writer // 4)
        forger_latents = [
            _writer_latent(np.random.default_rng([seed, widx, 1, s]))
            for s in range(n_forger_styles)
        ]
        entry = WriterImages()
        for k in range(genuine_per_writer):
            rng = np.random.default_rng([seed, widx, 2, k])
            width_delta = int(rng.integers(-1, 2))
            pixels = _render(latent, rng, jitter=1.2, max_shift=3, width_delta=width_delta, elastic_amp=1.2)
            entry.genuine.append(
                SignatureImage(wid, GENUINE, f"synthetic://{wid}/genuine/{k:02d}", pixels)
            )
        for k in range(forged_per_writer):
            rng = np.random.default_rng([seed, widx, 3, k])
            style = forger_latents[k % n_forger_styles]
            width_delta = int(rng.integers(-1, 2))
            pixels = _render(style, rng, jitter=1.2, max_shift=3, width_delta=width_delta, elastic_amp=1.2)
            entry.forged.append(
                SignatureImage(wid, FORGED, f"synthetic://{wid}/forged/{k:02d}", pixels)
            )
        catalog[wid] = entry
    return SignatureCatalog(writers=catalog, split={}, provenance="synthetic")


# -- persistence --


def write_manifest(catalog: SignatureCatalog, path) -> None:
    """Line-delimited audit record: path, writer, label, split."""
    with open(path, "w", encoding="utf-8") as fh:
        for wid in catalog.writer_ids():
            entry = catalog.writers[wid]
            for img in (*entry.genuine, *entry.forged):
                fh.write(f"{img.source_path}\t{wid}\t{img.label}\t{catalog.split[wid]}\n")


def write_dataset_tree(catalog: SignatureCatalog, root) -> None:
    """Materialize a catalog as a sigcomp-dutch style PNG tree plus manifest."""
    root = Path(root)
    relocated: dict[str, WriterImages] = {}
    for wid in catalog.writer_ids():
        fold = catalog.split[wid]
        entry = catalog.writers[wid]
        new_entry = WriterImages()
        for label, images, bucket in (
            (GENUINE, entry.genuine, new_entry.genuine),
            (FORGED, entry.forged, new_entry.forged),
        ):
            folder = root / fold / wid / label
            folder.mkdir(parents=True, exist_ok=True)
            for k, img in enumerate(images):
                out = folder / f"{label[0]}{k:03d}.png"
                arr = np.round(img.pixels * 255.0).astype(np.uint8)
                Image.fromarray(arr, mode="L").save(out)
                bucket.append(SignatureImage(wid, label, str(out), img.pixels))
        relocated[wid] = new_entry
    on_disk = SignatureCatalog(
        writers=relocated, split=dict(catalog.split), provenance=catalog.provenance
    )
    write_manifest(on_disk, root / "manifest.txt")
