"""Datasets: a synthetic structured-scene generator and a PPM/PGM directory reader.

In the synthetic scenes every class is a pair of motifs placed in two of the
regions that the seven-crop anchors cut out (corners and centre). Classes come
in *confusable pairs*: same motifs, different arrangement, so the global pixel
statistics of the two classes are identical and only spatial structure tells
them apart.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

MOTIFS = ("square", "hstripe", "vstripe", "blob")

# region name -> centre as a fraction of the frame
REGIONS = {
    "tl": (0.25, 0.25), "tr": (0.75, 0.25), "bl": (0.25, 0.75), "br": (0.75, 0.75), "c": (0.5, 0.5),
}

# (motif, region) pairs; consecutive classes share the motif multiset
DEFAULT_LAYOUTS = (
    (("square", "tl"), ("blob", "br")),
    (("blob", "tl"), ("square", "br")),
    (("hstripe", "tr"), ("vstripe", "bl")),
    (("vstripe", "tr"), ("hstripe", "bl")),
    (("square", "tr"), ("square", "bl")),
    (("square", "tl"), ("square", "br")),
    (("hstripe", "c"), ("blob", "tr")),
    (("blob", "c"), ("hstripe", "tr")),
)

_COLORS = {
    "square": np.array([0.55, 0.45, 0.30]),
    "hstripe": np.array([0.30, 0.55, 0.40]),
    "vstripe": np.array([0.40, 0.30, 0.55]),
    "blob": np.array([0.50, 0.50, 0.50]),
}

BACKGROUND = 0.25


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: list[str]
    confusable_pairs: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(self.images[idx], self.labels[idx], list(self.class_names),
                          list(self.confusable_pairs))


@dataclass(frozen=True)
class SceneSpec:
    num_classes: int = 8
    image_size: int = 64
    motif_size: int = 12
    noise_std: float = 0.0
    jitter: int = 0
    seed: int = 0
    layouts: tuple = DEFAULT_LAYOUTS

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(self.layouts):
            raise ConfigError(f"num_classes must be in [2, {len(self.layouts)}], got {self.num_classes}")
        if self.motif_size < 3 or self.motif_size + 2 * self.jitter > self.image_size // 2:
            raise ConfigError(
                f"motif size {self.motif_size} with jitter {self.jitter} does not fit a "
                f"{self.image_size // 2}-pixel region of a {self.image_size}-pixel frame"
            )
        for layout in self.layouts[: self.num_classes]:
            for motif, region in layout:
                if motif not in MOTIFS or region not in REGIONS:
                    raise ConfigError(f"bad layout entry ({motif!r}, {region!r})")

    def confusable_pairs(self) -> list[tuple[int, int]]:
        """Class pairs whose motif multisets are identical."""
        inv = [sorted(m for m, _ in lay) for lay in self.layouts[: self.num_classes]]
        return [(a, b) for a in range(self.num_classes) for b in range(a + 1, self.num_classes)
                if inv[a] == inv[b]]


def motif_mask(kind: str, size: int) -> np.ndarray:
    """A ``size x size`` intensity mask in [0, 1]."""
    m = np.zeros((size, size))
    t = max(1, size // 3)
    lo = (size - t) // 2
    if kind == "square":
        m[:] = 1.0
    elif kind == "hstripe":
        m[lo : lo + t, :] = 1.0
    elif kind == "vstripe":
        m[:, lo : lo + t] = 1.0
    elif kind == "blob":
        r = (np.arange(size) - (size - 1) / 2) / (size / 4)
        m = np.exp(-0.5 * (r[:, None] ** 2 + r[None, :] ** 2))
    else:
        raise ConfigError(f"unknown motif {kind!r}")
    return m


def render(spec: SceneSpec, label: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Noise-free rendering of one scene of class ``label``, shape (3, S, S)."""
    s, ms = spec.image_size, spec.motif_size
    img = np.full((3, s, s), BACKGROUND)
    for motif, region in spec.layouts[label]:
        cx, cy = REGIONS[region]
        x0 = int(round(cx * s)) - ms // 2
        y0 = int(round(cy * s)) - ms // 2
        if spec.jitter and rng is not None:
            dx, dy = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
            x0, y0 = x0 + int(dx), y0 + int(dy)
        if x0 < 0 or y0 < 0 or x0 + ms > s or y0 + ms > s:
            raise ConfigError(f"motif {motif!r} at {region!r} does not fit a {s}x{s} frame")
        img[:, y0 : y0 + ms, x0 : x0 + ms] += _COLORS[motif][:, None, None] * motif_mask(motif, ms)
    return img


def generate(spec: SceneSpec, count_per_class: int) -> LabeledSet:
    if count_per_class < 1:
        raise ConfigError(f"count_per_class must be >= 1, got {count_per_class}")
    rng = np.random.default_rng(spec.seed)
    images, labels = [], []
    for i in range(count_per_class):
        for label in range(spec.num_classes):
            img = render(spec, label, rng)
            if spec.noise_std > 0:
                img = img + rng.normal(0.0, spec.noise_std, img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
    names = [f"class{c}" for c in range(spec.num_classes)]
    return LabeledSet(np.stack(images), np.array(labels, dtype=np.int64), names, spec.confusable_pairs())


def split(dataset: LabeledSet, training_rate: float, seed: int = 0) -> tuple[LabeledSet, LabeledSet]:
    """Stratified random split; ``round(rate * n_class)`` samples of each class go to training."""
    if not 0 < training_rate < 1:
        raise ConfigError(f"training rate must lie in (0, 1), got {training_rate}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        n_train = int(round(training_rate * idx.size))
        if n_train < 1 or n_train >= idx.size:
            raise ConfigError(
                f"training rate {training_rate} leaves class {dataset.class_names[c]!r} "
                f"({idx.size} samples) with an empty side"
            )
        idx = rng.permutation(idx)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    return dataset.subset(np.sort(np.concatenate(train_idx))), dataset.subset(np.sort(np.concatenate(test_idx)))


# ---------------------------------------------------------------- PPM / PGM

def _read_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError(f"{path}: truncated header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary 8-bit PGM (P5) or PPM (P6) file as a (3, H, W) array in [0, 1].

    Grayscale images are replicated across the three channels.
    """
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0, path)
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"{path}: unsupported magic {magic!r}; expected P5 or P6")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos, path)
        if not tok.isdigit():
            raise ParseError(f"{path}: malformed header field {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise ParseError(f"{path}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}; only 8-bit (255) is supported")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ParseError(f"{path}: missing whitespace after header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise ParseError(f"{path}: truncated payload, expected {need} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return np.repeat(arr.reshape(1, h, w), 3, axis=0)
    return arr.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_pnm(path, image: np.ndarray) -> None:
    """Write a (1|3, H, W) array in [0, 1] as binary PGM or PPM."""
    c, h, w = image.shape
    if c not in (1, 3):
        raise ConfigError(f"can only write 1- or 3-channel images, got {c}")
    raw = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    body = raw[0].tobytes() if c == 1 else raw.transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + body)


def load_image_dir(root, manifest=None) -> LabeledSet:
    """Load ``<root>/<class_name>/<image>.ppm|.pgm``.

    With a ``manifest`` (lines of ``relative_path<TAB>class_name``) only the
    listed files are read. Classes are numbered in sorted name order.
    """
    root = Path(root)
    entries: list[tuple[Path, str]] = []
    if manifest is not None:
        for lineno, line in enumerate(Path(manifest).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{manifest}:{lineno}: expected 'relative_path<TAB>class_name'")
            entries.append((root / parts[0], parts[1]))
        classes = sorted({c for _, c in entries})
    else:
        if not root.is_dir():
            raise ConfigError(f"image directory {root} does not exist")
        classes = sorted(d.name for d in root.iterdir() if d.is_dir())
        if not classes:
            raise ConfigError(f"no class directories under {root}")
        for name in classes:
            files = sorted(p for p in (root / name).iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
            if not files:
                raise ConfigError(f"class directory {root / name} contains no .ppm/.pgm images")
            entries.extend((p, name) for p in files)
    index = {c: i for i, c in enumerate(classes)}
    entries.sort(key=lambda e: (index[e[1]], os.fspath(e[0])))
    images = [read_pnm(p) for p, _ in entries]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ConfigError(f"images under {root} have differing sizes: {sorted(shapes)}")
    labels = np.array([index[c] for _, c in entries], dtype=np.int64)
    return LabeledSet(np.stack(images), labels, classes)


def save_image_dir(dataset: LabeledSet, root) -> Path:
    """Write a dataset as ``<root>/<class>/<nnnnn>.ppm`` plus a ``manifest.tsv``."""
    root = Path(root)
    lines = []
    for i, (img, label) in enumerate(zip(dataset.images, dataset.labels)):
        name = dataset.class_names[int(label)]
        rel = f"{name}/{i:05d}.ppm"
        (root / name).mkdir(parents=True, exist_ok=True)
        write_pnm(root / rel, img)
        lines.append(f"{rel}\t{name}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
