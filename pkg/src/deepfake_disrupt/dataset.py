"""Face corpus loading, split assignment and split manifests."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

SPLITS = ("train_substitute", "train_tcagan", "attack_eval")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class FaceDataset:
    """Images grouped by identity, each tagged with one split."""

    identities: list
    images: dict  # identity -> list of (H, W, C) float64 arrays
    filenames: dict = field(default_factory=dict)  # identity -> list of names
    split: dict = field(default_factory=dict)  # (identity, index) -> split name

    def __len__(self):
        return sum(len(v) for v in self.images.values())

    def select(self, split, identity=None):
        """Images in ``split`` (optionally of one identity), in deterministic order."""
        ids = self.identities if identity is None else [identity]
        return [self.images[i][k] for i in ids for k in range(len(self.images[i])) if self.split.get((i, k)) == split]

    def select_with_labels(self, split):
        return [
            (self.images[i][k], i, self.filenames[i][k])
            for i in self.identities
            for k in range(len(self.images[i]))
            if self.split.get((i, k)) == split
        ]

    def check_disjoint(self):
        """Every image carries exactly one split label, so splits are disjoint by image."""
        for i in self.identities:
            for k in range(len(self.images[i])):
                if self.split.get((i, k)) not in SPLITS:
                    raise ValueError(f"image {i}/{self.filenames[i][k]} has no valid split")
        return True


def _load_image(path, target_size):
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (target_size[1], target_size[0]):
            im = im.resize((target_size[1], target_size[0]), Image.BICUBIC)
        return np.asarray(im, dtype=np.float64) / 255.0


def load_corpus(path, target_size=(64, 64)):
    """Read ``path/<identity>/<image>`` into a :class:`FaceDataset` (no splits yet)."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    id_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not id_dirs:
        raise ValueError("no identities found")
    images, names = {}, {}
    for d in id_dirs:
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        loaded, kept = [], []
        for f in files:
            try:
                loaded.append(_load_image(f, target_size))
                kept.append(f.name)
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", f, exc)
        if not loaded:
            raise ValueError(f"identity {d.name!r} has no readable images")
        images[d.name], names[d.name] = loaded, kept
    return FaceDataset(identities=[d.name for d in id_dirs], images=images, filenames=names)


def from_arrays(corpus):
    """Wrap ``{identity: [images]}`` (e.g. from :mod:`synthetic`) as a dataset."""
    ids = sorted(corpus)
    return FaceDataset(
        identities=ids,
        images={i: [np.asarray(im, dtype=np.float64) for im in corpus[i]] for i in ids},
        filenames={i: [f"{k:04d}.png" for k in range(len(corpus[i]))] for i in ids},
    )


def assign_splits(data, fractions=(0.3, 0.2, 0.5), seed=0):
    """Shuffle each identity with ``seed`` and cut it into the three splits in place."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    data.split = {}
    for j, ident in enumerate(data.identities):
        n = len(data.images[ident])
        order = np.random.default_rng([seed, j]).permutation(n)
        n_sub = int(round(fractions[0] * n))
        n_gan = int(round(fractions[1] * n))
        for rank, k in enumerate(order):
            name = SPLITS[0] if rank < n_sub else SPLITS[1] if rank < n_sub + n_gan else SPLITS[2]
            data.split[(ident, int(k))] = name
    data.check_disjoint()
    return data


def write_manifest(data, path):
    """CSV manifest with columns identity, filename, split."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["identity", "filename", "split"])
        for i in data.identities:
            for k, name in enumerate(data.filenames[i]):
                w.writerow([i, name, data.split[(i, k)]])
    return path


def read_manifest(data, path):
    """Apply the splits recorded in a manifest to ``data`` in place."""
    index = {(i, n): k for i in data.identities for k, n in enumerate(data.filenames[i])}
    seen = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["identity"], row["filename"])
            if key in seen:
                raise ValueError(f"image {key} listed in more than one split")
            if row["split"] not in SPLITS:
                raise ValueError(f"unknown split {row['split']!r}")
            if key not in index:
                raise ValueError(f"manifest entry {key} not found in corpus")
            seen[key] = row["split"]
    data.split = {(i, index[(i, n)]): s for (i, n), s in seen.items()}
    data.check_disjoint()
    return data


def split_sizes(data):
    return {s: len(data.select(s)) for s in SPLITS}
