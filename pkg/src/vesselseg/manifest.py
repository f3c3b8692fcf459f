"""Dataset manifests.

A manifest is a small ``key = value`` file::

    [dataset]
    name = DRIVE
    modality = fundus
    polarity = dark
    train = 21
    test = 01,02,03

    [entry 21]
    image = training/images/21_training.tif
    gt = training/1st_manual/21_manual1.gif
    fov = training/mask/21_training_mask.gif

Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .exceptions import DataIOError, MalformedManifest, WriteFailure
from .filters import BRIGHT_ON_DARK, DARK_ON_BRIGHT

MODALITIES = {"fundus": DARK_ON_BRIGHT, "FA": BRIGHT_ON_DARK, "SLO": BRIGHT_ON_DARK}
_DATASET_KEYS = {"name", "modality", "polarity", "train", "test"}
_ENTRY_KEYS = {"image", "gt", "fov"}


@dataclass(frozen=True)
class Entry:
    image: str
    gt: str
    fov: str | None = None


@dataclass
class DatasetManifest:
    name: str
    entries: dict
    train: list
    test: list
    modality: str = "fundus"
    polarity: str = DARK_ON_BRIGHT
    root: str = field(default=".", compare=False)

    def __post_init__(self):
        if not self.entries:
            raise MalformedManifest("manifest has no entries")
        if not self.train:
            raise MalformedManifest("train list is empty")
        if not self.test:
            raise MalformedManifest("test list is empty")
        if self.modality not in MODALITIES:
            raise MalformedManifest(f"unknown modality {self.modality!r}")
        if self.polarity not in (DARK_ON_BRIGHT, BRIGHT_ON_DARK):
            raise MalformedManifest(f"unknown polarity {self.polarity!r}")
        for ids in (self.train, self.test):
            if len(set(ids)) != len(ids):
                raise MalformedManifest("duplicate id in train/test list")
            missing = [i for i in ids if i not in self.entries]
            if missing:
                raise MalformedManifest(f"unresolved ids: {', '.join(missing)}")
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise MalformedManifest(f"ids in both train and test: {', '.join(sorted(overlap))}")

    def path(self, entry_id, key):
        value = getattr(self.entries[entry_id], key)
        if value is None:
            return None
        return value if os.path.isabs(value) else os.path.join(self.root, value)


def _id_list(text):
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def parse_manifest(text, root="."):
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), interpolation=None,
        default_section="__defaults__", strict=True,
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise MalformedManifest(str(exc).splitlines()[0]) from exc
    if "dataset" not in parser:
        raise MalformedManifest("missing [dataset] section")
    entries = {}
    for section in parser.sections():
        keys = set(parser[section])
        if section == "dataset":
            unknown = keys - _DATASET_KEYS
        elif section.startswith("entry "):
            unknown = keys - _ENTRY_KEYS
            entry_id = section[len("entry ") :].strip()
            if not entry_id:
                raise MalformedManifest("entry section without id")
            for required in ("image", "gt"):
                if required not in keys:
                    raise MalformedManifest(f"[{section}] is missing '{required}'")
            sec = parser[section]
            entries[entry_id] = Entry(sec["image"], sec["gt"], sec.get("fov"))
        else:
            raise MalformedManifest(f"unknown section [{section}]")
        if unknown:
            raise MalformedManifest(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    ds = parser["dataset"]
    for required in ("name", "train", "test"):
        if required not in ds:
            raise MalformedManifest(f"[dataset] is missing '{required}'")
    modality = ds.get("modality", "fundus")
    polarity = ds.get("polarity", MODALITIES.get(modality, DARK_ON_BRIGHT))
    return DatasetManifest(
        name=ds["name"],
        entries=entries,
        train=_id_list(ds["train"]),
        test=_id_list(ds["test"]),
        modality=modality,
        polarity=polarity,
        root=root,
    )


def load_manifest(path):
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataIOError(f"{path}: {exc.strerror or exc}") from exc
    return parse_manifest(text, root=os.path.dirname(os.path.abspath(path)))


def format_manifest(manifest):
    lines = [
        "[dataset]",
        f"name = {manifest.name}",
        f"modality = {manifest.modality}",
        f"polarity = {manifest.polarity}",
        f"train = {','.join(manifest.train)}",
        f"test = {','.join(manifest.test)}",
    ]
    for entry_id, entry in manifest.entries.items():
        lines += ["", f"[entry {entry_id}]", f"image = {entry.image}", f"gt = {entry.gt}"]
        if entry.fov is not None:
            lines.append(f"fov = {entry.fov}")
    return "\n".join(lines) + "\n"


def write_manifest(manifest, path):
    try:
        with open(os.fspath(path), "w", encoding="utf-8") as fh:
            fh.write(format_manifest(manifest))
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc
