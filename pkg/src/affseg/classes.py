"""Semantic class table: ``<class_id> <name> <is_instance_class> <is_planar>``."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, FormatError

PLANAR_NAMES = ("picture", "curtain", "shower_curtain", "sink", "bathtub")


@dataclass(frozen=True)
class ClassInfo:
    id: int
    name: str
    is_instance: bool
    is_planar: bool


class ClassTable:
    def __init__(self, entries):
        self.by_id: dict[int, ClassInfo] = {}
        for e in entries:
            if e.id in self.by_id:
                raise ConfigError(f"duplicate class id {e.id}")
            self.by_id[e.id] = e

    def __iter__(self):
        return iter(sorted(self.by_id.values(), key=lambda c: c.id))

    def __len__(self):
        return len(self.by_id)

    def __contains__(self, class_id):
        return class_id in self.by_id

    def name(self, class_id: int) -> str:
        info = self.by_id.get(class_id)
        return info.name if info else f"class{class_id}"

    def is_instance(self, class_id: int) -> bool:
        info = self.by_id.get(class_id)
        return bool(info and info.is_instance)

    @property
    def instance_ids(self) -> list[int]:
        return [c.id for c in self if c.is_instance]

    def planar_ids(self) -> list[int]:
        """Ids of the planar classes; all five standard ones must be present."""
        names = {c.name.replace(" ", "_"): c for c in self}
        missing = [n for n in PLANAR_NAMES if n not in names]
        if missing:
            raise ConfigError(f"class table lacks planar classes: {', '.join(missing)}")
        return [c.id for c in self if c.is_planar]

    @classmethod
    def load(cls, path) -> "ClassTable":
        return cls(_parse(Path(path).read_text().splitlines(), path))

    @classmethod
    def default(cls) -> "ClassTable":
        text = resources.files("affseg").joinpath("data/scannet_classes.txt").read_text()
        return cls(_parse(text.splitlines(), "scannet_classes.txt"))


def _parse(lines, path):
    out = []
    for n, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        words = s.split()
        if len(words) != 4 or words[2] not in ("0", "1") or words[3] not in ("0", "1"):
            raise FormatError(f"expected '<id> <name> <0|1> <0|1>', got {s!r}", path=path, line=n)
        try:
            cid = int(words[0])
        except ValueError:
            raise FormatError(f"bad class id {words[0]!r}", path=path, line=n) from None
        out.append(ClassInfo(cid, words[1], words[2] == "1", words[3] == "1"))
    return out
