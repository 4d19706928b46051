from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Instance:
    id: int
    class_id: int
    confidence: float
    members: np.ndarray = field(repr=False)  # sorted original-vertex indices

    def __post_init__(self):
        self.members = np.unique(np.asarray(self.members, dtype=np.int64))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def __len__(self):
        return len(self.members)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.id == other.id
            and self.class_id == other.class_id
            and abs(self.confidence - other.confidence) <= 1e-6
            and np.array_equal(self.members, other.members)
        )


@dataclass
class InstanceSegmentation:
    """Per-vertex instance ids (0 = background) plus the instance table.

    ``point_instance`` records, for each original vertex, the id of the last
    instance written over it. Member sets may overlap once planar components
    are added; ``instances`` holds the authoritative memberships.
    """

    point_instance: np.ndarray
    instances: list[Instance] = field(default_factory=list)

    def __post_init__(self):
        self.point_instance = np.asarray(self.point_instance, dtype=np.int64)

    @property
    def num_points(self) -> int:
        return len(self.point_instance)

    def instance(self, instance_id: int) -> Instance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)

    def __eq__(self, other):
        if not isinstance(other, InstanceSegmentation):
            return NotImplemented
        return np.array_equal(self.point_instance, other.point_instance) and sorted(
            self.instances, key=lambda i: i.id
        ) == sorted(other.instances, key=lambda i: i.id)

    @classmethod
    def empty(cls, num_points: int) -> "InstanceSegmentation":
        return cls(np.zeros(num_points, dtype=np.int64), [])
