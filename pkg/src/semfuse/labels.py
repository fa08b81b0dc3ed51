"""Label spaces and per-frame label maps.

A label map is a W x H grid of uint8 class ids. The same representation is
used for raw per-frame predictions, maps rendered from the fused volume,
instance-refined maps, and ground truth; a role tag tells them apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE_ID = 255

# NYU40 category names, index = class id.
NYU40_NAMES = [
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door",
    "window", "bookshelf", "picture", "counter", "blinds", "desk", "shelves",
    "curtain", "dresser", "pillow", "mirror", "floormat", "clothes",
    "ceiling", "books", "refrigerator", "television", "paper", "towel",
    "showercurtain", "box", "whiteboard", "person", "nightstand", "toilet",
    "sink", "lamp", "bathtub", "bag", "otherstructure", "otherfurniture",
    "otherprop",
]

ROLE_RAW = "raw_prediction"
ROLE_MULTIVIEW = "multiview"
ROLE_REFINED = "refined"
ROLE_GROUND_TRUTH = "ground_truth"

_ROLES = (ROLE_RAW, ROLE_MULTIVIEW, ROLE_REFINED, ROLE_GROUND_TRUTH)


@dataclass(frozen=True)
class LabelSpace:
    """The set of valid object categories; ids live in [0, num_classes)."""

    num_classes: int = 40
    ignore_id: int = IGNORE_ID
    names: tuple[str, ...] = field(default=tuple(NYU40_NAMES))

    def __post_init__(self):
        if not 1 <= self.num_classes <= 254:
            raise ValueError(f"num_classes must be in [1, 254], got {self.num_classes}")
        if self.ignore_id != IGNORE_ID:
            raise ValueError("ignore_id is reserved as 255")
        if len(self.names) < self.num_classes:
            object.__setattr__(
                self,
                "names",
                tuple(self.names) + tuple(
                    f"class_{i}" for i in range(len(self.names), self.num_classes)
                ),
            )

    def name(self, class_id: int) -> str:
        return self.names[class_id]

    def is_valid(self, class_id: int) -> bool:
        return 0 <= class_id < self.num_classes or class_id == self.ignore_id


class LabelMap:
    """W x H grid of class ids with a role tag.

    data is uint8, shape (height, width), row-major; 255 marks ignored pixels.
    """

    __slots__ = ("data", "role")

    def __init__(self, data: np.ndarray, role: str):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {data.shape}")
        if data.dtype != np.uint8:
            if data.min() < 0 or data.max() > 255:
                raise ValueError("label values must fit in uint8")
            data = data.astype(np.uint8)
        if role not in _ROLES:
            raise ValueError(f"unknown label role {role!r}")
        self.data = data
        self.role = role

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def validate(self, space: LabelSpace) -> None:
        """Raise if any value is outside [0, C) and not the ignore id."""
        bad = (self.data >= space.num_classes) & (self.data != space.ignore_id)
        if bad.any():
            v, u = np.argwhere(bad)[0]
            raise ValueError(
                f"label {int(self.data[v, u])} at pixel ({int(u)}, {int(v)}) "
                f"outside [0, {space.num_classes}) and not ignore"
            )

    def copy(self, role: str | None = None) -> "LabelMap":
        return LabelMap(self.data.copy(), role or self.role)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelMap)
            and self.role == other.role
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self) -> str:
        return f"LabelMap({self.width}x{self.height}, role={self.role})"
