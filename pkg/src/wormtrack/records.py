"""Shared record types for detected nuclei."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

ORIGIN_TAGS = ("imported", "user_added", "user_edited")


@dataclass
class NucleusRecord:
    """One detected or annotated nucleus center in a single frame.

    Positions are micrometers in the raw (imaged) coordinate frame. The
    straightened coordinate is attached after untwisting; ``id`` is the stable
    track identity ("A07"-style band names or seam-style names) and may be
    absent on fresh detections.
    """

    frame_index: int
    position: np.ndarray
    id: Optional[str] = None
    straightened: Optional["StraightenedCoord"] = None  # noqa: F821
    origin_tag: str = "imported"

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {self.position.shape}")
        if not np.all(np.isfinite(self.position)):
            raise ValueError("position must be finite")
        if self.origin_tag not in ORIGIN_TAGS:
            raise ValueError(f"unknown origin_tag {self.origin_tag!r}")

    def with_id(self, new_id: Optional[str]) -> "NucleusRecord":
        return replace(self, id=new_id)
