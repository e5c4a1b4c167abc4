from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Dict, Tuple

DEFAULT_FAMILY_COUNTS: Dict[str, int] = {
    "walk-straight": 60,
    "walk-circle": 60,
    "wave-arm": 60,
    "squat": 60,
    "turn-in-place": 60,
    "jump": 60,
    "walk-straight+wave-arm": 20,
    "squat+jump": 20,
    "turn-in-place+walk-straight": 20,
}


# Synthetic corpus specification
class CorpusSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # family tag -> sample count; "a+b" tags are two-step compositions
    families: Dict[str, int] = Field(default_factory=lambda: dict(DEFAULT_FAMILY_COUNTS))
    min_frames: int = Field(default=56, ge=8)
    max_frames: int = Field(default=72, ge=8)
    fps: int = Field(default=20, ge=1)
    noise: float = Field(default=0.01, ge=0.0)
    blend_overlap: int = Field(default=8, ge=0)
    splits: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    @model_validator(mode="after")
    def check_counts_and_splits(self) -> "CorpusSpec":
        if not self.families:
            raise ValueError("at least one family is required")
        for family, count in self.families.items():
            if count < 1:
                raise ValueError(f"count for '{family}' must be >= 1")
        if self.min_frames > self.max_frames:
            raise ValueError("min_frames must not exceed max_frames")
        if self.blend_overlap >= self.min_frames:
            raise ValueError("blend_overlap must be shorter than min_frames")
        if any(r < 0 for r in self.splits) or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError("split ratios must be non-negative and sum to 1")
        return self
