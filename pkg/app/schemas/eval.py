from pydantic import BaseModel, ConfigDict, Field
from typing import List, Literal, Optional


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    repeats: int = Field(default=20, ge=2)
    pool: int = Field(default=32, ge=2)
    diversity_pairs: int = Field(default=300, ge=1)
    mm_dist_mode: Literal["euclidean", "cosine"] = "euclidean"
    mmodality_reps: int = Field(default=30, ge=2)
    mmodality_pairs: int = Field(default=10, ge=1)
    mmodality_repeats: int = Field(default=5, ge=1)
    mmodality_texts: int = Field(default=8, ge=1)
    dump_features: bool = False


# Metric estimate with a 95% confidence half-width
class MetricEstimate(BaseModel):
    metric: str
    estimate: float
    ci95: float = Field(ge=0.0)
    repeats: int


class EvalReport(BaseModel):
    metrics: List[MetricEstimate] = Field(default_factory=list)

    def get(self, metric: str) -> Optional[MetricEstimate]:
        for item in self.metrics:
            if item.metric == metric:
                return item
        return None
