from pydantic import BaseModel, ConfigDict, Field
from typing import List, Literal, Optional


# Chain-of-thought record schemas
class CoTTrace(BaseModel):
    think: str
    steps: List[str]


class QualityReport(BaseModel):
    format_ok: bool = False
    length_ok: bool = False
    redundancy_ok: bool = False
    step_count_ok: bool = False
    step_count: int = 0
    attempt: int = 1

    @property
    def accepted(self) -> bool:
        return self.format_ok and self.length_ok and self.redundancy_ok and self.step_count_ok


class Triplet(BaseModel):
    id: str
    text: str = Field(min_length=1)
    cot_think: str
    cot_steps: List[str]
    motion_tokens: List[int]

    @property
    def cot(self) -> CoTTrace:
        return CoTTrace(think=self.cot_think, steps=self.cot_steps)

    @property
    def source_sample_id(self) -> str:
        return self.id


# Backend + quality-control settings
class CotBackendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["template", "remote"] = "template"
    endpoint: Optional[str] = None
    model: str = "reasoner"
    timeout: float = Field(default=30.0, gt=0.0)
    max_retries: int = Field(default=3, ge=1)
    api_key_env: str = "COT_API_KEY"
    temperature: float = Field(default=0.6, ge=0.0)
    # seeds the template backend's paraphrase choice
    seed: int = 0


class CotLimits(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_words: int = Field(default=256, ge=1)
    max_steps: int = Field(default=8, ge=1)
    redundancy_jaccard: float = Field(default=0.9, ge=0.0, le=1.0)


class CotConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backend: CotBackendConfig = Field(default_factory=CotBackendConfig)
    limits: CotLimits = Field(default_factory=CotLimits)
    max_attempts: int = Field(default=3, ge=1)
    workers: int = Field(default=4, ge=1)
