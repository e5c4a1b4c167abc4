from pydantic import BaseModel, ConfigDict, Field
from typing import Dict, List

from app.schemas.corpus import CorpusSpec
from app.schemas.cot import CotConfig
from app.schemas.eval import EvalConfig
from app.schemas.grpo import GRPOConfig
from app.schemas.training import EncoderConfig, SftConfig, TokenizerConfig


# One file drives every stage
class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    out_dir: str = "runs/default"
    no_cot: bool = False
    deterministic: bool = False
    data: CorpusSpec = Field(default_factory=CorpusSpec)
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)
    encoders: EncoderConfig = Field(default_factory=EncoderConfig)
    cot: CotConfig = Field(default_factory=CotConfig)
    sft: SftConfig = Field(default_factory=SftConfig)
    grpo: GRPOConfig = Field(default_factory=GRPOConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)


class RunManifest(BaseModel):
    stage: str
    config_hash: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    wall_time: float = 0.0
    notes: List[str] = Field(default_factory=list)
