from pydantic import BaseModel, ConfigDict, Field
from typing import Optional


# VQ-VAE tokenizer training
class TokenizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    codebook_size: int = Field(default=64, ge=2)
    code_dim: int = Field(default=8, ge=1)
    hidden: int = Field(default=32, ge=1)
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=8, ge=1)
    lr: float = Field(default=2e-3, ge=0.0)
    lr_min: float = Field(default=1e-4, ge=0.0)
    commit_weight: float = Field(default=0.25, ge=0.0)
    velocity_weight: float = Field(default=0.5, ge=0.0)
    decay: float = Field(default=0.99, gt=0.0, lt=1.0)
    eps_count: float = Field(default=1e-5, gt=0.0)
    reset_enabled: bool = True
    reset_window: int = Field(default=50, ge=1)
    # None means 1/(4N)
    reset_threshold: Optional[float] = None


# Contrastive motion/text encoders
class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    embed_dim: int = Field(default=32, ge=1)
    hidden: int = Field(default=64, ge=1)
    buckets: int = Field(default=512, ge=1)
    temperature: float = Field(default=0.07, gt=0.0)
    epochs: int = Field(default=40, ge=1)
    batch_size: int = Field(default=32, ge=2)
    lr: float = Field(default=1e-3, ge=0.0)
    retrieval_pool: int = Field(default=32, ge=2)


# Token policy shape and SFT cold start
class SftConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(default=128, ge=1)
    n_layers: int = Field(default=2, ge=1)
    n_heads: int = Field(default=4, ge=1)
    d_ff: int = Field(default=256, ge=1)
    context_length: int = Field(default=256, ge=8)
    init_std: float = Field(default=0.02, gt=0.0)
    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=8, ge=1)
    lr: float = Field(default=1e-3, ge=0.0)
    lr_min: float = Field(default=1e-5, ge=0.0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


class SamplingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    temperature: float = Field(default=1.0, gt=0.0)
    top_k: int = Field(default=50, ge=1)
    max_new_tokens: int = Field(default=128, ge=1)
    greedy: bool = False


class VqLossBreakdown(BaseModel):
    reconstruct: float
    commit: float
    embed: float
    total: float
