from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.training import SamplingConfig


class RewardWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format: float = Field(default=1.0, ge=0.0)
    motion: float = Field(default=1.0, ge=0.0)
    semantic: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def check_not_all_zero(self) -> "RewardWeights":
        if self.format == 0 and self.motion == 0 and self.semantic == 0:
            raise ValueError("reward weights must not all be zero")
        return self


# GRPO stage configuration
class GRPOConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    group_size: int = Field(default=8, ge=2)
    epsilon: float = Field(default=0.2, gt=0.0)
    beta: float = Field(default=0.001, ge=0.0)
    weights: RewardWeights = Field(default_factory=RewardWeights)
    old_refresh_interval: int = Field(default=1, ge=1)
    updates_per_rollout: int = Field(default=1, ge=1)
    prompts_per_step: int = Field(default=2, ge=1)
    lr: float = Field(default=1e-4, ge=0.0)
    lr_min: float = Field(default=0.0, ge=0.0)
    total_steps: int = Field(default=200, ge=1)
    eps_std: float = Field(default=1e-8, gt=0.0)
    log_every: int = Field(default=10, ge=1)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    # reward ablation runner
    ablation_configs: list[str] = Field(default_factory=lambda: ["full", "format_only", "no_motion", "no_semantic"])
    ablation_seeds: int = Field(default=3, ge=1)
    ablation_steps: int = Field(default=50, ge=1)


class RewardBreakdown(BaseModel):
    r_format: int = 0
    r_motion: float = 0.0
    r_semantic: float = 0.0
    scalar: float = 0.0


class StepLog(BaseModel):
    step: int
    mean_reward: float
    format_rate: float
    mean_r_motion: float
    mean_r_semantic: float
    kl: float
    lr: float
