from pydantic import BaseModel, ConfigDict, Field

from labeling.services.corners import DEFAULT_K, DEFAULT_THRESH
from labeling.services.signals import SLICE_RATE_HZ
from labeling.services.sync import DEFAULT_MAX_LAG_US


class LabelingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    rate_hz: int = Field(default=SLICE_RATE_HZ, gt=0)
    max_lag_us: int = Field(default=DEFAULT_MAX_LAG_US, gt=0)
    harris_k: float = Field(default=DEFAULT_K, gt=0.0, lt=0.25)
    harris_thresh: float = Field(default=DEFAULT_THRESH, gt=0.0, lt=1.0)
    ransac_iters: int = Field(default=1000, ge=1)
    inlier_tol: float = Field(default=2.0, gt=0.0)
    refine: bool = False
    refine_iters: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0)
