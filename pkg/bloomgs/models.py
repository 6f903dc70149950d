"""
Pydantic Report Models
Everything written to report.json or logged as a structured record
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class ViewKind(str, Enum):
    TRAJECTORY = "trajectory"
    SUPPORT = "support"


class AttributeGroup(str, Enum):
    FEATURE = "feature"
    SCALING = "scaling"
    OFFSET = "offset"

    @property
    def index(self) -> int:
        return list(AttributeGroup).index(self)


class ProviderKind(str, Enum):
    SYNTHETIC = "synthetic"
    DIRECTORY = "dir"


# ==================== Loss Models ====================

class DprBreakdown(BaseModel):
    """Weighted depth-prior loss and its unweighted terms."""
    pixel: float = 0.0
    dist: float = 0.0
    smooth: float = 0.0
    total: float = 0.0
    warnings: List[str] = Field(default_factory=list)


class LossBreakdown(BaseModel):
    """One training iteration's loss terms."""
    iteration: int
    view: int
    rgb: float
    pixel: float = 0.0
    dist: float = 0.0
    smooth: float = 0.0
    entropy: float = 0.0
    volume: float = 0.0
    total: float

    def log_line(self) -> str:
        return (
            f"iter={self.iteration} view={self.view} rgb={self.rgb:.6f} pixel={self.pixel:.6f} "
            f"dist={self.dist:.6f} smooth={self.smooth:.6f} entropy={self.entropy:.6f} "
            f"total={self.total:.6f}"
        )


class GradCheckReport(BaseModel):
    """Result of comparing tape gradients against central differences."""
    max_relative_error: float
    tolerance: float
    passed: bool
    per_parameter: Dict[str, float] = Field(default_factory=dict)
    coordinates_checked: int = 0


# ==================== Generation Models ====================

class GenerationStep(BaseModel):
    """Bookkeeping for one camera of the progressive loop."""
    camera_index: int
    covered_pixels: int
    inpainted_pixels: int
    points_added: int
    scale: float = 1.0
    shift: float = 0.0
    shift_only: bool = False


class GenerationSummary(BaseModel):
    """Outcome of generate()."""
    prompt: str
    num_cameras: int
    support_cameras: int
    initial_points: int
    total_points: int
    steps: List[GenerationStep] = Field(default_factory=list)


# ==================== Training Models ====================

class TrainSummary(BaseModel):
    """Outcome of train()."""
    iterations: int
    anchors: int
    gaussians: int
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    ablation: str = "none"
    depth_error: Optional[float] = None
    holdout_views: int = 0
    initial_holdout_psnr: Optional[float] = None
    final_holdout_psnr: Optional[float] = None
    history: List[LossBreakdown] = Field(default_factory=list)


# ==================== Compression Models ====================

class SizeReport(BaseModel):
    """Byte accounting of one bitstream."""
    header_bytes: int
    model_bytes: int
    location_bytes: int
    payload_bytes: int
    total_bytes: int
    anchors: int
    bits_per_anchor: float
    entropy_estimate_bytes: float
    raw_anchor_bytes: int
    anchor_data_ratio: float


# ==================== Evaluation Models ====================

class ViewMetrics(BaseModel):
    """Quality of one rendered view."""
    view: int
    kind: ViewKind
    psnr: float
    masked_psnr: float


class EvalReport(BaseModel):
    """Held-out view quality."""
    views: List[ViewMetrics] = Field(default_factory=list)
    mean_psnr: float = 0.0
    mean_masked_psnr: float = 0.0
