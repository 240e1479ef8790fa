import os
import logging
from typing import Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

load_dotenv()


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    jobs: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    sigma_frac: float = Field(default=0.03, gt=0.0)
    symmetry_steps: int = Field(default=36, ge=1)
    max_vertices: int = Field(default=10000, ge=1)
    crop_size: int = Field(default=256, ge=1)
    bbox_padding: float = Field(default=1.5, gt=0.0)
    image_width: int = Field(default=640, ge=1)
    image_height: int = Field(default=480, ge=1)
    xy_range: Tuple[float, float] = (-0.5, 0.5)
    z_range: Tuple[float, float] = (0.1, 10.0)


def get_settings() -> Settings:
    """Read settings from the environment (and .env) on every call."""
    return Settings(
        jobs=int(os.getenv("POSEKIT_JOBS", str(os.cpu_count() or 1))),
        log_level=os.getenv("POSEKIT_LOG_LEVEL", "INFO").upper(),
        sigma_frac=float(os.getenv("POSEKIT_SIGMA_FRAC", "0.03")),
        symmetry_steps=int(os.getenv("POSEKIT_SYMMETRY_STEPS", "36")),
        max_vertices=int(os.getenv("POSEKIT_MAX_VERTICES", "10000")),
        crop_size=int(os.getenv("POSEKIT_CROP_SIZE", "256")),
        bbox_padding=float(os.getenv("POSEKIT_BBOX_PADDING", "1.5")),
        image_width=int(os.getenv("POSEKIT_IMAGE_WIDTH", "640")),
        image_height=int(os.getenv("POSEKIT_IMAGE_HEIGHT", "480")),
    )


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=getattr(logging, (level or get_settings().log_level), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
