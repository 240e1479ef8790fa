from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import logging
import uvicorn
from dotenv import load_dotenv
import os

from api.routes import router, get_grid
from src import __version__
from src.config import configure_logging

load_dotenv()

configure_logging()
logger = logging.getLogger(__name__)

app = FastAPI(
    title="PoseKit",
    description="Deterministic geometry, grids and metrics of a two-stage 6-DoF pose pipeline",
    version=__version__
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(router, prefix="/api/v1", tags=["posekit"])

@app.on_event("startup")
async def startup_event():
    logger.info("Starting PoseKit API...")
    grid = get_grid(int(os.getenv("POSEKIT_WARM_N_SIDE", "4")))
    logger.info(f"System ready. Default grid holds {grid.K} prototypes.")

if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=os.getenv("API_HOST", "0.0.0.0"),
        port=int(os.getenv("API_PORT", 8001)),
        reload=os.getenv("DEBUG", "False").lower() == "true"
    )
