from fastapi import FastAPI, UploadFile, File, Form, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from dotenv import load_dotenv
from pydantic import BaseModel, Field
from typing import Dict, List, Literal, Optional
import logging
import os

# Load env vars
load_dotenv()

from utils.geometry_utils import DomainSpec, GeometryError, build_domain
from utils.io_utils import parse_trace_text, trace_series
from utils.mesh_utils import MeshError, MeshGenerationError, generate_mesh, mesh_statistics
from utils.config_utils import MeshSettings
from utils.run_processor import analyze_trace
from utils.strouhal_utils import NoPeriodDetected, StrouhalAnalyzer, TraceError, classify_spread

logging.basicConfig(
    level=getattr(logging, os.getenv("NSBENCH_LOG_LEVEL", "INFO").upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger("nsbench.app")

# FastAPI app setup
app = FastAPI(title="Cylinder Benchmark Analysis Service")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ----- Schemas -----
class HistogramModel(BaseModel):
    edges: List[float]
    counts: List[int]


class AnalyzeResponse(BaseModel):
    mean_period: float
    std_period: float
    strouhal: float
    classification: str
    iterations_used: int
    window: List[float]
    n_samples: int
    edge_fraction: float
    histogram: HistogramModel


class ClassifyRequest(BaseModel):
    mean_period: float = Field(gt=0)
    std_period: float = Field(ge=0)


class ClassifyResponse(BaseModel):
    classification: Literal["periodic", "transitional", "chaotic"]
    relative_spread: float


class MeshRequest(MeshSettings):
    domain: DomainSpec = Field(default_factory=DomainSpec)


class MeshResponse(BaseModel):
    statistics: Dict[str, float]


# ----- Routes -----
@app.post("/analyze", response_model=AnalyzeResponse)
async def analyze(
    file: UploadFile = File(...),
    t_start: float = Form(280.0),
    t_end: float = Form(480.0),
    initial_guess: float = Form(11.3),
    scaling: Literal["standardize", "raw"] = Form("standardize"),
):
    data = await file.read()
    text = data.decode(errors="ignore")
    if not text.strip():
        raise HTTPException(status_code=400, detail="Empty trace upload.")

    try:
        trace = trace_series(parse_trace_text(text, source=file.filename or "<upload>"))
        _, result = analyze_trace(trace, (t_start, t_end), initial_guess, StrouhalAnalyzer(scaling=scaling))
    except NoPeriodDetected as e:
        logger.warning(f"No period in {file.filename}: {e}")
        raise HTTPException(status_code=422, detail=f"No period detected: {e}")
    except TraceError as e:
        logger.warning(f"Rejected trace {file.filename}: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Analysis of {file.filename} failed: {e}")
        raise HTTPException(status_code=500, detail="Trace analysis failed.")

    return AnalyzeResponse(**result)


@app.post("/classify", response_model=ClassifyResponse)
async def classify(request: ClassifyRequest):
    return ClassifyResponse(
        classification=classify_spread(request.mean_period, request.std_period),
        relative_spread=request.std_period / request.mean_period,
    )


@app.post("/mesh", response_model=MeshResponse)
def mesh(request: MeshRequest):
    try:
        generated = generate_mesh(build_domain(request.domain), request.params())
    except (GeometryError, MeshError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except MeshGenerationError as e:
        logger.error(f"Mesh generation failed: {e}")
        raise HTTPException(status_code=500, detail=f"Mesh generation failed: {e}")
    return MeshResponse(statistics=mesh_statistics(generated))


# Health check endpoint
@app.get("/health")
async def health_check():
    return {"status": "healthy", "message": "Cylinder benchmark analysis service is running!"}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, port=int(os.getenv("NSBENCH_PORT", "8000")))
