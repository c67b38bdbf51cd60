from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from spatiospatial.config import ModelConfig
from spatiospatial.inference import predict_volume
from spatiospatial.models.resnets import (
    PUBLISHED_PARAMETER_COUNTS,
    ArchitectureKind,
    closed_form_breakdown,
    parse_architecture,
)

app = FastAPI(title="spatiospatial")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class ParamsRequest(BaseModel):
    architecture: str
    num_classes: int = Field(3, ge=2)
    in_channels: int = Field(1, ge=1)


class PredictRequest(BaseModel):
    checkpoint: str
    volume: str
    architecture: str = None


@app.get("/")
def read_root():
    return {"message": "spatiospatial volumetric classification API",
            "architectures": [k.value for k in ArchitectureKind]}


@app.post("/params")
def parameter_report(req: ParamsRequest):
    try:
        kind = parse_architecture(req.architecture)
        config = ModelConfig(num_classes=req.num_classes, in_channels=req.in_channels)
        breakdown = closed_form_breakdown(kind, config)
        total = sum(breakdown.values())
        reference = PUBLISHED_PARAMETER_COUNTS[kind] \
            if (req.num_classes, req.in_channels) == (3, 1) else None
        return {
            "architecture": kind.value,
            "total": total,
            "breakdown": breakdown,
            "reference": reference,
            "difference": total - reference if reference is not None else None,
        }
    except Exception as e:
        raise HTTPException(status_code=400, detail=str(e))


@app.post("/predict")
def predict(req: PredictRequest):
    try:
        return predict_volume(req.checkpoint, req.volume, req.architecture).to_dict()
    except Exception as e:
        raise HTTPException(status_code=400, detail=str(e))
