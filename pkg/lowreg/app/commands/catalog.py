"""
`catalog`: list the catalog models with their curvature facts
"""
import json
from pathlib import Path
from typing import Optional

from app.schemas.config import ExperimentConfig
from app.services.catalog_service import catalog_service
from app.utils.csv_writer import write_csv

CATALOG_HEADER = ["name", "dimension", "regularity", "ricci_factor", "bakry_emery_K", "bakry_emery_N", "description"]


def run(config: Optional[ExperimentConfig], out_dir: Path) -> int:
    dimension = config.chart.dimension if config is not None and config.chart is not None else 2
    models = catalog_service.models(dimension)
    write_csv(
        Path(out_dir) / "catalog.csv",
        CATALOG_HEADER,
        (
            [m.name, m.dimension, m.regularity.value, m.ricci_factor, m.bakry_emery_K, m.bakry_emery_N, m.description]
            for m in models
        ),
    )
    for model in models:
        print(json.dumps(model.model_dump(mode="json"), sort_keys=True))
    return 0
