"""
`curvature`: dump Christoffel symbols, Ricci and Bakry-Emery Ricci tensors
"""
from pathlib import Path

import numpy as np
import structlog

from app.commands.common import EXIT_STATUS, Problem, build_problem, verdict_line
from app.config import settings
from app.schemas.config import ExperimentConfig
from app.schemas.reports import Verdict
from app.services.curvature_service import ANALYTIC, curvature_service
from app.services.field_service import field_service

logger = structlog.get_logger()

ANALYTIC_TOLERANCE = 1e-8


def einstein_gap(problem: Problem, ricci: np.ndarray) -> float:
    """sup over the interior of |Ric - kappa g| for models with Ric = kappa g"""
    kappa = problem.model.ricci_factor
    gap = np.abs(ricci - kappa * problem.g.values)
    mask = problem.grid.interior_mask()
    return float(np.max(gap[..., mask]))


def run(config: ExperimentConfig, out_dir: Path) -> int:
    section = config.curvature
    problem = build_problem(config, out_dir, section.mode, section.fd_order)
    g, w = problem.g, problem.w

    curv = curvature_service.curvature(g, section.mode, section.fd_order)
    ric_mu = curvature_service.bakry_emery_ricci(g, w, section.N, section.mode, section.fd_order, curvature=curv)

    field_service.dump_array_csv(curv.christoffel.second, 3, problem.grid, problem.output("christoffel.csv"))
    field_service.dump_field_csv(curv.ricci, problem.output("ricci.csv"))
    field_service.dump_field_csv(ric_mu, problem.output("ricci_mu.csv"))

    finite = bool(np.all(np.isfinite(ric_mu.values)))
    values = {"ricci_skew": curv.ricci_skew}
    verdict = Verdict.PASS if finite else Verdict.FAIL
    if problem.model.ricci_factor is not None:
        h = max(problem.grid.spacing)
        tolerance = ANALYTIC_TOLERANCE if section.mode == ANALYTIC else settings.defect_safety * h ** 2
        gap = einstein_gap(problem, curv.ricci.values)
        values.update(einstein_gap=gap, tolerance=tolerance)
        if gap > tolerance:
            verdict = Verdict.FAIL
    logger.info("Curvature dumped", model=problem.label, mode=section.mode, **values)
    print(verdict_line("curvature", problem, verdict, **values))
    return EXIT_STATUS[verdict]
