"""
`heat-check`: Bakry-Emery gradient estimate and maximum principle along the heat flow
"""
from pathlib import Path

import structlog

from app.commands.common import EXIT_STATUS, build_problem, centred_bump, verdict_line
from app.core.profiles import gaussian_expr
from app.schemas.config import ExperimentConfig
from app.services.field_service import field_service
from app.services.heat_service import heat_service
from app.utils.csv_writer import write_csv

logger = structlog.get_logger()

HEAT_HEADER = ["t", "gradient_violation", "tolerance"]


def run(config: ExperimentConfig, out_dir: Path) -> int:
    section = config.heat
    problem = build_problem(config, out_dir, "fd")
    grid = problem.grid
    if section.f is not None:
        f = problem.scalar(section.f, "f", compact=True)
    else:
        f = field_service.sample_field(centred_bump(grid), grid, name="f", compact=True)

    positive = [t for t in section.times if t > 0]
    dt = min(positive) / section.steps if positive else None
    report = heat_service.bakry_emery_gradient_check(
        problem.model, problem.g, problem.w, f, section.K, section.times,
        dt=dt, steps_max_principle=section.steps_max_principle,
    )
    if positive:
        center = tuple(0.5 * (a + b) for a, b in zip(grid.lower, grid.upper))
        width = 0.2 * min(b - a for a, b in zip(grid.lower, grid.upper))
        v = field_service.sample_field(gaussian_expr(center, width), grid, name="v", compact=True)
        gap = heat_service.heat_symmetry_gap(f, v, problem.g, problem.w, max(positive), section.steps)
        report = report.model_copy(update={"symmetry_gap": gap})

    write_csv(
        problem.output("heat.csv"),
        HEAT_HEADER,
        ([t, v_t, report.tolerance] for t, v_t in zip(report.times, report.gradient_violation)),
    )
    logger.info("Heat report written", symmetry_gap=report.symmetry_gap, energy_monotone=report.energy_monotone)
    print(
        verdict_line(
            "heat-check",
            problem,
            report.verdict,
            K=section.K,
            gradient_violation=max(report.gradient_violation, default=0.0),
            tolerance=report.tolerance,
            max_principle_violation=report.max_principle_violation,
        )
    )
    return EXIT_STATUS[report.verdict]
