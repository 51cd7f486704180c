"""
`weak-verify`: lower-bound deficit sweep over the default test family
"""
from pathlib import Path

import structlog

from app.commands.common import EXIT_STATUS, build_problem, verdict_line
from app.models.testpair import LowerBoundSpec
from app.schemas.config import ExperimentConfig
from app.services.family_service import family_service
from app.utils.csv_writer import write_csv

logger = structlog.get_logger()

DEFICIT_HEADER = ["test_id"] + [f"term{k}" for k in range(1, 10)] + ["value", "defect", "verdict"]


def run(config: ExperimentConfig, out_dir: Path) -> int:
    section = config.weak
    order = config.curvature.fd_order
    problem = build_problem(config, out_dir, section.mode, order)
    spec = LowerBoundSpec(K=section.K, N=section.N)

    family = family_service.default_test_family(problem.g, seed=section.seed, members=section.members)
    report = family_service.deficit_sweep(
        problem.g, problem.w, spec, family, section.mode, order, model=problem.label
    )
    write_csv(
        problem.output("deficits.csv"),
        DEFICIT_HEADER,
        ([r.test_id] + r.terms + [r.value, r.defect, r.verdict.value] for r in report.records),
    )
    print(
        verdict_line(
            "weak-verify",
            problem,
            report.verdict,
            K=section.K,
            N=section.N,
            min_deficit=report.min_deficit,
            defect=report.min_defect,
            max_residual=report.max_residual,
            witness=report.witness or "-",
        )
    )
    return EXIT_STATUS[report.verdict]
