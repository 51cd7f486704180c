"""
`volume-check`: chart-local volume growth integral
"""
from pathlib import Path

from app.commands.common import EXIT_STATUS, build_problem, verdict_line
from app.core.exceptions import ConfigValidationError
from app.schemas.config import ExperimentConfig
from app.services.weakform_service import weakform_service
from app.utils.csv_writer import write_csv


def run(config: ExperimentConfig, out_dir: Path) -> int:
    if config.volume is None:
        raise ConfigValidationError([{"field": "volume", "message": "volume-check needs a [volume] section"}])
    problem = build_problem(config, out_dir, "fd")
    vhat = problem.scalar(config.volume.vhat, "Vhat")
    report = weakform_service.volume_growth_check(problem.w, problem.g, vhat)
    write_csv(problem.output("volume.csv"), ["value", "verdict"], [[report.value, report.verdict.value]])
    print(verdict_line("volume-check", problem, report.verdict, value=report.value, bound=1.0))
    return EXIT_STATUS[report.verdict]
