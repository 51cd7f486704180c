"""
`mollify-converge`: Ricci mollification sweep and the Friedrichs experiments
"""
import math
from pathlib import Path
from typing import Callable, List

import structlog

from app.commands.common import EXIT_STATUS, Problem, as_box, build_problem, combine, substitute_eps, verdict_line
from app.models.field import ScalarField
from app.models.grid import Box
from app.schemas.config import ExperimentConfig
from app.schemas.reports import ConvergenceReport, Verdict
from app.services.mollify_service import mollify_service
from app.utils.csv_writer import write_csv

logger = structlog.get_logger()


def default_region(problem: Problem, epsilons: List[float]) -> Box:
    """Chart box inset by the widest stencil plus three cells"""
    grid = problem.grid
    reach = max(epsilons)
    lo = tuple(a + (math.ceil(reach / h - 1e-9) + 3) * h for a, h in zip(grid.lower, grid.spacing))
    hi = tuple(b - (math.ceil(reach / h - 1e-9) + 3) * h for b, h in zip(grid.upper, grid.spacing))
    return lo, hi


def eps_family(problem: Problem, source: str) -> Callable[[float], ScalarField]:
    """Sampler of the smooth family a_eps written with the token ``eps``"""

    def sample(epsilon: float) -> ScalarField:
        return problem.scalar(substitute_eps(source, epsilon), f"a_{epsilon:g}")

    return sample


def write_report(problem: Problem, filename: str, report: ConvergenceReport) -> Path:
    """``epsilon,value[,value_w1p]`` rows and a ``slope,<fitted>`` footer"""
    sobolev = any(row.value_w1p is not None for row in report.rows)
    header = ["epsilon", "value"] + (["value_w1p"] if sobolev else [])
    rows = [[row.epsilon, row.value] + ([row.value_w1p] if sobolev else []) for row in report.rows]
    rows.append(["slope", report.slope])
    return write_csv(problem.output(filename), header, rows)


def report_verdict(report: ConvergenceReport) -> Verdict:
    if not report.monotone or report.rate_violation:
        return Verdict.FAIL
    return Verdict.PASS


def run(config: ExperimentConfig, out_dir: Path) -> int:
    section = config.mollify
    order = config.curvature.fd_order
    problem = build_problem(config, out_dir, "fd", order)
    epsilons = sorted(section.epsilons, reverse=True)
    region = as_box(section.region) or default_region(problem, epsilons)

    reports = {"ricci": mollify_service.ricci_mollify_convergence(problem.g, section.p, region, epsilons, order)}
    if section.f is not None:
        f = problem.scalar(section.f, "f")
        reports["decay"] = mollify_service.friedrichs_decay(f, section.p, region, epsilons, order)
        if section.a is not None:
            a = problem.scalar(section.a, "a")
            a_eps = eps_family(problem, section.a_eps) if section.a_eps is not None else None
            reports["commutator"] = mollify_service.friedrichs_commutator(
                a, f, section.p, region, epsilons, a_eps=a_eps, order=order
            )

    for name, report in reports.items():
        write_report(problem, f"{name}.csv", report)
    logger.info("Mollification sweeps written", experiments=list(reports), region=region)
    verdict = combine([report_verdict(r) for r in reports.values()])
    ricci = reports["ricci"]
    print(
        verdict_line(
            "mollify-converge",
            problem,
            verdict,
            p=section.p,
            initial=ricci.rows[0].value,
            final=ricci.rows[-1].value,
            slope=ricci.slope,
            experiments=",".join(reports),
        )
    )
    return EXIT_STATUS[verdict]
