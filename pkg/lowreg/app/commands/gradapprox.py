"""
`gradapprox`: gradient-field and radial-bump approximation reports
"""
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import structlog

from app.commands.common import (
    EXIT_STATUS,
    Problem,
    as_box,
    build_problem,
    centred_bump,
    combine,
    cut_off,
    inset_box,
    verdict_line,
)
from app.core.exprparse import Expr
from app.models.field import ScalarField, VectorField
from app.schemas.config import ExperimentConfig
from app.schemas.reports import ApproxReport, RotSymReport, Verdict
from app.services.field_service import field_service
from app.services.gradapprox_service import gradapprox_service
from app.services.mollify_service import is_monotone
from app.utils.csv_writer import write_csv

logger = structlog.get_logger()

APPROX_HEADER = ["epsilon", "delta", "q", "err_w11", "w11_ratio", "err_linf", "max_grad_h", "grad_h_eps", "max_sup_f"]
ROTSYM_HEADER = [
    "epsilon", "bumps", "rounds", "predicted_rounds", "overlap_constant", "residual_max", "residual_min", "fine_bumps",
    "fallback_used",
]


def default_field(n: int) -> List[str]:
    """Rotation in the (x1, x2) plane; the unit field in one dimension"""
    if n == 1:
        return ["1"]
    return ["x2", "-x1"] + ["0"] * (n - 2)


def field_of(problem: Problem) -> VectorField:
    """The configured field cut off to its support box"""
    section = problem.config.gradapprox
    sources = section.field or default_field(problem.dimension)
    box = as_box(section.support) or inset_box(problem.grid, 0.35)
    provider: Tuple[Expr, ...] = tuple(problem.parse(src) for src in sources)
    return field_service.sample_field(cut_off(provider, box), problem.grid, name="X", compact=True)


def halving_ratios(reports: List[ApproxReport]) -> List[Optional[float]]:
    """W^{1,1} error ratio per halving of epsilon between consecutive scales"""
    ordered = sorted(reports, key=lambda r: r.epsilon, reverse=True)
    ratios: List[Optional[float]] = [None]
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.err_w11 <= 0 or cur.err_w11 <= 0:
            ratios.append(None)
            continue
        ratios.append((prev.err_w11 / cur.err_w11) ** (math.log(2.0) / math.log(prev.epsilon / cur.epsilon)))
    return ratios


def gradient_drift(reports: List[ApproxReport]) -> float:
    """Largest relative deviation of sup|grad h_p| * eps from its sweep mean"""
    scaled = [r.max_grad_h * r.epsilon for r in reports]
    mean = sum(scaled) / len(scaled)
    if mean <= 0:
        return 0.0
    return max(abs(v - mean) for v in scaled) / mean


def approx_verdict(
    reports: List[ApproxReport],
    band: Sequence[float] = (1.6, 4.4),
    drift: float = 0.3,
) -> Verdict:
    ordered = sorted(reports, key=lambda r: r.epsilon, reverse=True)
    if any(r.q > r.q_bound or not r.buckets_disjoint for r in ordered):
        return Verdict.FAIL
    if not is_monotone([r.err_w11 for r in ordered]):
        return Verdict.FAIL
    ratios = [r for r in halving_ratios(ordered) if r is not None]
    if any(not band[0] <= r <= band[1] for r in ratios):
        logger.info("Error ratio outside band", ratios=ratios, band=list(band))
        return Verdict.FAIL
    if gradient_drift(ordered) > drift:
        logger.info("Scaled gradient drifted", drift=gradient_drift(ordered), allowed=drift)
        return Verdict.FAIL
    return Verdict.PASS


def rotsym_verdict(report: RotSymReport) -> Verdict:
    if report.fallback_used:
        return Verdict.FAIL
    if report.residual_min < -1e-12 or report.residual_max > report.epsilon:
        return Verdict.FAIL
    return Verdict.PASS


def run(config: ExperimentConfig, out_dir: Path) -> int:
    section = config.gradapprox
    problem = build_problem(config, out_dir, "analytic")
    X = field_of(problem)

    epsilons = sorted(section.epsilons, reverse=True)
    constant = section.delta_constant
    if constant is None:
        constant = gradapprox_service.sweep_constant(X, epsilons)
    reports = [gradapprox_service.compv_approximate(X, epsilon, constant).report for epsilon in epsilons]
    ratios = halving_ratios(reports)
    write_csv(
        problem.output("approx.csv"),
        APPROX_HEADER,
        (
            [r.epsilon, r.delta, r.q, r.err_w11, ratio, r.err_linf, r.max_grad_h, r.max_grad_h * r.epsilon, r.max_sup_f]
            for r, ratio in zip(reports, ratios)
        ),
    )
    verdicts = [approx_verdict(reports, section.ratio_band, section.grad_drift)]

    phi: ScalarField
    if section.phi is not None:
        phi = problem.scalar(section.phi, "phi", compact=True)
    else:
        phi = field_service.sample_field(centred_bump(problem.grid), problem.grid, name="phi", compact=True)
    rotsym = gradapprox_service.rotsym_approximate(phi, section.tolerance, section.radius).report
    write_csv(
        problem.output("rotsym.csv"),
        ROTSYM_HEADER,
        [[
            rotsym.epsilon, rotsym.bumps, rotsym.rounds, rotsym.predicted_rounds,
            rotsym.overlap_constant, rotsym.residual_max, rotsym.residual_min, rotsym.fine_bumps,
            rotsym.fallback_used,
        ]],
    )
    verdicts.append(rotsym_verdict(rotsym))

    verdict = combine(verdicts)
    final = reports[-1]
    logger.info(
        "Approximation reports written",
        delta_constant=constant,
        pieces=[r.q for r in reports],
        ratios=ratios,
        bumps=rotsym.bumps,
    )
    print(
        verdict_line(
            "gradapprox",
            problem,
            verdict,
            epsilon=final.epsilon,
            err_w11=final.err_w11,
            q=final.q,
            q_bound=final.q_bound,
            rotsym_residual=rotsym.residual_max,
            tolerance=rotsym.epsilon,
            fallback=rotsym.fallback_used,
        )
    )
    return EXIT_STATUS[verdict]
