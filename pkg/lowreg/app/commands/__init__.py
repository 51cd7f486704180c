"""
Command registry
"""
from app.commands import catalog, curvature, gradapprox, heat_check, mollify_converge, volume_check, weak_verify

COMMANDS = {
    "curvature": curvature.run,
    "weak-verify": weak_verify.run,
    "mollify-converge": mollify_converge.run,
    "gradapprox": gradapprox.run,
    "heat-check": heat_check.run,
    "volume-check": volume_check.run,
    "catalog": catalog.run,
}
