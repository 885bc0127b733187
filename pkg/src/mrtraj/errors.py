class ConfigurationError(ValueError):
    """A parameter set that fails one of the planner's feasibility gates."""


class PlanningError(RuntimeError):
    """A pipeline stage could not produce a result.

    ``stage`` names the failing stage ("mapf", "corridor", "optimization",
    "verification") and ``detail`` carries stage specific diagnostics.
    """

    def __init__(self, stage: str, message: str, detail=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = detail
