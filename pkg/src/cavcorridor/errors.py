"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid scenario or corridor configuration.

    Carries the full list of validation messages so callers can report
    every problem at once instead of failing on the first.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class RouteError(ValueError):
    """A route does not traverse the zone it was queried against."""


class ScheduleInfeasibleError(Exception):
    """No conflict-zone entry time exists inside the attainable window."""

    def __init__(self, message, vehicle_id=None, zone_id=None):
        super().__init__(message)
        self.vehicle_id = vehicle_id
        self.zone_id = zone_id


class TrajectorySolverError(Exception):
    """The constrained boundary-value solver failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
