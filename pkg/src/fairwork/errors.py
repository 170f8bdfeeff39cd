"""Error hierarchy shared across the solver, audit, and CLI layers.

Every error carries a stable machine-readable code plus the field or flag at
fault, so the CLI can emit a structured object on stderr and exit 1.
"""

from __future__ import annotations

from typing import Any


class FairworkError(Exception):
    """Base domain error: a stable code, a human message, an optional field."""

    code = "error"

    def __init__(self, message: str, *, field: str | None = None, **payload: Any):
        super().__init__(message)
        self.message = message
        self.field = field
        self.payload = payload

    def to_payload(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": self.code, "message": self.message}
        if self.field is not None:
            out["field"] = self.field
        out.update(self.payload)
        return out


class ValidationFailed(FairworkError):
    """An instance failed structural validation; carries the violation list."""

    code = "validation-failed"

    def __init__(self, violations, *, field: str | None = None):
        lines = "; ".join(f"{v.code}[{v.entity}]" for v in violations)
        super().__init__(
            f"instance failed validation: {lines}",
            field=field,
            violations=[
                {"code": v.code, "entity": v.entity, "message": v.message}
                for v in violations
            ],
        )
        self.violations = list(violations)


class EqualToDemandWithZeroDemand(FairworkError):
    """equal-to-demand budgets are undefined for a buyer with zero total demand."""

    code = "equal-to-demand-with-zero-demand"


class AssumptionViolated(FairworkError):
    """No allocation gives every buyer (or buyer-period) strictly positive surplus."""

    code = "assumption-violated"


class DomainGuardViolated(FairworkError):
    """No strictly feasible interior point exists for the objective's log terms."""

    code = "domain-guard-violated"


class Infeasible(FairworkError):
    """A constraint system (frozen floors, variation band, ...) admits no solution."""

    code = "infeasible"


class NotConverged(FairworkError):
    """An operation needed a converged solve but the result did not converge."""

    code = "not-converged"


class BadGamma(FairworkError):
    """Smoothness penalty weight is negative, non-finite, or used without a penalty."""

    code = "bad-gamma"


class MissingPrices(FairworkError):
    """A price-based audit was invoked on a report that carries no price system."""

    code = "missing-prices"


class InstanceMismatch(FairworkError):
    """Two reports being compared do not describe the same market shape."""

    code = "instance-mismatch"


class UnsatisfiableConfig(FairworkError):
    """A generator configuration cannot produce a valid instance."""

    code = "unsatisfiable-config"


class ShapeMismatch(FairworkError):
    """An allocation or demand tensor does not match the instance dimensions."""

    code = "shape-mismatch"
