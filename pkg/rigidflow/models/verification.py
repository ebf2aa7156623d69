from __future__ import annotations
from typing import List, Optional
import numpy as np


class CheckResult():
    """
    Class that represents the verdict on one invariant of a verification suite
    """

    COLUMNS = ["suite", "invariant", "value", "tolerance", "passed", "message"]

    def __init__(self, suite: str, invariant: str, value: float, tolerance: float, passed: Optional[bool] = None,
                 message: Optional[str] = None):
        """
        CheckResult class constructor

        Parameters
        ----------
        suite : str
            Label of the suite
        invariant : str
            Name of the checked invariant
        value : float
            Measured value, usually an error
        tolerance : float
            Accepted value
        passed : bool, optional
            Verdict, by default None (value <= tolerance)
        message : str, optional
            Failure details, by default None
        """

        self.suite = suite
        self.invariant = invariant
        self.value = float(value) if value is not None else float("nan")
        self.tolerance = float(tolerance) if tolerance is not None else float("nan")
        if passed is None:
            passed = bool(np.isfinite(self.value) and self.value <= self.tolerance)
        self.passed = bool(passed)
        self.message = message

    def row(self) -> List:
        return [self.suite, self.invariant, f"{self.value:.6e}", f"{self.tolerance:.3e}", self.passed,
                self.message if self.message is not None else ""]

    @classmethod
    def from_dict(cls, result_dict: dict) -> CheckResult:
        return cls(result_dict.get("suite"), result_dict.get("invariant"), result_dict.get("value"),
                   result_dict.get("tolerance"), result_dict.get("passed"), result_dict.get("message"))

    @staticmethod
    def to_dict(result: CheckResult) -> dict:
        return {
            "suite": result.suite,
            "invariant": result.invariant,
            "value": result.value if np.isfinite(result.value) else None,
            "tolerance": result.tolerance if np.isfinite(result.tolerance) else None,
            "passed": result.passed,
            "message": result.message,
        }
