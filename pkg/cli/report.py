from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import json
import logging
import math
import sys

import numpy as np
import scipy

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
LAB_VERSION = "0.1.0"


def package_versions() -> Dict[str, str]:
    return {"hf_lab": LAB_VERSION, "numpy": np.__version__, "scipy": scipy.__version__}


def to_jsonable(value: Any) -> Any:
    """Plain JSON types from numpy scalars/arrays, tuples, enums and objects with to_dict"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, Enum):
        return value.value
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    return value


def energy_entry(value: float, standard_units: bool = False) -> Dict[str, float]:
    """Energy in the -Laplacian convention, plus the doubled standard value on request"""
    entry = {"paper": float(value)}
    if standard_units:
        entry["standard"] = 2.0 * float(value)
    return entry


@dataclass
class RunReport:
    command: str
    input: Dict[str, Any]
    results: Dict[str, Any]
    seeds: Dict[str, Any] = field(default_factory=dict)
    exit_code: int = 0
    schema: str = SCHEMA_VERSION
    versions: Dict[str, str] = field(default_factory=package_versions)

    def to_dict(self) -> Dict[str, Any]:
        """Convert report to dictionary for serialization"""
        return {
            "schema": self.schema,
            "command": self.command,
            "input": self.input,
            "results": self.results,
            "seeds": self.seeds,
            "exit_code": self.exit_code,
            "versions": self.versions,
        }

    def to_json(self) -> str:
        """Sorted keys, shortest round-trip float repr"""
        return json.dumps(to_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def write(self, path: Optional[Union[str, Path]] = None):
        text = self.to_json()
        if path is None:
            sys.stdout.write(text)
            sys.stdout.flush()
            return
        path = Path(path)
        path.write_text(text)
        logger.info(f"Wrote {self.command} report to {path}")


def compare_to_golden(actual: Any, golden: Any, rtol: float = 1e-8, atol: float = 1e-10,
                      path: str = "") -> List[str]:
    """Mismatches of actual against the fields a golden report pins down.

    Keys absent from the golden are not compared, so a golden may hold just the
    stable numbers of a run. Numbers compare with |a - g| <= atol + rtol |g|.
    """
    actual, golden = to_jsonable(actual), to_jsonable(golden)
    where = path or "<root>"
    if isinstance(golden, dict):
        if not isinstance(actual, dict):
            return [f"{where}: expected an object"]
        mismatches = []
        for key in sorted(golden):
            if key == "versions":
                continue
            child = f"{path}.{key}" if path else key
            if key not in actual:
                mismatches.append(f"{child}: missing")
                continue
            mismatches.extend(compare_to_golden(actual[key], golden[key], rtol, atol, child))
        return mismatches
    if isinstance(golden, list):
        if not isinstance(actual, list) or len(actual) != len(golden):
            return [f"{where}: expected a list of length {len(golden)}"]
        mismatches = []
        for i, (a, g) in enumerate(zip(actual, golden)):
            mismatches.extend(compare_to_golden(a, g, rtol, atol, f"{path}[{i}]"))
        return mismatches
    if isinstance(golden, bool) or not isinstance(golden, (int, float)):
        return [] if actual == golden else [f"{where}: {actual!r} != {golden!r}"]
    if isinstance(actual, bool) or not isinstance(actual, (int, float)):
        return [f"{where}: expected a number, got {actual!r}"]
    if math.isinf(golden) or math.isnan(golden):
        same = actual == golden or (math.isnan(golden) and math.isnan(actual))
        return [] if same else [f"{where}: {actual!r} != {golden!r}"]
    if abs(actual - golden) > atol + rtol * abs(golden):
        return [f"{where}: {actual!r} differs from {golden!r}"]
    return []


def load_golden(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)
