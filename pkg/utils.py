import json
import logging
import math
import os
import re
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

# DP inequality checks: lhs - rhs <= TOLERANCE counts as satisfied
TOLERANCE = 1e-9
STOCHASTIC_TOLERANCE = 1e-9
AXIOM_TOLERANCE = 1e-12

EVENT_CAPACITY = 24
PRODUCT_EVENT_CAPACITY = 20
PUSHFORWARD_CAPACITY = 10 ** 7
POWERSET_CAPACITY = 16
# larger universes still load but need gigabytes for the distance matrix
POWERSET_MEMORY_HINT = 14
RECTANGLE_CAPACITY = 16
PROJECTION_CAPACITY = 16

OUTPUT_DECIMALS = 12


class SpecError(ValueError):
    """Malformed spec file, flag or constructor argument"""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class CapacityError(RuntimeError):
    """An enumeration guard was exceeded"""

    def __init__(self, what: str, size: float, limit: float, hint: str = ""):
        self.what = what
        self.size = size
        self.limit = limit
        message = f"{what} = {size} exceeds the enumeration limit {limit}"
        if hint:
            message += f"; {hint}"
        super().__init__(message)


def require_capacity(what: str, size: float, limit: float, hint: str = "") -> None:
    """Raise CapacityError when size is over limit"""
    if size > limit:
        raise CapacityError(what, size, limit, hint)
    logger.debug(f"{what} = {size} (limit {limit})")


def privacy_factor(epsilon: float) -> float:
    """e^epsilon, saturating to inf instead of raising OverflowError"""
    try:
        return math.exp(epsilon)
    except OverflowError:
        return math.inf


def scaled_mass(factor: float, probs: np.ndarray) -> np.ndarray:
    """factor * probs with 0 * inf taken as 0"""
    with np.errstate(invalid="ignore", over="ignore"):
        return np.where(probs > 0, factor * probs, 0.0)


def resolve_path(ref: str, base_dir: Optional[str] = None) -> str:
    """Resolve a spec reference relative to the file that mentions it"""
    if base_dir and not os.path.isabs(ref):
        return os.path.join(base_dir, ref)
    return ref


def load_json(path: str) -> Any:
    """Read a JSON spec file, turning parse failures into SpecError with a line number"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as e:
        raise SpecError(e.msg, f"{path}:{e.lineno}:{e.colno}") from e
    except OSError as e:
        raise SpecError(f"cannot read file ({e.strerror})", path) from e


def require_field(spec: Dict[str, Any], field: str, location: str) -> Any:
    """Fetch a mandatory key from a spec mapping"""
    if not isinstance(spec, dict):
        raise SpecError("expected a JSON object", location)
    if field not in spec:
        raise SpecError(f"missing field '{field}'", location)
    return spec[field]


def require_list(spec: Dict[str, Any], field: str, location: str, nested: bool = False) -> List[Any]:
    """Fetch a mandatory JSON array; ``nested`` also requires every item to be an array"""
    value = require_field(spec, field, location)
    path = f"{location}.{field}"
    if not isinstance(value, list):
        raise SpecError(f"expected a JSON array, got {type(value).__name__}", path)
    if nested:
        for i, item in enumerate(value):
            if not isinstance(item, list):
                raise SpecError(f"expected a JSON array, got {type(item).__name__}", f"{path}[{i}]")
    return value


def read_label_column(path: str) -> List[str]:
    """Read a single-column CSV of labels (one record per line, empty field allowed)"""
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                            skip_blank_lines=False)
    except pd.errors.EmptyDataError as e:
        raise SpecError("database file is empty", path) from e
    except OSError as e:
        raise SpecError(f"cannot read file ({e.strerror})", path) from e
    if frame.shape[1] != 1:
        raise SpecError(f"expected a single column, found {frame.shape[1]}", path)
    return [value.strip() for value in frame.iloc[:, 0].tolist()]


def read_functional_csv(path: str) -> Tuple[List[float], np.ndarray]:
    """Read grid times (first row) and one record per following row"""
    try:
        frame = pd.read_csv(path, header=None)
    except pd.errors.EmptyDataError as e:
        raise SpecError("functional database file is empty", path) from e
    except OSError as e:
        raise SpecError(f"cannot read file ({e.strerror})", path) from e
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise SpecError(f"non-numeric entry ({e})", path) from e
    if values.shape[0] < 2:
        raise SpecError("expected a grid row followed by at least one record", path)
    if np.isnan(values).any():
        row = int(np.argwhere(np.isnan(values))[0][0]) + 1
        raise SpecError("missing value", f"{path}:{row}")
    return values[0].tolist(), values[1:]


def parse_indices(text: str) -> List[int]:
    """Parse a projection index list such as '1,3' or '1 3'"""
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    try:
        return [int(p) for p in parts]
    except ValueError as e:
        raise SpecError(f"invalid index list '{text}'", "--indices") from e


def round_floats(obj: Any, decimals: int = OUTPUT_DECIMALS) -> Any:
    """Recursively round floats so serialized reports are stable"""
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isfinite(value):
            return round(value, decimals) + 0.0
        return value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: round_floats(v, decimals) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, decimals) for v in obj]
    return obj


def to_json(obj: Dict[str, Any]) -> str:
    """Serialize a report dictionary with stable key order"""
    return json.dumps(round_floats(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def format_report_text(report: Dict[str, Any], indent: int = 0) -> str:
    """Format a report dictionary for terminal display"""
    lines = []
    pad = "  " * indent
    for key, value in report.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.append(format_report_text(value, indent + 1))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"{pad}{key}:")
            for item in value:
                lines.append(f"{pad}  - " + ", ".join(f"{k}={_short(v)}" for k, v in item.items()))
        else:
            lines.append(f"{pad}{key}: {_short(value)}")
    return "\n".join(lines)


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    return str(value)


def bitmask_members(mask: int) -> List[int]:
    """Indices of the set bits of mask, increasing"""
    members = []
    index = 0
    while mask:
        if mask & 1:
            members.append(index)
        mask >>= 1
        index += 1
    return members


def members_to_mask(members: Sequence[int]) -> int:
    """Inverse of bitmask_members"""
    mask = 0
    for index in members:
        mask |= 1 << int(index)
    return mask
