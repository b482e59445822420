"""File formats.

This module reads and writes the dataset CSV with its optional covariance sidecar, the
claims JSON file, plan CSVs and experiment result tables.
"""

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..models.claims import (
    Claim,
    ClaimSystem,
    Direction,
    LinearClaim,
    ThresholdClaim,
    WindowAggregateClaim,
    disjoint_window_claims,
    sensibility_exp_decay,
    window_distance,
    window_perturbations,
)
from ..models.distributions import (
    Dataset,
    DiscreteDist,
    Dist,
    NormalSpec,
    UncertainObject,
    require_valid,
)
from ..models.plan import CleaningPlan
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

DATASET_COLUMNS = ["id", "current_value", "cost", "dist"]
COVARIANCE_COLUMNS = ["i", "j", "cov"]
DEFAULT_DECAY_RATE = 1.5

_NORMAL = re.compile(r"^normal\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$")
_DISCRETE = re.compile(r"^discrete\((.*)\)$")


def _number(token: str, what: str, row: int, path: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{what} '{token}' is not a number", row, path) from None


def parse_dist(token: str, row: int = 0, path: str = "") -> Dist:
    """Parse ``normal(mu,sigma)`` or ``discrete(v1:p1|v2:p2|...)``."""
    token = token.strip()
    match = _NORMAL.match(token)
    if match:
        return NormalSpec(
            mean=_number(match.group(1), "mean", row, path),
            stddev=_number(match.group(2), "stddev", row, path),
        )
    match = _DISCRETE.match(token)
    if not match or not match.group(1).strip():
        raise ParseError(f"malformed distribution '{token}'", row, path)
    pairs = []
    for atom in match.group(1).split("|"):
        value, sep, prob = atom.partition(":")
        if not sep:
            raise ParseError(f"support atom '{atom}' is not value:probability", row, path)
        pairs.append(
            (_number(value, "support value", row, path), _number(prob, "probability", row, path))
        )
    return DiscreteDist.from_pairs(pairs)


def format_dist(dist: Dist) -> str:
    if isinstance(dist, NormalSpec):
        return f"normal({dist.mean!r},{dist.stddev!r})"
    return "discrete(" + "|".join(f"{v!r}:{p!r}" for v, p in dist.support) + ")"


def read_dataset(path: PathLike, covariance_path: Optional[PathLike] = None) -> Dataset:
    """Read and validate a dataset CSV.

    Args:
        path: Dataset CSV with header ``id,current_value,cost,dist``
        covariance_path: Optional ``i,j,cov`` sidecar

    Returns:
        Validated Dataset

    Raises:
        ParseError: With the 1-based file row of a malformed entry
        DatasetValidationError: Listing every invariant violation
    """
    path = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(str(e), path=path) from e
    if list(frame.columns) != DATASET_COLUMNS:
        raise ParseError(f"header must be {','.join(DATASET_COLUMNS)}", 1, path)

    objects = []
    for index, record in frame.iterrows():
        row = int(index) + 2
        if not record["id"]:
            raise ParseError("empty id", row, path)
        objects.append(
            UncertainObject(
                id=record["id"],
                current_value=_number(record["current_value"], "current value", row, path),
                cost=_number(record["cost"], "cost", row, path),
                dist=parse_dist(record["dist"], row, path),
            )
        )
    dataset = Dataset(tuple(objects))
    if covariance_path is not None:
        dataset = dataset.with_covariance(read_covariance(covariance_path, dataset))
    log.debug(f"Read {len(dataset)} objects from {path}")
    return require_valid(dataset)


def _position(dataset: Dataset, token: str, row: int, path: str) -> int:
    if token in dataset.ids:
        return dataset.index_of(token)
    try:
        position = int(token)
    except ValueError:
        raise ParseError(f"unknown object '{token}'", row, path) from None
    if not 0 <= position < len(dataset):
        raise ParseError(f"position {position} out of range", row, path)
    return position


def read_covariance(path: PathLike, dataset: Dataset) -> np.ndarray:
    """Symmetric covariance from ``i,j,cov`` rows; missing diagonals default to the variances."""
    path = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(str(e), path=path) from e
    if list(frame.columns) != COVARIANCE_COLUMNS:
        raise ParseError(f"header must be {','.join(COVARIANCE_COLUMNS)}", 1, path)
    covariance = np.diag(dataset.variances).astype(float)
    for index, record in frame.iterrows():
        row = int(index) + 2
        i = _position(dataset, record["i"], row, path)
        j = _position(dataset, record["j"], row, path)
        covariance[i, j] = covariance[j, i] = _number(record["cov"], "covariance", row, path)
    return covariance


def write_dataset(
    dataset: Dataset, path: PathLike, covariance_path: Optional[PathLike] = None
) -> None:
    """Write a dataset CSV whose numbers read back bit-exactly."""
    frame = pd.DataFrame(
        {
            "id": list(dataset.ids),
            "current_value": [repr(float(obj.current_value)) for obj in dataset.objects],
            "cost": [repr(float(obj.cost)) for obj in dataset.objects],
            "dist": [format_dist(obj.dist) for obj in dataset.objects],
        },
        columns=DATASET_COLUMNS,
    )
    frame.to_csv(path, index=False)
    if covariance_path is not None and dataset.covariance is not None:
        rows = [
            (dataset.ids[i], dataset.ids[j], repr(float(dataset.covariance[i, j])))
            for i in range(len(dataset))
            for j in range(i, len(dataset))
            if dataset.covariance[i, j] != 0.0
        ]
        pd.DataFrame(rows, columns=COVARIANCE_COLUMNS).to_csv(covariance_path, index=False)


@dataclass(frozen=True)
class ClaimsFile:
    """Parsed claims file."""

    system: ClaimSystem
    tau: Optional[float] = None
    threshold: Optional[float] = None


def _claim(spec: Mapping[str, Any], dataset: Dataset, threshold: Optional[float]) -> Claim:
    kind = spec.get("type")
    try:
        if kind == "window":
            return WindowAggregateClaim(int(spec["left"]), int(spec["right"]), int(spec["w"]))
        if kind == "linear":
            weights = [float(w) for w in spec["weights"]]
            if len(weights) != len(dataset):
                raise ValidationError(
                    f"linear claim has {len(weights)} weights for {len(dataset)} objects"
                )
            return LinearClaim(tuple(weights), float(spec.get("offset", 0.0)))
        if kind == "threshold":
            gamma = spec.get("gamma", threshold)
            if gamma is None:
                raise ValidationError("threshold claim has no gamma and no top-level threshold")
            members = tuple(dataset.index_of(ref) for ref in spec["ids"])
            direction = Direction(spec.get("direction", Direction.BELOW.value))
            return ThresholdClaim(members, float(gamma), direction)
    except KeyError as e:
        raise ValidationError(f"{kind} claim: missing or unknown {e}") from None
    except (TypeError, ValueError) as e:
        raise ValidationError(f"malformed {kind} claim: {e}") from None
    raise ValidationError(f"unknown claim type '{kind}'")


def _perturbations(
    spec: Any, original: Claim, dataset: Dataset, threshold: Optional[float]
) -> List[Claim]:
    if isinstance(spec, list):
        return [_claim(item, dataset, threshold) for item in spec]
    mode = spec.get("mode")
    if mode == "window":
        if not isinstance(original, WindowAggregateClaim):
            raise ValidationError("window perturbations need a window original")
        return list(
            window_perturbations(
                original,
                len(dataset),
                spec.get("count"),
                bool(spec.get("include_original", False)),
            )
        )
    raise ValidationError(f"unknown perturbation mode '{mode}'")


def _sensibilities(spec: Optional[Mapping[str, Any]], original: Claim, claims: List[Claim]):
    if spec is None:
        return None
    mode = spec.get("mode")
    if mode == "explicit":
        return [float(v) for v in spec["values"]]
    if mode == "exp":
        if not isinstance(original, WindowAggregateClaim) or not all(
            isinstance(q, WindowAggregateClaim) for q in claims
        ):
            raise ValidationError("exponential sensibilities need window claims")
        distances = [window_distance(original, q) for q in claims]
        return sensibility_exp_decay(distances, float(spec.get("rate", DEFAULT_DECAY_RATE)))
    raise ValidationError(f"unknown sensibility mode '{mode}'")


def parse_claims(data: Mapping[str, Any], dataset: Dataset) -> ClaimsFile:
    """Build a claim system from a decoded claims document.

    Raises:
        ValidationError: If the document is malformed
    """
    if "original" not in data:
        raise ValidationError("claims file has no original claim")
    threshold = data.get("threshold")
    threshold = float(threshold) if threshold is not None else None
    tau = data.get("tau")
    if tau is None:
        log.warning("Claims file sets no tau; using tau = 0")
    direction = Direction(data["direction"]) if "direction" in data else None

    perturbation_spec = data.get("perturbations", [])
    if isinstance(perturbation_spec, dict) and perturbation_spec.get("mode") == "disjoint":
        if threshold is None:
            raise ValidationError("disjoint window claims need a top-level threshold")
        system = disjoint_window_claims(
            len(dataset),
            int(perturbation_spec["window"]),
            threshold,
            direction or Direction.BELOW,
        )
        return ClaimsFile(system, float(tau) if tau is not None else None, threshold)

    original = _claim(data["original"], dataset, threshold)
    claims = _perturbations(perturbation_spec, original, dataset, threshold)
    system = ClaimSystem.build(
        original,
        claims,
        _sensibilities(data.get("sensibility"), original, claims),
        direction,
    )
    if data.get("delta", "subtract") != system.delta:
        raise ValidationError(f"unsupported relative strength '{data['delta']}'")
    return ClaimsFile(system, float(tau) if tau is not None else None, threshold)


def read_claims(path: PathLike, dataset: Dataset) -> ClaimsFile:
    """Read a claims JSON file against the dataset it refers to."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", e.lineno, str(path)) from e
    except OSError as e:
        raise ParseError(str(e), path=str(path)) from e
    if not isinstance(data, dict):
        raise ParseError("claims file must hold a JSON object", path=str(path))
    return parse_claims(data, dataset)


def write_plan(plan: CleaningPlan, path: PathLike) -> None:
    """Write plan rows in cleaning order followed by the footer line."""
    with open(path, "w", newline="") as f:
        plan.to_frame().to_csv(f, index=False, float_format="%.17g")
        f.write(plan.footer() + "\n")


def read_plan(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a plan CSV; returns the rows and the footer fields."""
    footer: Dict[str, str] = {}
    with open(path, "r") as f:
        for line in f:
            if line.startswith("#"):
                footer.update(
                    field.split("=", 1) for field in line[1:].split() if "=" in field
                )
    frame = pd.read_csv(path, comment="#", dtype={"id": str})
    return frame, footer


def write_table(frame: pd.DataFrame, path: PathLike) -> None:
    frame.to_csv(path, index=False)
    log.info(f"Wrote {len(frame)} rows to {path}")
