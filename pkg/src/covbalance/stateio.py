"""File formats: covariate/assignment CSVs and the online state document.

Covariate CSV: UTF-8, header row required, first column ``unit_id`` (string),
remaining columns numeric covariates with '.' decimals.

Assignment CSV: columns ``unit_id,group,treatment``.

State document: versioned JSON with a sha256 checksum over its canonical
payload. Writes go to a temporary file in the target directory followed by an
atomic rename, so a killed process never leaves a half-written state behind.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .bandwidth import BandwidthState, CovarianceStats
from .data import CovariateSet
from .errors import DataFormatError, StateError
from .ga import GaConfig
from .kernel import compute_gram
from .online import OnlineState
from .pca import PcaState, PcaTarget, transform

STATE_FORMAT = "covbalance-online-state"
STATE_SCHEMA_VERSION = 1

ASSIGNMENT_HEADER = ("unit_id", "group", "treatment")


def read_covariates_csv(path: str | Path) -> tuple[CovariateSet, tuple[str, ...]]:
    """Parse a covariate CSV; returns the table and the covariate column names."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2:
            raise DataFormatError(
                f"{path}: header must name a unit_id column and at least one covariate"
            )
        names = tuple(name.strip() for name in header[1:])
        ids: list[str] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {line_no} has {len(row)} fields, expected {len(header)}"
                )
            ids.append(row[0])
            parsed = []
            for col_no, cell in enumerate(row[1:], start=2):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {line_no}, column {col_no} "
                        f"({header[col_no - 1]!r}): {cell!r} is not numeric"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return CovariateSet(tuple(ids), np.array(rows, dtype=np.float64)), names


def write_covariates_csv(
    path: str | Path, covariates: CovariateSet, names: tuple[str, ...] | None = None
) -> None:
    names = names or tuple(f"z{j + 1}" for j in range(covariates.p))
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["unit_id", *names])
        for uid, row in zip(covariates.unit_ids, covariates.values):
            writer.writerow([uid, *(repr(float(v)) for v in row)])


def write_assignments_csv(
    path: str | Path,
    rows: list[tuple[str, int, int]],
    append: bool = False,
) -> None:
    """Write (unit_id, group, treatment) rows; ``append`` skips the header."""
    mode = "a" if append and Path(path).exists() else "w"
    with open(path, mode, newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        if mode == "w":
            writer.writerow(ASSIGNMENT_HEADER)
        writer.writerows(rows)


def read_assignments_csv(path: str | Path) -> list[tuple[str, int, int]]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != ASSIGNMENT_HEADER:
            raise DataFormatError(
                f"{path}: expected header {','.join(ASSIGNMENT_HEADER)}"
            )
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append((row[0], int(row[1]), int(row[2])))
            except (ValueError, IndexError):
                raise DataFormatError(f"{path}: malformed row {line_no}: {row!r}") from None
    return out


def _matrix(values: np.ndarray) -> list:
    return np.asarray(values, dtype=np.float64).tolist()


def _checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def state_to_document(state: OnlineState) -> dict:
    """Self-describing JSON document capturing everything but the gram
    (recomputed on load from the stored covariates and bandwidth)."""
    bandwidth = state.bandwidth
    stats = bandwidth.stats
    payload = {
        "group_count": state.group_count,
        "balance": state.balance,
        "freeze_bandwidth": state.freeze_bandwidth,
        "weight_override": state.weight_override,
        "group_to_treatment": {str(k): v for k, v in state.group_to_treatment.items()},
        "units": {
            "ids": list(state.covariates.unit_ids),
            "values": _matrix(state.covariates.values),
            "groups": [int(g) for g in state.groups],
        },
        "config": {
            "population_size": state.config.population_size,
            "elite_count": state.config.elite_count,
            "max_generations": state.config.max_generations,
            "seed": state.config.seed,
            "group_sizes": list(state.config.group_sizes)
            if state.config.group_sizes
            else None,
            "stall_window": state.config.stall_window,
        },
        "bandwidth": {
            "inverse": _matrix(bandwidth.inverse),
            "log_det_neg_half": bandwidth.log_det_neg_half,
            "n": bandwidth.n,
            "shrinkage_weight": bandwidth.shrinkage_weight,
            "stats": None
            if stats is None
            else {
                "count": stats.count,
                "sum_x": _matrix(stats.sum_x),
                "sum_xx": _matrix(stats.sum_xx),
                "quartic": stats.quartic,
                "quartic_vec": _matrix(stats.quartic_vec),
            },
        },
        "pca": None
        if state.pca is None
        else {
            "mean": _matrix(state.pca.mean),
            "basis": _matrix(state.pca.basis),
            "variances": _matrix(state.pca.variances),
            "n_seen": state.pca.n_seen,
            "target": {"mode": state.pca.target.mode, "value": state.pca.target.value},
            "total_variance": state.pca.total_variance,
            "max_rank": state.pca.max_rank,
        },
        "rng": state.rng.bit_generator.state,
    }
    return {
        "format": STATE_FORMAT,
        "schema_version": STATE_SCHEMA_VERSION,
        "checksum": _checksum(payload),
        "payload": payload,
    }


def state_from_document(document: dict) -> OnlineState:
    if not isinstance(document, dict) or document.get("format") != STATE_FORMAT:
        raise StateError(f"not a {STATE_FORMAT} document")
    version = document.get("schema_version")
    if version != STATE_SCHEMA_VERSION:
        raise StateError(
            f"state schema version {version} is not supported "
            f"(this build reads version {STATE_SCHEMA_VERSION})"
        )
    payload = document.get("payload")
    if not isinstance(payload, dict):
        raise StateError("state document has no payload")
    if _checksum(payload) != document.get("checksum"):
        raise StateError(
            "state checksum mismatch: the file was modified or truncated "
            "after it was written"
        )
    units = payload["units"]
    covariates = CovariateSet(
        tuple(units["ids"]), np.array(units["values"], dtype=np.float64)
    )
    stats_doc = payload["bandwidth"]["stats"]
    stats = (
        None
        if stats_doc is None
        else CovarianceStats(
            count=stats_doc["count"],
            sum_x=np.array(stats_doc["sum_x"]),
            sum_xx=np.array(stats_doc["sum_xx"]),
            quartic=stats_doc["quartic"],
            quartic_vec=np.array(stats_doc["quartic_vec"]),
        )
    )
    bandwidth = BandwidthState(
        inverse=np.array(payload["bandwidth"]["inverse"], dtype=np.float64),
        log_det_neg_half=payload["bandwidth"]["log_det_neg_half"],
        n=payload["bandwidth"]["n"],
        shrinkage_weight=payload["bandwidth"]["shrinkage_weight"],
        stats=stats,
        weight_override=payload["weight_override"],
    )
    pca_doc = payload["pca"]
    pca = (
        None
        if pca_doc is None
        else PcaState(
            mean=np.array(pca_doc["mean"], dtype=np.float64),
            basis=np.array(pca_doc["basis"], dtype=np.float64),
            variances=np.array(pca_doc["variances"], dtype=np.float64),
            n_seen=pca_doc["n_seen"],
            target=PcaTarget(pca_doc["target"]["mode"], pca_doc["target"]["value"]),
            total_variance=pca_doc["total_variance"],
            max_rank=pca_doc["max_rank"],
        )
    )
    config_doc = payload["config"]
    config = GaConfig(
        population_size=config_doc["population_size"],
        elite_count=config_doc["elite_count"],
        max_generations=config_doc["max_generations"],
        seed=config_doc["seed"],
        group_sizes=tuple(config_doc["group_sizes"]) if config_doc["group_sizes"] else None,
        stall_window=config_doc["stall_window"],
    )
    rng = np.random.default_rng(0)
    rng.bit_generator.state = payload["rng"]
    coords = transform(pca, covariates) if pca is not None else covariates
    gram = compute_gram(coords, bandwidth)
    return OnlineState(
        covariates=covariates,
        groups=np.array(units["groups"], dtype=np.int64),
        group_count=payload["group_count"],
        group_to_treatment={int(k): v for k, v in payload["group_to_treatment"].items()},
        bandwidth=bandwidth,
        gram=gram,
        config=config,
        rng=rng,
        pca=pca,
        freeze_bandwidth=payload["freeze_bandwidth"],
        balance=payload["balance"],
        weight_override=payload["weight_override"],
    )


def save_state(path: str | Path, state: OnlineState) -> None:
    """Serialize atomically: write a sibling temp file, then rename over."""
    path = Path(path)
    document = state_to_document(state)
    fd, tmp_name = tempfile.mkstemp(
        prefix=path.name + ".", suffix=".tmp", dir=path.parent or Path(".")
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(document, handle, indent=1)
            handle.write("\n")
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_state(path: str | Path) -> OnlineState:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise StateError(f"{path}: not valid JSON ({err})") from None
    return state_from_document(document)
