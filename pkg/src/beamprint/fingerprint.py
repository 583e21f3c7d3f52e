"""Fingerprint dataset generation and persistence.

One record per grid location: the full (cell, beam) RSRP sweep sorted
strongest first, the serving cell (network-wide argmax), and whether the
serving site is line of sight. Records are kept in column form (numpy
arrays) so the full default scenario stays cheap to slice; the record
view is materialised on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DatasetParseError
from .radio import beam_gain_db, path_loss_db, sector_frame_offsets, shadowing_db
from .scenario import Scenario, UE_HEIGHT_M, grid_xy, los_mask

_FORMAT_NAME = "beamprint-dataset"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FingerprintRecord:
    """Measurement snapshot at one location.

    measurements holds (cell_id, beam_id, rsrp_dbm) triples sorted by
    descending RSRP; ties fall back to ascending (cell_id, beam_id).
    """

    x: float
    y: float
    serving_cell_id: int
    los_to_serving: bool
    measurements: Tuple[Tuple[int, int, float], ...]


class Dataset:
    """Column-oriented container of fingerprint records."""

    def __init__(
        self,
        xs: np.ndarray,
        ys: np.ndarray,
        serving: np.ndarray,
        los: np.ndarray,
        meas_cells: np.ndarray,
        meas_beams: np.ndarray,
        meas_rsrp: np.ndarray,
        cells: Sequence[int],
        n_beams: int,
        scenario_hash: str,
        seed: int,
    ):
        n = len(xs)
        if not (len(ys) == len(serving) == len(los) == n):
            raise DataError("dataset columns disagree on record count")
        if meas_rsrp.shape != meas_cells.shape or meas_rsrp.shape != meas_beams.shape:
            raise DataError("measurement columns disagree on shape")
        if n and meas_rsrp.shape[0] != n:
            raise DataError("measurement rows disagree with record count")
        self.xs = xs
        self.ys = ys
        self.serving = serving
        self.los = los
        self.meas_cells = meas_cells
        self.meas_beams = meas_beams
        self.meas_rsrp = meas_rsrp
        self.cells = tuple(int(c) for c in cells)
        self.n_beams = int(n_beams)
        self.scenario_hash = scenario_hash
        self.seed = int(seed)

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def n_measurements(self) -> int:
        return self.meas_rsrp.shape[1] if len(self) else len(self.cells) * self.n_beams

    def record(self, i: int) -> FingerprintRecord:
        meas = tuple(
            (int(c), int(b), float(r))
            for c, b, r in zip(self.meas_cells[i], self.meas_beams[i], self.meas_rsrp[i])
        )
        return FingerprintRecord(
            x=float(self.xs[i]),
            y=float(self.ys[i]),
            serving_cell_id=int(self.serving[i]),
            los_to_serving=bool(self.los[i]),
            measurements=meas,
        )

    def __iter__(self) -> Iterator[FingerprintRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @property
    def records(self) -> List[FingerprintRecord]:
        # materialises every record; fine for small datasets, avoid on
        # the full default scenario (use the column arrays instead)
        return [self.record(i) for i in range(len(self))]

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(
            xs=self.xs[index],
            ys=self.ys[index],
            serving=self.serving[index],
            los=self.los[index],
            meas_cells=self.meas_cells[index],
            meas_beams=self.meas_beams[index],
            meas_rsrp=self.meas_rsrp[index],
            cells=self.cells,
            n_beams=self.n_beams,
            scenario_hash=self.scenario_hash,
            seed=self.seed,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.scenario_hash == other.scenario_hash
            and self.seed == other.seed
            and self.cells == other.cells
            and self.n_beams == other.n_beams
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.ys, other.ys)
            and np.array_equal(self.serving, other.serving)
            and np.array_equal(self.los, other.los)
            and np.array_equal(self.meas_cells, other.meas_cells)
            and np.array_equal(self.meas_beams, other.meas_beams)
            and np.array_equal(self.meas_rsrp, other.meas_rsrp)
        )


def build_dataset(scenario: Scenario, seed: Optional[int] = None) -> Dataset:
    """Sweep every grid location and assemble the fingerprint dataset.

    Deterministic given (scenario, seed); the seed only feeds the
    optional shadowing term and defaults to the scenario rng_seed.
    """
    if seed is None:
        seed = scenario.config.rng_seed
    xy = grid_xy(scenario)
    n = xy.shape[0]
    if n == 0:
        raise DataError("scenario grid is empty, nothing to measure")

    cells = scenario.cell_ids
    beams = scenario.codebook.beams
    n_cells = len(cells)
    n_beams = len(beams)
    sigma = scenario.config.radio.shadowing_sigma_db
    freq = scenario.config.carrier_frequency_hz

    px = xy[:, 0]
    py = xy[:, 1]
    pz = np.full(n, UE_HEIGHT_M)

    rsrp = np.empty((n, n_cells, n_beams), dtype=np.float64)
    for ci, cell_id in enumerate(cells):
        site, sector = scenario.cell_map[cell_id]
        az_off, el_off, dist = sector_frame_offsets(site, sector, px, py, pz)
        base = sector.tx_power_dbm - path_loss_db(freq, dist)
        if sigma > 0.0:
            shadow = np.array(
                [shadowing_db(seed, sigma, cell_id, px[i], py[i], pz[i]) for i in range(n)]
            )
            base = base + shadow
        for bi, beam in enumerate(beams):
            rsrp[:, ci, bi] = base + beam_gain_db(scenario.codebook, beam, az_off, el_off)

    flat = rsrp.reshape(n, n_cells * n_beams)
    # argmax returns the first maximum, which in cell-major column order
    # means ties resolve to the lowest cell id (then lowest beam id)
    best_col = np.argmax(flat, axis=1)
    serving = np.asarray(cells, dtype=np.int32)[best_col // n_beams]

    order = np.argsort(-flat, axis=1, kind="stable")
    col_cells = np.repeat(np.asarray(cells, dtype=np.int32), n_beams)
    col_beams = np.tile(np.arange(n_beams, dtype=np.int32), n_cells)
    meas_cells = col_cells[order]
    meas_beams = col_beams[order]
    meas_rsrp = np.take_along_axis(flat, order, axis=1)

    los = np.zeros(n, dtype=bool)
    site_index = {id(site): idx for idx, site in enumerate(scenario.sites)}
    serving_site = np.empty(n, dtype=np.int32)
    for cell_id in cells:
        site, _ = scenario.cell_map[cell_id]
        serving_site[serving == cell_id] = site_index[id(site)]
    pts3 = np.column_stack([px, py, pz])
    for idx, site in enumerate(scenario.sites):
        sel = np.nonzero(serving_site == idx)[0]
        if sel.size:
            los[sel] = los_mask(scenario, site.position, pts3[sel])

    return Dataset(
        xs=px.copy(),
        ys=py.copy(),
        serving=serving,
        los=los,
        meas_cells=meas_cells,
        meas_beams=meas_beams,
        meas_rsrp=meas_rsrp,
        cells=cells,
        n_beams=n_beams,
        scenario_hash=scenario.fingerprint_hash,
        seed=seed,
    )


def los_filter(dataset: Dataset) -> Dataset:
    """Keep only records whose serving site is line of sight."""
    keep = np.nonzero(dataset.los)[0]
    if keep.size == 0:
        raise DataError("line-of-sight filter removed every record")
    return dataset.subset(keep)


def partition_by_cell(dataset: Dataset) -> Dict[int, Dataset]:
    """Split by serving cell; only cells that actually serve appear."""
    out: Dict[int, Dataset] = {}
    for cell_id in sorted(set(int(c) for c in dataset.serving)):
        out[cell_id] = dataset.subset(np.nonzero(dataset.serving == cell_id)[0])
    return out


# ---------------------------------------------------------------------------
# Persistence: line-delimited JSON, header first


def save_dataset(dataset: Dataset, path) -> None:
    header = {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "scenario_hash": dataset.scenario_hash,
        "seed": dataset.seed,
        "cells": list(dataset.cells),
        "beams_per_cell": dataset.n_beams,
    }
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")))
        fh.write("\n")
        for i in range(len(dataset)):
            row = {
                "x": float(dataset.xs[i]),
                "y": float(dataset.ys[i]),
                "serving": int(dataset.serving[i]),
                "los": bool(dataset.los[i]),
                "meas": [
                    [int(c), int(b), float(r)]
                    for c, b, r in zip(
                        dataset.meas_cells[i], dataset.meas_beams[i], dataset.meas_rsrp[i]
                    )
                ],
            }
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def _require(obj: dict, key: str, path, line: int):
    if key not in obj:
        raise DatasetParseError("missing required field", path=path, line=line, field=key)
    return obj[key]


def load_dataset(path, expected_scenario_hash: Optional[str] = None) -> Dataset:
    """Read a dataset file back; the round trip is exact.

    Raises DatasetParseError on malformed lines or fields, DataError on a
    scenario hash mismatch when expected_scenario_hash is given.
    """
    try:
        fh = open(path, "r", encoding="ascii")
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e
    with fh:
        header_line = fh.readline()
        if not header_line:
            raise DatasetParseError("empty dataset file", path=path, line=1)
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise DatasetParseError(f"bad header JSON: {e.msg}", path=path, line=1) from e
        if not isinstance(header, dict) or header.get("format") != _FORMAT_NAME:
            raise DatasetParseError("not a fingerprint dataset file", path=path, line=1)
        if header.get("version") != _FORMAT_VERSION:
            raise DatasetParseError(
                f"unsupported dataset version {header.get('version')}", path=path, line=1
            )
        cells = _require(header, "cells", path, 1)
        n_beams = _require(header, "beams_per_cell", path, 1)
        scenario_hash_value = _require(header, "scenario_hash", path, 1)
        seed = _require(header, "seed", path, 1)
        if not isinstance(cells, list) or not all(isinstance(c, int) for c in cells):
            raise DatasetParseError("cells must be a list of ints", path=path, line=1, field="cells")
        cell_set = set(cells)

        xs: List[float] = []
        ys: List[float] = []
        serving: List[int] = []
        los: List[bool] = []
        meas_cells: List[List[int]] = []
        meas_beams: List[List[int]] = []
        meas_rsrp: List[List[float]] = []
        expected_m: Optional[int] = None

        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"bad record JSON: {e.msg}", path=path, line=lineno) from e
            if not isinstance(row, dict):
                raise DatasetParseError("record line is not an object", path=path, line=lineno)
            x = _require(row, "x", path, lineno)
            y = _require(row, "y", path, lineno)
            sv = _require(row, "serving", path, lineno)
            lo = _require(row, "los", path, lineno)
            meas = _require(row, "meas", path, lineno)
            if not isinstance(x, (int, float)) or isinstance(x, bool):
                raise DatasetParseError("x must be a number", path=path, line=lineno, field="x")
            if not isinstance(y, (int, float)) or isinstance(y, bool):
                raise DatasetParseError("y must be a number", path=path, line=lineno, field="y")
            if not isinstance(sv, int) or isinstance(sv, bool):
                raise DatasetParseError("serving must be an int", path=path, line=lineno, field="serving")
            if not isinstance(lo, bool):
                raise DatasetParseError("los must be a bool", path=path, line=lineno, field="los")
            if not isinstance(meas, list) or not meas:
                raise DatasetParseError("meas must be a non-empty list", path=path, line=lineno, field="meas")
            if expected_m is None:
                expected_m = len(meas)
            elif len(meas) != expected_m:
                raise DatasetParseError(
                    "records disagree on measurement count", path=path, line=lineno, field="meas"
                )
            mc: List[int] = []
            mb: List[int] = []
            mr: List[float] = []
            prev = None
            for item in meas:
                if (
                    not isinstance(item, list)
                    or len(item) != 3
                    or not isinstance(item[0], int)
                    or not isinstance(item[1], int)
                    or isinstance(item[2], bool)
                    or not isinstance(item[2], (int, float))
                ):
                    raise DatasetParseError(
                        "each measurement must be [cell, beam, rsrp]",
                        path=path,
                        line=lineno,
                        field="meas",
                    )
                if item[0] not in cell_set:
                    raise DatasetParseError(
                        f"measurement references unknown cell {item[0]}",
                        path=path,
                        line=lineno,
                        field="meas",
                    )
                r = float(item[2])
                if prev is not None and r > prev:
                    raise DatasetParseError(
                        "measurements are not sorted by descending rsrp",
                        path=path,
                        line=lineno,
                        field="meas",
                    )
                prev = r
                mc.append(item[0])
                mb.append(item[1])
                mr.append(r)
            if sv not in cell_set:
                raise DatasetParseError(
                    f"serving references unknown cell {sv}", path=path, line=lineno, field="serving"
                )
            if sv != mc[0]:
                raise DatasetParseError(
                    "serving cell is not the strongest measurement",
                    path=path,
                    line=lineno,
                    field="serving",
                )
            xs.append(float(x))
            ys.append(float(y))
            serving.append(sv)
            los.append(lo)
            meas_cells.append(mc)
            meas_beams.append(mb)
            meas_rsrp.append(mr)

    if expected_scenario_hash is not None and scenario_hash_value != expected_scenario_hash:
        raise DataError(
            f"dataset was generated from scenario {scenario_hash_value[:12]}, "
            f"expected {expected_scenario_hash[:12]}"
        )

    n = len(xs)
    m = expected_m or 0
    return Dataset(
        xs=np.asarray(xs, dtype=np.float64),
        ys=np.asarray(ys, dtype=np.float64),
        serving=np.asarray(serving, dtype=np.int32),
        los=np.asarray(los, dtype=bool),
        meas_cells=np.asarray(meas_cells, dtype=np.int32).reshape(n, m),
        meas_beams=np.asarray(meas_beams, dtype=np.int32).reshape(n, m),
        meas_rsrp=np.asarray(meas_rsrp, dtype=np.float64).reshape(n, m),
        cells=cells,
        n_beams=int(n_beams),
        scenario_hash=scenario_hash_value,
        seed=int(seed),
    )
