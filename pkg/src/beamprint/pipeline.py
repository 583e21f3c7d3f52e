"""Experiment orchestration: dataset splits, sweeps over feature and
model configs, report emission, run manifests, and inference.

A sweep is driven by an experiment spec (JSON). Every source of
randomness is a named seed in the spec, so rerunning a spec (or the
manifest written next to its outputs) reproduces every report byte for
byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import dtree, mlp
from .errors import BeamprintError, ConfigurationError, DataError, DatasetParseError
from .evaluate import Comparison, EvalReport, compare, euclidean_errors, summarize, write_cdf_csv, write_report
from .features import (
    TOPOLOGY_CELL,
    TOPOLOGY_NETWORK,
    FeatureConfig,
    FeatureSet,
    extract,
    extract_features,
    feature_config_from_dict,
    feature_config_to_dict,
    feature_length,
    fit_normalizer,
)
from .fingerprint import Dataset, FingerprintRecord, build_dataset, los_filter, partition_by_cell
from .scenario import (
    Scenario,
    ScenarioConfig,
    build_scenario,
    load_scenario_config,
    scenario_config_from_dict,
    scenario_config_to_dict,
)

logger = logging.getLogger(__name__)

_MANIFEST_NAME = "manifest.json"
_MODEL_FORMAT = "beamprint-model"
_MODEL_VERSION = 1
_MANIFEST_FORMAT = "beamprint-manifest"
_MANIFEST_VERSION = 1

MODEL_MLP = "mlp"
MODEL_TREE = "tree"


# ---------------------------------------------------------------------------
# Dataset split


def split_dataset(dataset: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded uniform shuffle, then prefix split into (train, test)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError("train fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_train = int(round(fraction * n))
    if n_train < 1 or n - n_train < 1:
        raise DataError(f"split of {n} records at fraction {fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


# ---------------------------------------------------------------------------
# Model specs and bundles


@dataclass(frozen=True)
class ModelSpec:
    model_type: str
    mlp_config: Optional[mlp.MlpConfig] = None
    tree_config: Optional[dtree.TreeConfig] = None

    @property
    def label(self) -> str:
        if self.model_type == MODEL_MLP:
            c = self.mlp_config
            name = f"mlp_h{'x'.join(str(w) for w in c.hidden_layers)}"
            if c.activation != "tanh":
                name += f"_{c.activation}"
            return f"{name}_s{c.rng_seed}"
        c = self.tree_config
        return f"tree_d{c.max_depth}_l{c.min_samples_leaf}"


def model_spec_from_dict(d: dict) -> ModelSpec:
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigurationError("each model config needs a 'type' of mlp or tree")
    kind = d["type"]
    rest = {k: v for k, v in d.items() if k != "type"}
    if kind == MODEL_MLP:
        return ModelSpec(model_type=MODEL_MLP, mlp_config=mlp.mlp_config_from_dict(rest))
    if kind == MODEL_TREE:
        return ModelSpec(model_type=MODEL_TREE, tree_config=dtree.tree_config_from_dict(rest))
    raise ConfigurationError(f"unknown model type {kind!r}")


def model_spec_to_dict(spec: ModelSpec) -> dict:
    if spec.model_type == MODEL_MLP:
        return {"type": MODEL_MLP, **mlp.mlp_config_to_dict(spec.mlp_config)}
    return {
        "type": MODEL_TREE,
        "max_depth": spec.tree_config.max_depth,
        "min_samples_leaf": spec.tree_config.min_samples_leaf,
        "min_impurity_decrease": spec.tree_config.min_impurity_decrease,
    }


@dataclass
class ModelBundle:
    """A trained model plus the feature recipe it expects."""

    model_type: str
    feature_config: FeatureConfig
    mlp_model: Optional[mlp.MlpModel] = None
    tree_model: Optional[dtree.TreeModel] = None

    def predict(self, values: np.ndarray) -> np.ndarray:
        if self.model_type == MODEL_MLP:
            return mlp.predict(self.mlp_model, values)
        return dtree.predict_tree(self.tree_model, values)


def save_model_bundle(bundle: ModelBundle, path) -> None:
    blob = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "model_type": bundle.model_type,
        "feature_config": feature_config_to_dict(bundle.feature_config),
        "mlp": None if bundle.mlp_model is None else mlp.mlp_to_dict(bundle.mlp_model),
        "tree": None if bundle.tree_model is None else dtree.tree_to_dict(bundle.tree_model),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(blob, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model_bundle(path) -> ModelBundle:
    try:
        with open(path, "r", encoding="ascii") as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read model file {path}: {e}") from e
    if not isinstance(blob, dict) or blob.get("format") != _MODEL_FORMAT:
        raise ConfigurationError(f"{path} is not a model file")
    if blob.get("version") != _MODEL_VERSION:
        raise ConfigurationError(f"unsupported model file version {blob.get('version')}")
    kind = blob.get("model_type")
    if kind not in (MODEL_MLP, MODEL_TREE):
        raise ConfigurationError(f"unknown model type {kind!r} in {path}")
    return ModelBundle(
        model_type=kind,
        feature_config=feature_config_from_dict(blob["feature_config"]),
        mlp_model=None if blob.get("mlp") is None else mlp.mlp_from_dict(blob["mlp"]),
        tree_model=None if blob.get("tree") is None else dtree.tree_from_dict(blob["tree"]),
    )


# ---------------------------------------------------------------------------
# Experiment spec


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig
    feature_configs: List[FeatureConfig]
    model_specs: List[ModelSpec]
    topology: str = TOPOLOGY_NETWORK
    cells: Optional[List[int]] = None  # None means every eligible cell
    train_fraction: float = 0.9
    split_seed: int = 7
    dataset_seed: Optional[int] = None
    min_cell_records: int = 50


def experiment_spec_from_dict(d: dict, base_dir: Optional[Path] = None) -> ExperimentSpec:
    allowed = {
        "scenario",
        "feature_configs",
        "model_configs",
        "topology",
        "cells",
        "train_fraction",
        "split_seed",
        "dataset_seed",
        "min_cell_records",
    }
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown experiment spec keys: {sorted(unknown)}")
    if "scenario" not in d:
        raise ConfigurationError("experiment spec needs a 'scenario' (path or inline object)")
    raw_scenario = d["scenario"]
    if isinstance(raw_scenario, str):
        path = Path(raw_scenario)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        scenario = load_scenario_config(path)
    elif isinstance(raw_scenario, dict):
        scenario = scenario_config_from_dict(raw_scenario)
    else:
        raise ConfigurationError("'scenario' must be a path or an inline object")

    topology = d.get("topology", TOPOLOGY_NETWORK)
    if topology not in (TOPOLOGY_NETWORK, TOPOLOGY_CELL):
        raise ConfigurationError(f"unknown topology {topology!r}")

    fcs: List[FeatureConfig] = []
    for raw in d.get("feature_configs", []):
        raw = dict(raw)
        raw.pop("topology", None)  # the experiment topology governs
        fc = feature_config_from_dict(raw)
        if topology == TOPOLOGY_CELL:
            # cell-specific models never see the serving cell id
            fc = replace(fc, topology=TOPOLOGY_CELL, include_serving_cell_id=False)
        fcs.append(fc)
    if not fcs:
        raise ConfigurationError("experiment spec needs at least one feature config")

    specs = [model_spec_from_dict(m) for m in d.get("model_configs", [])]
    if not specs:
        raise ConfigurationError("experiment spec needs at least one model config")

    cells = d.get("cells")
    if cells in (None, "all"):
        cells = None
    elif isinstance(cells, list) and all(isinstance(c, int) for c in cells):
        cells = list(cells)
    else:
        raise ConfigurationError("'cells' must be \"all\" or a list of cell ids")

    return ExperimentSpec(
        scenario=scenario,
        feature_configs=fcs,
        model_specs=specs,
        topology=topology,
        cells=cells,
        train_fraction=float(d.get("train_fraction", 0.9)),
        split_seed=int(d.get("split_seed", 7)),
        dataset_seed=None if d.get("dataset_seed") is None else int(d.get("dataset_seed")),
        min_cell_records=int(d.get("min_cell_records", 50)),
    )


def experiment_spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "scenario": scenario_config_to_dict(spec.scenario),
        "feature_configs": [feature_config_to_dict(fc) for fc in spec.feature_configs],
        "model_configs": [model_spec_to_dict(m) for m in spec.model_specs],
        "topology": spec.topology,
        "cells": "all" if spec.cells is None else list(spec.cells),
        "train_fraction": spec.train_fraction,
        "split_seed": spec.split_seed,
        "dataset_seed": spec.dataset_seed,
        "min_cell_records": spec.min_cell_records,
    }


def load_experiment_spec(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="ascii") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read experiment spec {path}: {e}") from e
    if not isinstance(d, dict):
        raise ConfigurationError(f"experiment spec {path} must hold a JSON object")
    return experiment_spec_from_dict(d, base_dir=Path(path).resolve().parent)


# ---------------------------------------------------------------------------
# Single training run


def _fc_label(fc: FeatureConfig) -> str:
    tag = f"s{fc.n_serving_beams}n{fc.n_neighbor_beams}"
    if fc.include_serving_cell_id:
        tag += "_id"
    return tag


def train_model(
    train_set: FeatureSet, model_spec: ModelSpec, feature_config: FeatureConfig
) -> ModelBundle:
    """Fit one model on extracted training features."""
    if len(train_set) == 0:
        raise DataError("no trainable records after feature extraction")
    if model_spec.model_type == MODEL_MLP:
        stats = fit_normalizer(train_set)
        model = mlp.init_model(model_spec.mlp_config, feature_length(feature_config))
        model.normalizer = stats
        mlp.train(model, train_set)
        return ModelBundle(model_type=MODEL_MLP, feature_config=feature_config, mlp_model=model)
    tree = dtree.fit(train_set.values, train_set.labels, model_spec.tree_config)
    return ModelBundle(model_type=MODEL_TREE, feature_config=feature_config, tree_model=tree)


@dataclass
class RunOutput:
    label: str
    bundle: ModelBundle
    train_report: EvalReport
    test_report: EvalReport
    test_errors: np.ndarray
    train_errors: np.ndarray
    duration_s: float


def _descriptor(
    label: str,
    fc: FeatureConfig,
    model_spec: ModelSpec,
    spec: ExperimentSpec,
    cell: Optional[int],
    extras: dict,
) -> dict:
    return {
        "label": label,
        "topology": fc.topology,
        "cell": cell,
        "serving_beams": fc.n_serving_beams,
        "neighbor_beams": fc.n_neighbor_beams,
        "cell_id_feature": fc.include_serving_cell_id,
        "model": model_spec_to_dict(model_spec),
        "train_fraction": spec.train_fraction,
        "split_seed": spec.split_seed,
        **extras,
    }


def run_single(
    train_ds: Dataset,
    test_ds: Dataset,
    fc: FeatureConfig,
    model_spec: ModelSpec,
    spec: ExperimentSpec,
    label: str,
    cell: Optional[int] = None,
) -> RunOutput:
    t0 = time.perf_counter()
    train_set = extract_features(train_ds, fc)
    test_set = extract_features(test_ds, fc)
    if len(train_set) == 0 or len(test_set) == 0:
        raise DataError(f"run {label}: feature extraction left an empty split")
    bundle = train_model(train_set, model_spec, fc)
    train_err = euclidean_errors(bundle.predict(train_set.values), train_set.labels)
    test_err = euclidean_errors(bundle.predict(test_set.values), test_set.labels)
    extras = {
        "n_train": len(train_set),
        "n_test": len(test_set),
        "skipped_train": dict(sorted(train_set.skipped.items())),
        "skipped_test": dict(sorted(test_set.skipped.items())),
    }
    if bundle.model_type == MODEL_MLP:
        extras["epochs_run"] = len(bundle.mlp_model.loss_history)
    desc = _descriptor(label, fc, model_spec, spec, cell, extras)
    return RunOutput(
        label=label,
        bundle=bundle,
        train_report=summarize(train_err, split="train", config=desc),
        test_report=summarize(test_err, split="test", config=desc),
        test_errors=test_err,
        train_errors=train_err,
        duration_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Full experiment


@dataclass
class RunResult:
    reports: List[EvalReport]
    comparison: Comparison
    manifest: dict
    manifest_path: Path
    output_dir: Path


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(spec: ExperimentSpec, output_dir) -> RunResult:
    """Run every feature config x model config combination and write
    reports, CDF tables, models, and the replayable manifest."""
    out = Path(output_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "cdf").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(parents=True, exist_ok=True)

    t_start = time.perf_counter()
    scenario = build_scenario(spec.scenario)
    dataset = build_dataset(scenario, spec.dataset_seed)
    los = los_filter(dataset)
    t_data = time.perf_counter() - t_start

    outputs: List[RunOutput] = []
    pooled_reports: List[EvalReport] = []
    skipped_cells: Dict[int, int] = {}

    if spec.topology == TOPOLOGY_NETWORK:
        train_ds, test_ds = split_dataset(los, spec.train_fraction, spec.split_seed)
        for fc in spec.feature_configs:
            for ms in spec.model_specs:
                label = f"net_{_fc_label(fc)}_{ms.label}"
                outputs.append(run_single(train_ds, test_ds, fc, ms, spec, label))
    else:
        parts = partition_by_cell(los)
        wanted = sorted(parts) if spec.cells is None else spec.cells
        eligible: List[int] = []
        for cell in wanted:
            if cell not in parts:
                raise DataError(f"cell {cell} serves no line-of-sight records")
            if len(parts[cell]) < spec.min_cell_records:
                logger.warning(
                    "skipping cell %d: only %d records, need %d",
                    cell,
                    len(parts[cell]),
                    spec.min_cell_records,
                )
                skipped_cells[cell] = len(parts[cell])
                continue
            eligible.append(cell)
        if not eligible:
            raise DataError("no cell has enough records for cell-specific training")
        per_combo_test: Dict[str, List[np.ndarray]] = {}
        per_combo_train: Dict[str, List[np.ndarray]] = {}
        for cell in eligible:
            train_ds, test_ds = split_dataset(parts[cell], spec.train_fraction, spec.split_seed)
            for fc in spec.feature_configs:
                for ms in spec.model_specs:
                    combo = f"{_fc_label(fc)}_{ms.label}"
                    label = f"cell{cell}_{combo}"
                    run = run_single(train_ds, test_ds, fc, ms, spec, label, cell=cell)
                    outputs.append(run)
                    per_combo_test.setdefault(combo, []).append(run.test_errors)
                    per_combo_train.setdefault(combo, []).append(run.train_errors)
        for fc in spec.feature_configs:
            for ms in spec.model_specs:
                combo = f"{_fc_label(fc)}_{ms.label}"
                desc = _descriptor(
                    f"cellpool_{combo}",
                    fc,
                    ms,
                    spec,
                    None,
                    {"pooled_cells": eligible},
                )
                pooled_reports.append(
                    summarize(np.concatenate(per_combo_test[combo]), split="test", config=desc)
                )
                pooled_reports.append(
                    summarize(np.concatenate(per_combo_train[combo]), split="train", config=desc)
                )

    # emit artifacts
    reports: List[EvalReport] = []
    run_entries = []
    for run in outputs:
        model_path = out / "models" / f"{run.label}.json"
        save_model_bundle(run.bundle, model_path)
        paths = {}
        for rep in (run.train_report, run.test_report):
            rp = out / "reports" / f"{run.label}_{rep.split}.json"
            cp = out / "cdf" / f"{run.label}_{rep.split}.csv"
            write_report(rep, rp)
            write_cdf_csv(rep, cp)
            paths[rep.split] = {"report": str(rp.relative_to(out)), "cdf": str(cp.relative_to(out))}
            reports.append(rep)
        run_entries.append(
            {
                "label": run.label,
                "model": str(model_path.relative_to(out)),
                "artifacts": paths,
                "duration_s": run.duration_s,
            }
        )
    for rep in pooled_reports:
        label = rep.config["label"]
        rp = out / "reports" / f"{label}_{rep.split}.json"
        cp = out / "cdf" / f"{label}_{rep.split}.csv"
        write_report(rep, rp)
        write_cdf_csv(rep, cp)
        reports.append(rep)

    test_reports = [r for r in reports if r.split == "test"]
    comparison = compare(test_reports)

    report_hashes = {}
    for sub in ("reports", "cdf"):
        for p in sorted((out / sub).glob("*")):
            report_hashes[str(p.relative_to(out))] = _sha256_file(p)

    manifest = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "spec": experiment_spec_to_dict(spec),
        "scenario_hash": scenario.fingerprint_hash,
        "dataset": {
            "seed": dataset.seed,
            "n_records": len(dataset),
            "n_los": len(los),
            "los_fraction": len(los) / len(dataset),
        },
        "skipped_cells": {str(c): n for c, n in sorted(skipped_cells.items())},
        "runs": run_entries,
        "artifact_sha256": report_hashes,
        "durations_s": {
            "dataset": t_data,
            "total": time.perf_counter() - t_start,
        },
    }
    manifest_path = out / _MANIFEST_NAME
    with open(manifest_path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return RunResult(
        reports=reports,
        comparison=comparison,
        manifest=manifest,
        manifest_path=manifest_path,
        output_dir=out,
    )


def replay(manifest_path, output_dir) -> RunResult:
    """Re-run the experiment recorded in a manifest and verify that every
    report and CDF file comes out byte-identical."""
    try:
        with open(manifest_path, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read manifest {manifest_path}: {e}") from e
    if manifest.get("format") != _MANIFEST_FORMAT:
        raise ConfigurationError(f"{manifest_path} is not a run manifest")
    spec = experiment_spec_from_dict(manifest["spec"])
    result = run_experiment(spec, output_dir)
    want = manifest.get("artifact_sha256", {})
    got = result.manifest["artifact_sha256"]
    if want != got:
        diff = sorted(set(want.items()) ^ set(got.items()))
        raise DataError(f"replay diverged from the recorded run: {diff[:4]}")
    return result


# ---------------------------------------------------------------------------
# Inference


def parse_measurement_line(raw: str, lineno: int, path=None) -> Optional[FingerprintRecord]:
    """One JSON measurement report -> record; None for header lines.

    The measurement list is sorted strongest-first locally, so callers
    may pass unsorted reports. A 'serving' field, when present, must
    agree with the strongest measurement.
    """
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"bad JSON: {e.msg}", path=path, line=lineno) from e
    if not isinstance(d, dict):
        raise DatasetParseError("measurement line is not an object", path=path, line=lineno)
    if d.get("format"):
        return None  # dataset header line
    meas = d.get("meas")
    if not isinstance(meas, list) or not meas:
        raise DatasetParseError("missing or empty 'meas' list", path=path, line=lineno, field="meas")
    triples = []
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
                "each measurement must be [cell, beam, rsrp]", path=path, line=lineno, field="meas"
            )
        triples.append((item[0], item[1], float(item[2])))
    triples.sort(key=lambda t: (-t[2], t[0], t[1]))
    serving = d.get("serving")
    if serving is None:
        serving = triples[0][0]
    elif not isinstance(serving, int) or isinstance(serving, bool):
        raise DatasetParseError("serving must be an int", path=path, line=lineno, field="serving")
    elif serving != triples[0][0]:
        raise DatasetParseError(
            "serving cell is not the strongest measurement", path=path, line=lineno, field="serving"
        )
    x = d.get("x", float("nan"))
    y = d.get("y", float("nan"))
    return FingerprintRecord(
        x=float(x),
        y=float(y),
        serving_cell_id=serving,
        los_to_serving=bool(d.get("los", True)),
        measurements=tuple(triples),
    )


def infer_record(bundle: ModelBundle, record: FingerprintRecord) -> Tuple[float, float]:
    """Position estimate in metres for one measurement record."""
    fv = extract(record, bundle.feature_config)
    pred = bundle.predict(fv.values)
    return float(pred[0]), float(pred[1])


def infer_file(bundle: ModelBundle, in_path, out_path=None) -> List[dict]:
    """Predict for every record in a line-delimited measurement file."""
    results = []
    try:
        fh = open(in_path, "r", encoding="ascii")
    except OSError as e:
        raise DataError(f"cannot read measurement file {in_path}: {e}") from e
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            record = parse_measurement_line(raw, lineno, path=in_path)
            if record is None:
                continue
            x_pred, y_pred = infer_record(bundle, record)
            results.append({"x_pred": x_pred, "y_pred": y_pred})
    if out_path is not None:
        with open(out_path, "w", encoding="ascii") as fh:
            for row in results:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
                fh.write("\n")
    return results
