"""Run configuration: documented defaults, JSON config files, flag overrides.

The config file is a single JSON document with nested sections. Every field
has a default; CLI flags override file values. Defaults:

    input.scan / input.labels / input.synthetic   null (choose one input)
    output.features                               "r_rapid.rapd"
    output.class_features                         null (C-RAPiD not written)
    sensor.beam_count                             64
    sensor.measurements_per_cycle                 1800
    sensor.vertical_fov_deg                       [-24.8, 2.0]
    sensor.delta_theta / sensor.delta_phi         null (derived from the above)
    rapid.k_close / k_mid / k_far                 10 / 7 / 5
    rapid.band_edges                              [20.0, 50.0] meters
    rapid.delta                                   2.0 meters
    voxel_size                                    0.2 meters
    embedding.latents / width / reduced / stages  4 / 16 / 8 / 2
    embedding.activation                          "relu"
    fusion.ratio                                  4
    loss.alpha / loss.lambda / loss.sim           0.5 / 0.1 / "cosine"
    eval.num_classes / eval.ignore                20 / [0]
    workers                                       1
    seed                                          0

The k triple (10, 7, 5) suits 64-beam scans and (8, 6, 3) suits 32-beam
scans; both load through the same file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .cloud import SensorGeometry
from .embed import EmbeddingDims
from .errors import ContractError
from .rapid import RangeAwareConfig


def defaults() -> dict:
    return {
        "input": {"scan": None, "labels": None, "synthetic": None},
        "output": {"features": "r_rapid.rapd", "class_features": None},
        "sensor": {
            "beam_count": 64,
            "measurements_per_cycle": 1800,
            "vertical_fov_deg": [-24.8, 2.0],
            "delta_theta": None,
            "delta_phi": None,
        },
        "rapid": {
            "k_close": 10,
            "k_mid": 7,
            "k_far": 5,
            "band_edges": [20.0, 50.0],
            "delta": 2.0,
        },
        "voxel_size": 0.2,
        "embedding": {
            "latents": 4,
            "width": 16,
            "reduced": 8,
            "stages": 2,
            "activation": "relu",
        },
        "fusion": {"ratio": 4},
        "loss": {"alpha": 0.5, "lambda": 0.1, "sim": "cosine"},
        "eval": {"num_classes": 20, "ignore": [0]},
        "workers": 1,
        "seed": 0,
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for one pipeline run."""

    scan: Optional[str]
    labels: Optional[str]
    synthetic: Optional[dict]
    features_out: str
    class_features_out: Optional[str]
    sensor: SensorGeometry
    rapid: RangeAwareConfig
    voxel_size: float
    embedding: EmbeddingDims
    fusion_ratio: int
    alpha: float
    lam: float
    sim: str
    eval_num_classes: int
    eval_ignore: tuple[int, ...]
    workers: int
    seed: int
    raw: dict

    @classmethod
    def load(
        cls, path: Optional[str] = None, overrides: Optional[dict] = None
    ) -> "RunConfig":
        """Defaults, then the config file, then CLI overrides."""
        doc = defaults()
        if path is not None:
            try:
                file_doc = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ContractError(f"{path}: invalid config JSON ({exc})") from exc
            if not isinstance(file_doc, dict):
                raise ContractError(f"{path}: config must be a JSON object")
            doc = _deep_merge(doc, file_doc)
        if overrides:
            doc = _deep_merge(doc, overrides)
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        sensor = doc["sensor"]
        fov_lo, fov_hi = sensor["vertical_fov_deg"]
        delta_theta = sensor["delta_theta"]
        delta_phi = sensor["delta_phi"]
        geometry = SensorGeometry(
            beam_count=int(sensor["beam_count"]),
            delta_theta=(
                2.0 * math.pi / int(sensor["measurements_per_cycle"])
                if delta_theta is None
                else float(delta_theta)
            ),
            delta_phi=(
                math.radians(fov_hi - fov_lo) / int(sensor["beam_count"])
                if delta_phi is None
                else float(delta_phi)
            ),
            measurements_per_cycle=int(sensor["measurements_per_cycle"]),
        )
        rap = doc["rapid"]
        rapid_cfg = RangeAwareConfig(
            band_edges=tuple(float(e) for e in rap["band_edges"]),
            k_close=int(rap["k_close"]),
            k_mid=int(rap["k_mid"]),
            k_far=int(rap["k_far"]),
            delta=float(rap["delta"]),
        )
        emb = doc["embedding"]
        dims = EmbeddingDims(
            latents=int(emb["latents"]),
            width=int(emb["width"]),
            reduced=int(emb["reduced"]),
            stages=int(emb["stages"]),
            activation=emb["activation"],
        )
        return cls(
            scan=doc["input"]["scan"],
            labels=doc["input"]["labels"],
            synthetic=doc["input"]["synthetic"],
            features_out=doc["output"]["features"],
            class_features_out=doc["output"]["class_features"],
            sensor=geometry,
            rapid=rapid_cfg,
            voxel_size=float(doc["voxel_size"]),
            embedding=dims,
            fusion_ratio=int(doc["fusion"]["ratio"]),
            alpha=float(doc["loss"]["alpha"]),
            lam=float(doc["loss"]["lambda"]),
            sim=doc["loss"]["sim"],
            eval_num_classes=int(doc["eval"]["num_classes"]),
            eval_ignore=tuple(int(i) for i in doc["eval"]["ignore"]),
            workers=int(doc["workers"]),
            seed=int(doc["seed"]),
            raw=doc,
        )


def config_echo(config: RunConfig) -> dict[str, Any]:
    """Hyperparameters recorded in output containers for provenance."""
    return {
        "k": list(config.rapid.ks),
        "band_edges": list(config.rapid.band_edges),
        "delta": config.rapid.delta,
        "beam_count": config.sensor.beam_count,
        "seed": config.seed,
    }
