"""Pipeline configuration: every tunable in one dataclass, serialized as YAML
with keys named after the published parameter symbols."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .descriptor import DescriptorConfig, EncodingMode
from .odometry import RansacParams
from .pose_graph import GraphConfig
from .registration import RegistrationParams
from .retrieval import OdometrySimilarityParams, RetrievalConfig


@dataclass
class PipelineConfig:
    # Keyframing and submapping
    s: float = 3.0                 # keyframe spacing, m
    nu: float = 1.0                # voxel grid resolution, m
    r_a: float = 50.0              # voxel grid radius, m
    voxel_capacity: int = 20
    # Descriptor
    r_lo: float = 30.0
    r_la: float = 30.0
    n_lo: int = 20
    n_la: int = 20
    encoding: str = "intensity_sum"
    balance_weight: float = 1000.0
    # Odometry similarity
    sigma_trans: float = 0.04
    sigma_rot: float = 3.0
    eps_trans: float = 5.0
    eps_rot: float = 5.0
    # Retrieval
    w: int = 6                     # sequence length (15 for the mine preset)
    k: int = 3
    exclusion_gap: int = 20
    appearance_weight: float = 0.5
    # Verification
    y_th: float = 0.5
    label_trans: float = 4.0       # positive-label translation gate, m
    label_rot: float = 2.5         # degrees
    gtp_radius: float = 6.0
    # Orchestration
    seed: int = 0
    optimize_every: int = 10       # keyframes between optimizations; 0 = end only
    recompute_d_odom: bool = False  # use graph estimates in the odometry prior
    kitti_lengths: list = field(
        default_factory=lambda: [100.0, 200.0, 300.0, 400.0, 500.0, 600.0,
                                 700.0, 800.0])
    # Sub-blocks
    ransac: RansacParams = field(default_factory=RansacParams)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    graph: GraphConfig = field(default_factory=GraphConfig)

    # --- views consumed by the modules ------------------------------------

    def descriptor_config(self) -> DescriptorConfig:
        return DescriptorConfig(self.r_lo, self.r_la, self.n_lo, self.n_la,
                                EncodingMode(self.encoding),
                                self.balance_weight)

    def similarity_params(self) -> OdometrySimilarityParams:
        return OdometrySimilarityParams(self.sigma_trans, self.sigma_rot,
                                        self.eps_trans, self.eps_rot)

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(self.w, self.k, self.exclusion_gap,
                               self.appearance_weight)

    # --- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, sub in (("ransac", RansacParams),
                         ("registration", RegistrationParams),
                         ("graph", GraphConfig)):
            if key in data and isinstance(data[key], dict):
                data[key] = sub(**data[key])
        return cls(**data)

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))
