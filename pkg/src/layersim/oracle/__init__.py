from .cloth import SpringSet, build_cloth_grid, spring_forces, vertex_masses
from .colliders import BodyCollider, Capsule, ColliderPose, sample_surface, sphere
from .lseq import FormatError, Sequence, read_lseq, write_lseq
from .scene import (
    ORACLE_WIND_MAX,
    WINDY_THRESHOLD,
    WINDY_THRESHOLD_REFERENCE,
    SceneConfig,
    build_scene,
    generate_sequence,
)
from .sim import (
    ClothSystem,
    OracleDivergence,
    OracleParams,
    collide_body,
    collide_layers,
    stable_substeps,
    step_oracle,
    wind_force,
)
