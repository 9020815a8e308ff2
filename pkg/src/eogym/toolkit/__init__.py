"""The 35-tool catalog, its schemas and the dispatcher."""

from .context import EpisodeContext, ImageHandle, PatchStore
from .detection import (
    AnnotatedObject, Detection, GroundTruthAnnotation, NoisyOracleDetector, load_annotations,
    write_annotations,
)
from .execute import UNVERIFIED_CAPABLE, execute, validate_arguments
from .registry import (
    ANALYSIS_GROUPS, DATASET_FAMILIES, GATHERING_GROUPS, RENAME_RULES, SKILL_TOOLS, TOOLS, TOOLS_BY_NAME,
    Param, ToolSchema, canonical_name, function_manifest, inverse_tool_name, normalize_family,
    rename_tool_name, schema_set,
)
from .semantic import SynonymFilter, semantic_target_filter
from .types import ExecutionMode, NoiseConfig, Observation, ToolCall, ToolError, derive_seed

__all__ = [
    "EpisodeContext", "ImageHandle", "PatchStore", "AnnotatedObject", "Detection", "GroundTruthAnnotation",
    "NoisyOracleDetector", "load_annotations", "write_annotations", "UNVERIFIED_CAPABLE", "execute",
    "validate_arguments", "ANALYSIS_GROUPS", "DATASET_FAMILIES", "GATHERING_GROUPS", "RENAME_RULES",
    "SKILL_TOOLS", "TOOLS", "TOOLS_BY_NAME", "Param", "ToolSchema", "canonical_name", "function_manifest",
    "inverse_tool_name", "normalize_family", "rename_tool_name", "schema_set", "SynonymFilter",
    "semantic_target_filter", "ExecutionMode", "NoiseConfig", "Observation", "ToolCall", "ToolError",
    "derive_seed",
]
