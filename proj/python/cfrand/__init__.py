"""Control-flow obfuscation and branch-shadowing testbed."""

from ._core import (
    BuildArtifacts,
    ToolError,
    attack,
    attack_probability,
    generate_corpus,
    location_count,
    multi_branch_success,
    obfuscate,
    run,
    suite,
)

__all__ = [
    "BuildArtifacts",
    "ToolError",
    "attack",
    "attack_probability",
    "generate_corpus",
    "location_count",
    "multi_branch_success",
    "obfuscate",
    "run",
    "suite",
]
