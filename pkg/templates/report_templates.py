"""Plain-text templates for the geometry audit and the run summary."""

GEOMETRY_AUDIT_TEMPLATE = """=== Direction families (denominator {denominator}) ===
{families}

=== Identity decompositions ===
{decompositions}

=== Checks ===
{checks}

min |k+k'|² = {global_min}
{count} direction vectors, {failed} failed checks
"""

FAMILY_BLOCK_TEMPLATE = """--- {label} ---
{vectors}"""

VECTOR_LINE_TEMPLATE = "  ({nx:>4}, {ny:>4}) / {denominator}"

DECOMPOSITION_LINE_TEMPLATE = "  {label}: Id = {terms}"

CHECK_LINE_TEMPLATE = "  [{mark}] {name}{detail}"

RUN_TRANSCRIPT_TEMPLATE = """=== Run {config_hash} ===
Tool version: {tool_version}
Seed: {seed}
Manifest:
{manifest}
{stages}
=== Result: {verdict} ===
"""

STAGE_BLOCK_TEMPLATE = """--- {name} (q={q}) : {status} ---
{lines}"""
