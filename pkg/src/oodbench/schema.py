"""JSON schema for report.json."""

from __future__ import annotations

import jsonschema

from .core import FormatError

_CELL = {
    "type": "object",
    "required": ["value", "n_in", "n_ood"],
    "properties": {
        "value": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "n_in": {"type": "integer", "minimum": 0},
        "n_ood": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["config", "config_hash", "task", "methods", "n_samples", "results", "skips", "histograms", "audit"],
    "properties": {
        "config": {"type": "object"},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "task": {"enum": ["classification", "segmentation"]},
        "methods": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "n_samples": {"type": "integer", "minimum": 0},
        "n_ood_samples": {"type": "integer", "minimum": 0},
        "results": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "object", "additionalProperties": _CELL},
            },
        },
        "skips": {"type": "object", "additionalProperties": {"type": "string"}},
        "histograms": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["edges", "in", "ood"],
                "properties": {
                    "edges": {"type": "array", "items": {"type": "number"}},
                    "in": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "ood": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "audit": {
            "type": "object",
            "required": ["batches"],
            "properties": {
                "batches": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["index", "size", "hash", "method_hashes"],
                        "properties": {
                            "index": {"type": "integer"},
                            "size": {"type": "integer", "minimum": 1},
                            "hash": {"type": "string"},
                            "method_hashes": {"type": "object", "additionalProperties": {"type": "string"}},
                        },
                    },
                }
            },
        },
        "scores": {"type": "object"},
        "notes": {"type": "object"},
        "runtime": {"type": "object"},
    },
    "additionalProperties": False,
}


def validate_report(data) -> None:
    try:
        jsonschema.validate(data, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"report does not match schema at {where}: {exc.message}") from None
