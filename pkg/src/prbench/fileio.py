"""Versioned JSON artifact files and atomic writes.

Every file this package writes carries a ``format_version``; readers accept
the current major version and reject anything else.  Writes go through a
temp file plus rename so that interrupted runs never leave half files.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import List, Mapping, Sequence

from .domain import LayerConfig, ParamBounds, parse_kind
from .errors import IoFailure, ParseError, VersionMismatch

FORMAT_VERSION = "1"


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".prbench-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_json(path: str, doc: Mapping) -> None:
    atomic_write_text(path, dump_json(doc))


def load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return doc


def check_format_version(doc: Mapping, path: str) -> None:
    """Reject documents from an incompatible major format version.

    A missing field is accepted as the current version (hand-written files).
    """
    version = str(doc.get("format_version", FORMAT_VERSION))
    if version.split(".")[0] != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format {version!r}, this build reads {FORMAT_VERSION}")


def stamp(doc: dict) -> dict:
    doc = dict(doc)
    doc["format_version"] = FORMAT_VERSION
    return doc


# -- concrete artifact schemas -------------------------------------------------


def load_layer(path: str) -> LayerConfig:
    doc = load_json(path)
    check_format_version(doc, path)
    return LayerConfig.from_dict(doc)


def write_layer(path: str, config: LayerConfig) -> None:
    write_json(path, stamp(config.to_dict()))


def load_configs(path: str) -> List[LayerConfig]:
    """A config list file: {"layers": [{kind, params}, ...]}."""
    doc = load_json(path)
    check_format_version(doc, path)
    if "layers" not in doc or not isinstance(doc["layers"], list):
        raise ParseError(f"{path}: expected a 'layers' array")
    return [LayerConfig.from_dict(entry) for entry in doc["layers"]]


def write_configs(path: str, configs: Sequence[LayerConfig]) -> None:
    write_json(path, stamp({"layers": [c.to_dict() for c in configs]}))


def load_bounds(path: str) -> ParamBounds:
    doc = load_json(path)
    check_format_version(doc, path)
    return ParamBounds.from_dict(doc)


def write_bounds(path: str, bounds: ParamBounds) -> None:
    write_json(path, stamp(bounds.to_dict()))


def load_widths(path: str) -> tuple:
    """Returns (kind, widths dict)."""
    doc = load_json(path)
    check_format_version(doc, path)
    if "kind" not in doc or "widths" not in doc:
        raise ParseError(f"{path}: expected keys 'kind' and 'widths'")
    return parse_kind(doc["kind"]), {str(k): int(v) for k, v in doc["widths"].items()}


def write_widths(path: str, kind, widths: Mapping[str, int]) -> None:
    write_json(path, stamp({"kind": kind.value, "widths": dict(widths)}))
