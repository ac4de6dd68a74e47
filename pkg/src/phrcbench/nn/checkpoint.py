"""Checkpoint serialization.

Format: one ``#TAG {json}`` header line per header entry (``#NETCFG`` first),
then one line per parameter: ``name;dim0,dim1;base64(little-endian float64)``.
Round-trips bit-exactly.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .params import ConfigError, ParamStore


def save_checkpoint(path, headers: dict, store: ParamStore) -> None:
    lines = [f"#{tag} {json.dumps(obj)}" for tag, obj in headers.items()]
    for p in store:
        shape = ",".join(str(n) for n in p.shape)
        payload = base64.b64encode(p.values.astype("<f8").tobytes()).decode("ascii")
        lines.append(f"{p.name};{shape};{payload}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns ``(headers, store)`` with headers as tag -> dict."""
    text = Path(path).read_text()
    headers: dict = {}
    store = ParamStore()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if raw == "":
            continue
        if raw.startswith("#"):
            tag, _, body = raw[1:].partition(" ")
            try:
                headers[tag] = json.loads(body)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"checkpoint line {lineno}: bad {tag} JSON: {exc}") from exc
            continue
        try:
            name, shape_s, payload = raw.split(";", 2)
        except ValueError as exc:
            raise ConfigError(f"checkpoint line {lineno}: expected name;shape;payload") from exc
        shape = tuple(int(n) for n in shape_s.split(",") if n != "")
        values = np.frombuffer(base64.b64decode(payload), dtype="<f8").astype(np.float64)
        p = store.add(name, np.zeros(shape))
        if values.size != p.values.size:
            raise ConfigError(f"checkpoint line {lineno}: {name} payload size mismatch")
        p.values[:] = values
    if "NETCFG" not in headers:
        raise ConfigError("checkpoint missing #NETCFG header")
    return headers, store
