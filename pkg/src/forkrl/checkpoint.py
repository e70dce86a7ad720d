"""
Checkpoints: one .npz per expert holding named parameters, Adam moments and a
JSON meta blob; a manifest.json per snapshot maps expert kind -> checkpoint file.
"""
import json
import logging
import pathlib

import numpy as np

from .errors import CheckpointFormatError, MissingCheckpointError
from .nn import Adam, Parameter

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = 'manifest.json'


def save_checkpoint(path, params: dict[str, Parameter], adam: Adam | None = None,
                    step: int = 0, meta: dict | None = None) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{name}": p.value for name, p in params.items()}
    if adam is not None:
        arrays.update({f"adam/{k}": v for k, v in adam.state_arrays().items()})
    header = {'version': FORMAT_VERSION, 'step': int(step),
              'adam_k': adam.k if adam is not None else None, **(meta or {})}
    arrays['__meta__'] = np.array(json.dumps(header, sort_keys=True))
    with path.open('wb') as f:
        np.savez(f, **arrays)
    log.debug("saved %d tensors to %s", len(params), path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], dict]:
    """Returns (params, adam arrays, meta)."""
    path = pathlib.Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z['__meta__']))
        if meta.get('version') != FORMAT_VERSION:
            raise CheckpointFormatError(f"{path}: checkpoint version {meta.get('version')} != {FORMAT_VERSION}")
        params = {k[len('param/'):]: z[k] for k in z.files if k.startswith('param/')}
        adam = {k[len('adam/'):]: z[k] for k in z.files if k.startswith('adam/')}
    return params, adam, meta


def restore(params: dict[str, Parameter], arrays: dict[str, np.ndarray], source: str = '') -> None:
    missing = set(params) - set(arrays)
    if missing:
        raise CheckpointFormatError(f"{source}: missing tensors {sorted(missing)}")
    for name, p in params.items():
        if arrays[name].shape != p.value.shape:
            raise CheckpointFormatError(f"{source}: {name} has shape {arrays[name].shape}, expected {p.value.shape}")
        p.value[...] = arrays[name]


# ------------------------------- manifest ----------------------------------- #

def write_manifest(out_dir, entries: dict[str, str], meta: dict | None = None) -> pathlib.Path:
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {'version': FORMAT_VERSION, 'experts': dict(sorted(entries.items())), **(meta or {})}
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(body, indent=2, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    """Accepts a manifest file or the directory holding one; returns kind -> absolute path."""
    path = pathlib.Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint manifest not found: {path}")
    body = json.loads(path.read_text())
    if body.get('version') != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: manifest version {body.get('version')} != {FORMAT_VERSION}")
    return {kind: str((path.parent / rel).resolve()) for kind, rel in body['experts'].items()}
