# utils/json_utils.py

import json
import os
import tempfile

import numpy as np
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from utils.logger import setup_logger

logger = setup_logger('json_utils', log_rotation=True)


class CheckpointError(ValueError):
    """A checkpoint document is malformed or does not match the expected layout."""


@retry(retry=retry_if_exception_type(OSError), stop=stop_after_attempt(3),
       wait=wait_exponential(multiplier=0.1, max=2), reraise=True)
def write_text_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', newline='') as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except OSError:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        logger.warning(f"Write to {path} failed, retrying")
        raise


def dump_document(document):
    """Serialise a JSON document deterministically (key order preserved, floats as repr)."""
    return json.dumps(document, indent=1, allow_nan=False) + '\n'


def save_document(path, document):
    write_text_atomic(path, dump_document(document))


def load_document(path):
    with open(path, 'r') as handle:
        return json.load(handle)


def save_checkpoint(path, named_arrays, metadata):
    """Write a structured-text checkpoint.

    ``named_arrays`` is an ordered list of ``(name, ndarray)`` pairs; the document keeps
    that order so save -> load -> save reproduces the same bytes.
    """
    parameters = {}
    for name, array in named_arrays:
        array = np.asarray(array, dtype=np.float64)
        parameters[name] = {
            'shape': [int(d) for d in array.shape],
            'values': [float(v) for v in array.ravel()],
        }
    save_document(path, {'metadata': dict(metadata), 'parameters': parameters})
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path):
    """Read a checkpoint; returns ``(metadata, [(name, ndarray), ...])``."""
    try:
        document = load_document(path)
        metadata = document['metadata']
        named_arrays = []
        for name, entry in document['parameters'].items():
            shape = tuple(int(d) for d in entry['shape'])
            values = np.asarray(entry['values'], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"parameter {name}: {values.size} values do not fill shape {shape}")
            named_arrays.append((name, values.reshape(shape)))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e
    return metadata, named_arrays
