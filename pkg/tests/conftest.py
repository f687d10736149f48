import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import ribeval
from ribeval import _kernels
from ribeval.volume_io import Volume


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    """Run a test under both kernel backends."""
    previous = _kernels.get_backend()
    try:
        _kernels.set_backend(request.param)
    except ImportError:
        pytest.skip(f"{request.param} backend unavailable")
    yield request.param
    _kernels.set_backend(previous)


@pytest.fixture
def vol():
    def make(data, kind, spacing=(1.0, 1.0, 1.0)):
        return Volume(np.asarray(data), spacing, kind)

    return make


def load_schema(name):
    """Load a shipped JSON schema with the manifest $ref inlined."""
    base = Path(ribeval.__file__).parent / "schemas"
    schema = json.loads((base / name).read_text())
    manifest = json.loads((base / "manifest.schema.json").read_text())
    manifest = {k: v for k, v in manifest.items() if k != "$schema"}

    def inline(node):
        if isinstance(node, dict):
            if node.get("$ref") == "manifest.schema.json":
                return manifest
            return {k: inline(v) for k, v in node.items()}
        if isinstance(node, list):
            return [inline(x) for x in node]
        return node

    return inline(schema)
