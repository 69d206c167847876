"""
Run manifests: everything needed to regenerate an artifact, written next to it
as <artifact>.manifest.json. Timestamps live here and never in the artifact.
"""
import hashlib
import json
import platform
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterable, Optional

import psutil

PACKAGES = ('numpy', 'scipy', 'networkx', 'pandas', 'psutil')


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def collect_system_info() -> Dict:
    """Host description for result records"""
    memory = psutil.virtual_memory()
    return {
        'hostname': platform.node(),
        'platform': platform.platform(),
        'arch': platform.machine(),
        'python': platform.python_version(),
        'cpu_count': psutil.cpu_count(logical=True),
        'cpu_physical': psutil.cpu_count(logical=False),
        'memory_gb': round(memory.total / 1024 ** 3, 1),
    }


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'missing'
    return versions


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + '.manifest.json')


def write_manifest(artifact, command: str, params: Dict, inputs: Iterable = (),
                   seeds: Optional[Dict] = None, extra: Optional[Dict] = None) -> Path:
    inputs = [Path(p) for p in inputs if p]
    manifest = {
        'artifact': Path(artifact).name,
        'command': command,
        'argv': sys.argv[1:],
        'params': params,
        'seeds': seeds or {},
        'inputs': {str(p): file_sha256(p) for p in inputs if p.exists()},
        'versions': package_versions(),
        'host': collect_system_info(),
        'created_utc': datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = manifest_path(artifact)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path
