import os
from pathlib import Path

# Base paths
ROOT_DIR = Path(__file__).parent.parent.parent
DATA_DIR = ROOT_DIR / "data"
OUTPUT_DIR = Path(os.getenv('QCOGNI_OUTPUT_ROOT', str(ROOT_DIR / "runs")))
