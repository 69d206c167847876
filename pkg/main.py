import sys

from src.bench.cli import run
from src.utils.logger import setup_logger
from src.utils.paths import OUTPUT_DIR

logger = setup_logger('main')


def main(argv=None) -> int:
    """Entry point: python main.py <command> [flags]"""
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
    code = run(sys.argv[1:] if argv is None else argv)
    if code:
        logger.debug(f"exiting with status {code}")
    return code


if __name__ == '__main__':
    sys.exit(main())
