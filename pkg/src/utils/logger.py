import logging
from datetime import datetime

from .config import LOG_LEVEL, PROGRESS_LOG_INTERVAL
from .errors import UsageError

PROGRESS_MARKERS = ('episode', 'outer iteration', 'walk progress')
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

_level = LOG_LEVEL
_named = set()


class LogFilter(logging.Filter):
    def __init__(self, interval=PROGRESS_LOG_INTERVAL):
        super().__init__()
        self.last_progress_log = 0  # Timestamp of last progress line
        self.progress_log_interval = interval

    def filter(self, record):
        # Always show warnings and errors
        if record.levelno >= logging.WARNING:
            return True

        # Throttle per-episode / per-iteration progress chatter
        message = str(record.msg).lower()
        if any(marker in message for marker in PROGRESS_MARKERS):
            current_time = datetime.now().timestamp()
            if current_time - self.last_progress_log >= self.progress_log_interval:
                self.last_progress_log = current_time
                return True
            return False

        return True


def setup_logger(name):
    """Set up and return a logger with console output and throttled progress messages"""
    logger = logging.getLogger(name)
    logger.setLevel(_level)
    _named.add(name)

    if not logger.handlers:
        console_handler = logging.StreamHandler()
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        console_handler.setFormatter(formatter)
        console_handler.addFilter(LogFilter())
        logger.addHandler(console_handler)
        logger.propagate = False

    return logger


def set_log_level(level: str):
    """Apply a level to every logger handed out so far and to later ones"""
    global _level
    level = level.upper()
    if level not in LOG_LEVELS:
        raise UsageError(f"unknown log level {level!r}; choose from {', '.join(LOG_LEVELS)}")
    _level = level
    for name in _named:
        logging.getLogger(name).setLevel(level)


def print_status(msg, msg_type="INFO"):
    """Print a status line for CLI users"""
    if msg_type == "DEBUG" and _level != 'DEBUG':
        return

    timestamp = datetime.now().strftime('%H:%M:%S')

    type_config = {
        "SUCCESS": {"icon": "[✓]", "prefix": "\033[92m"},  # Green
        "ERROR": {"icon": "[✗]", "prefix": "\033[91m"},    # Red
        "WARNING": {"icon": "[!]", "prefix": "\033[93m"},  # Yellow
        "INFO": {"icon": "[i]", "prefix": ""},
        "DEBUG": {"icon": "[D]", "prefix": "\033[90m"}     # Gray
    }.get(msg_type, {"icon": "[·]", "prefix": ""})

    formatted_msg = f"[{timestamp}] {type_config['icon']} {type_config['prefix']}{msg}\033[0m"

    try:
        print(formatted_msg)
    except UnicodeEncodeError:
        # Consoles without UTF-8 get plain ASCII, no colours
        safe_msg = f"[{timestamp}] {type_config['icon']} {msg}"
        print(safe_msg.encode('ascii', 'replace').decode('ascii'))
