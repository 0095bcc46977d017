"""
In-memory event log used by every service.

Events go to a bounded ring buffer (newest first) and are echoed to stderr as
``[LEVEL/SERVICE] message`` when they reach the configured level.
"""
import os
import sys
import threading
from datetime import datetime
from typing import Dict, List, Optional

APP_LOGS: List[Dict] = []
MAX_APP_LOGS = int(os.getenv("AMD_MAX_LOGS", "200"))

LEVELS = {"DEBUG": 10, "INFO": 20, "WARN": 30, "ERROR": 40, "CRITICAL": 50}

_lock = threading.Lock()


def _threshold() -> int:
    return LEVELS.get(os.getenv("AMD_LOG_LEVEL", "INFO").upper(), 20)


def log_app_event(level: str, service: str, message: str, details: Optional[str] = None):
    """Log an event to memory and echo it when it clears AMD_LOG_LEVEL"""
    log_entry = {
        "timestamp": datetime.now().isoformat(),
        "level": level,
        "service": service,
        "message": message,
        "details": details,
    }
    with _lock:
        APP_LOGS.insert(0, log_entry)
        if len(APP_LOGS) > MAX_APP_LOGS:
            APP_LOGS.pop()

    if LEVELS.get(level, 20) >= _threshold():
        print(f"[{level}/{service}] {message}", file=sys.stderr)


def get_app_logs(limit: int = 50, level: Optional[str] = None) -> List[Dict]:
    with _lock:
        logs = list(APP_LOGS)
    if level:
        logs = [entry for entry in logs if entry["level"] == level]
    return logs[:limit]


def clear_app_logs():
    with _lock:
        APP_LOGS.clear()
