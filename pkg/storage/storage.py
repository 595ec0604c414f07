# storage/storage.py
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, TypeVar

import pandas as pd
from dotenv import load_dotenv

from services.errors import InvalidInputError

load_dotenv()

OUTPUT_DIR = os.getenv("DOB_OUTPUT_DIR", "")
LOG_LEVEL = os.getenv("DOB_LOG_LEVEL", "INFO").upper()
WORKERS = int(os.getenv("DOB_WORKERS", "1"))

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_path(path: str) -> Path:
    candidate = Path(path)
    if candidate.is_absolute() or not OUTPUT_DIR:
        return candidate
    return Path(OUTPUT_DIR) / candidate


def read_document(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise InvalidInputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config file {path} is not valid JSON: {exc.msg}")
    if not isinstance(data, dict):
        raise InvalidInputError(f"config file {path} must hold a JSON object")
    return data


def write_report(data, path: Optional[str] = None) -> None:
    text = json.dumps(data, indent=2, sort_keys=False)
    if path is None:
        sys.stdout.write(text + "\n")
        return
    target = resolve_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text + "\n", encoding="utf-8")
    logger.info("report written to %s", target)


def write_table(frame: pd.DataFrame, path: Optional[str] = None) -> None:
    if path is None:
        frame.to_csv(sys.stdout, index=False)
        return
    target = resolve_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False)
    logger.info("table with %d rows written to %s", len(frame), target)


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Map over independent work items; results keep input order."""
    items = list(items)
    if WORKERS <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=WORKERS) as pool:
        return list(pool.map(fn, items))
