import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List

import jsonschema
import numpy as np
from loguru import logger

from app.config import config
from app.models import const


def to_json(obj):
    try:

        def serialize(o):
            if isinstance(o, (bool, str)) or o is None:
                return o
            if isinstance(o, (int, np.integer)):
                return int(o)
            if isinstance(o, (float, np.floating)):
                o = float(o)
                # json has no inf/nan literals
                if np.isfinite(o):
                    return o
                return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
            if isinstance(o, np.ndarray):
                return serialize(o.tolist())
            if isinstance(o, dict):
                return {str(k): serialize(v) for k, v in o.items()}
            if isinstance(o, (list, tuple)):
                return [serialize(item) for item in o]
            if hasattr(o, "model_dump"):
                return serialize(o.model_dump())
            if hasattr(o, "__dict__"):
                return serialize(o.__dict__)
            return None

        serialized_obj = serialize(obj)
        return json.dumps(serialized_obj, ensure_ascii=False, indent=4, sort_keys=False)
    except Exception as e:
        logger.error(f"to_json failed: {str(e)}")
        return None


def root_dir():
    return os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))


def storage_dir(sub_dir: str = "", create: bool = False):
    d = os.path.join(root_dir(), "storage")
    if sub_dir:
        d = os.path.join(d, sub_dir)
    if create and not os.path.exists(d):
        os.makedirs(d)
    return d


def schema_dir(sub_dir: str = ""):
    d = os.path.join(root_dir(), "schema")
    if sub_dir:
        d = os.path.join(d, sub_dir)
    return d


def output_dir(base: str, sub_dir: str = "") -> str:
    d = base
    if sub_dir:
        d = os.path.join(d, sub_dir)
    if not os.path.exists(d):
        os.makedirs(d)
    return d


def write_json(path: str, obj) -> str:
    content = to_json(obj)
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)
        f.write("\n")
    return path


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.loads(f.read())


def write_columns_csv(path: str, header: List[str], columns: List[np.ndarray]) -> str:
    data = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=const.CSV_FLOAT_FORMAT)
    return path


def get_threads() -> int:
    """Worker count: JUMPGEN_THREADS, then [parallel].threads, 0 meaning cpu count."""
    raw = os.getenv("JUMPGEN_THREADS", "")
    try:
        n = int(raw) if raw.strip() else int(config.parallel.get("threads", 0))
    except ValueError:
        logger.warning(f"invalid JUMPGEN_THREADS={raw!r}, falling back to auto")
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def parallel_map(func: Callable, items: Iterable, threads: int = None) -> list:
    """Map ``func`` over ``items`` on a thread pool, preserving input order."""
    items = list(items)
    workers = min(threads or get_threads(), max(len(items), 1))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def line_fit(x: np.ndarray, y: np.ndarray, weights: np.ndarray = None):
    """Least-squares line y ~ intercept + slope*x; returns (slope, intercept, rms residual)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    w = None if weights is None else np.sqrt(np.asarray(weights, dtype=float).ravel())
    slope, intercept = np.polyfit(x, y, 1, w=w)
    resid = y - (intercept + slope * x)
    if weights is None:
        rms = float(np.sqrt(np.mean(resid**2)))
    else:
        wt = np.asarray(weights, dtype=float).ravel()
        rms = float(np.sqrt(np.sum(wt * resid**2) / np.sum(wt)))
    return float(slope), float(intercept), rms


def load_schema(name: str) -> dict:
    return load_json(os.path.join(schema_dir(), name))


def schema_errors(obj, schema_name: str) -> List[jsonschema.ValidationError]:
    """Schema violations of ``obj``, ordered by their position in the document."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    return sorted(validator.iter_errors(obj), key=lambda e: [str(p) for p in e.absolute_path])
