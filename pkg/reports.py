import json
import logging
import os
import tempfile

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def _atomic_write(path, text):
    # Temp file in the target directory so the rename stays on one filesystem
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_csv(df, path):
    """
    Write a DataFrame as CSV with round-trip float precision.

    Args:
        df (pandas.DataFrame): table to write
        path (str): destination file

    Returns:
        str: the path written
    """
    if df is None:
        df = pd.DataFrame()
    return _atomic_write(path, df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def write_json(obj, path):
    """Write a JSON document with sorted keys and 4-space indent."""
    text = json.dumps(obj, indent=4, sort_keys=True, default=_json_default)
    return _atomic_write(path, text + "\n")


def summary_frame(rows):
    """
    Metric/Value summary table for the console and for summary CSVs.

    Args:
        rows (dict): metric name to value

    Returns:
        pandas.DataFrame: two columns, Metric and Value
    """
    return pd.DataFrame({"Metric": list(rows.keys()), "Value": [str(v) for v in rows.values()]})
