import json
import os
from datetime import datetime

import pandas as pd

# Constants
DATA_DIR = "data"
HISTORY_FILE = os.path.join(DATA_DIR, "run_history.json")


def save_run_history(command, model, outputs, status, timestamp=None, history_file=HISTORY_FILE):
    """
    Append a run to the history ledger.

    Args:
        command (str): CLI subcommand that ran
        model (str): model name
        outputs (list): files written by the run
        status (str): "passed", "failed" or "error"
        timestamp (str, optional): Timestamp for the run. If None, current time is used.
        history_file (str): ledger location
    """
    os.makedirs(os.path.dirname(history_file) or ".", exist_ok=True)

    if timestamp is None:
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")

    history = get_run_history(history_file)
    history.append({
        "command": command,
        "model": model,
        "timestamp": timestamp,
        "outputs": list(outputs),
        "status": status,
    })

    with open(history_file, "w") as f:
        json.dump(history, f, indent=4)


def get_run_history(history_file=HISTORY_FILE):
    """
    Get run history from the ledger.

    Returns:
        list: List of run history entries
    """
    if not os.path.exists(history_file):
        return []

    with open(history_file, "r") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError:
            return []


def history_frame(history_file=HISTORY_FILE):
    """Run history as a DataFrame, newest first."""
    history = get_run_history(history_file)
    if not history:
        return pd.DataFrame(columns=["command", "model", "timestamp", "outputs", "status"])

    history_df = pd.DataFrame(history)
    if "timestamp" in history_df.columns:
        history_df["timestamp"] = pd.to_datetime(history_df["timestamp"])
        history_df = history_df.sort_values("timestamp", ascending=False, kind="stable")
    return history_df.reset_index(drop=True)


def clear_run_history(history_file=HISTORY_FILE):
    """
    Clear run history by removing the ledger file.
    """
    if os.path.exists(history_file):
        os.remove(history_file)
