import json
import os

from .config import DataError


def appendToJson(filepath, item):
    """
    Append a JSON object to a list file.

    Args:
        filepath: Path of the JSON list (created when missing)
        item (dict): Entry to append, e.g. one finished run
    """
    filepath = os.path.abspath(filepath)

    # a missing or unreadable run log restarts the list
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (FileNotFoundError, json.JSONDecodeError):
        data = []

    data.append(item)

    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)


def writeJson(filepath, data):
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def loadManifest(filepath):
    """
    Load the data manifest written by generate-data.

    Returns a dict with 'hospitals' (one entry per hospital: id, files, sizes) and
    the data section it was generated from.
    """
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise DataError(f"no data manifest at '{filepath}'; run generate-data first")
    except json.JSONDecodeError as e:
        raise DataError(f"data manifest '{filepath}' is not valid JSON: {e}")
    if "hospitals" not in manifest or not manifest["hospitals"]:
        raise DataError(f"data manifest '{filepath}' lists no hospitals")
    return manifest
