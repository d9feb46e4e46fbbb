import os

from .config import SPLITS, TENSOR_SUFFIX


def ensureFolderExists(path):
    """
    Create the folder if it doesn't already exist.

    Returns the path.
    """
    os.makedirs(path, exist_ok=True)
    return path


def createTensorFilepath(dataDir, hospitalId, split):
    """
    Generate the file path of one hospital split.

    Args:
        dataDir: The data folder
        hospitalId: Index of the hospital
        split: One of 'train', 'val', 'test'

    Returns a full filepath in dataDir.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}', expected one of {SPLITS}")
    return os.path.join(dataDir, f"hospital_{hospitalId:02d}_{split}{TENSOR_SUFFIX}")


def createRunFolder(outDir, mode, seed):
    """Run directory {outDir}/{mode}_seed{seed} with its stage checkpoint folders."""
    runDir = os.path.join(outDir, f"{mode}_seed{seed}")
    for sub in ("stage1", "stage2", "synthetic"):
        ensureFolderExists(os.path.join(runDir, sub))
    return runDir
