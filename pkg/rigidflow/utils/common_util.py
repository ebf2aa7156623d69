import hashlib
import logging
import os
from typing import Optional


OUTPUT_ROOT_VARIABLE = "RIGIDFLOW_OUT"


def check_write_access(path: str):
    """
    Check if you can write on the provided path or raise an error otherwise

    Parameters
    ----------
    path : str
        A directory path, created when missing

    Raises
    ------
    PermissionError
        If you can't write on the provided path
    """

    try:
        os.makedirs(path, exist_ok=True)
        marker = os.path.join(path, ".write_check")
        with open(marker, "a"):
            pass
        os.remove(marker)
    except Exception:
        raise PermissionError(f"You can't write on the provided path: {path}")


def output_root(default: Optional[str] = ".") -> str:
    """Output root directory, overridden by the RIGIDFLOW_OUT environment variable"""
    return os.getenv(OUTPUT_ROOT_VARIABLE, default)


def file_hash(path: str) -> str:
    """sha256 hex digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def logging_initialize(verbose: Optional[bool] = False):
    """
    Logging initialize method. If verbose mode is True the logging will be initialized on DEBUG mode.
    Otherwise, INFO mode will be used

    Parameters
    ----------
    verbose : bool, optional
        If the logging needs to be verbose, by default False
    """

    logging.basicConfig(level=getattr(logging, "DEBUG" if verbose else "INFO"),
                        format="%(asctime)s %(levelname)s: %(message)s")
