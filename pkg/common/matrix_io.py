#!/usr/bin/env python3
"""
Matrix IO - Dense matrix CSV codec used by `cpcp solve`.

Format: first line `m,n`, then m lines of n comma-separated values (row-major).
Values are written with repr() so reading them back is exact.
"""

import csv
import logging
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]


def read_matrix_csv(path: PathLike) -> np.ndarray:
    """
    Read a dense matrix stored as `m,n` header plus row-major values.

    Args:
        path: CSV file path

    Returns:
        The (m, n) float64 matrix

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the header or value count is malformed
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Matrix file not found: {path}")

    with open(path, newline="") as f:
        rows = [row for row in csv.reader(f) if row]

    if not rows or len(rows[0]) != 2:
        raise ValueError(f"Expected header 'm,n' in {path}")
    m, n = int(rows[0][0]), int(rows[0][1])
    values = [float(v) for row in rows[1:] for v in row]
    if len(values) != m * n:
        raise ValueError(f"Expected {m * n} values in {path}, found {len(values)}")

    logging.debug(f"Read {m}x{n} matrix from {path}")
    return np.asarray(values, dtype=float).reshape(m, n)


def write_matrix_csv(matrix: np.ndarray, path: PathLike) -> None:
    """
    Write a dense matrix in the `m,n` header format.

    Args:
        matrix: 2-D array
        path: Destination path (parent directories are created)
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {matrix.shape}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(matrix.shape)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
    logging.debug(f"Wrote {matrix.shape[0]}x{matrix.shape[1]} matrix to {path}")
