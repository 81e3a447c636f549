#!/usr/bin/env python3
"""
Seed Utilities - Shared random generator plumbing.

All randomness in the toolkit flows through explicit seeds. Generators use
the counter-based Philox bit generator, and child seeds are derived by
hashing (master, indices...) through numpy's SeedSequence spawn keys, so a
child seed depends only on its indices and never on call order.
"""

from typing import Union

import numpy as np

SeedLike = Union[int, np.integer, np.random.SeedSequence]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """
    Build an independent generator for a seed.

    Args:
        seed: Non-negative integer or SeedSequence

    Returns:
        numpy Generator backed by Philox

    Examples:
        >>> make_rng(7).integers(0, 10) == make_rng(7).integers(0, 10)
        True
    """
    if isinstance(seed, (int, np.integer)) and seed < 0:
        raise ValueError(f"Seeds must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def child_seed(master: int, *indices: int) -> int:
    """
    Derive a 64-bit child seed from a master seed and integer indices.

    The mixing is SeedSequence's entropy hash with the indices as spawn key,
    which is fixed by numpy and documented there.

    Args:
        master: Master seed
        *indices: Position of the child (e.g. rank index, sparsity index, trial)

    Returns:
        Child seed as a Python int in [0, 2**64)
    """
    spawn_key = tuple(int(i) for i in indices)
    sequence = np.random.SeedSequence(int(master), spawn_key=spawn_key)
    return int(sequence.generate_state(1, np.uint64)[0])
