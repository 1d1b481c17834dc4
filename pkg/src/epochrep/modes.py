"""Execution-mode variants used as ablation baselines.

``GEOGAUSS`` executes optimistically on the latest snapshot and validates
per epoch. ``GEOG_S`` holds a transaction of start epoch i until snapshot
i - 1 exists and commits it in epoch i. ``GEOG_A`` applies writes at once with
last-writer-wins and never reports commit or abort.
"""

from __future__ import annotations

import enum


class ExecutionMode(enum.Enum):
    GEOGAUSS = "geogauss"
    GEOG_S = "geog_s"
    GEOG_A = "geog_a"


class Gate(enum.Enum):
    PROCEED = "proceed"
    DEFER = "defer"


def gate_execution(mode: ExecutionMode, sen: int, lsn: int) -> Gate:
    """May a transaction with start epoch ``sen`` begin executing at snapshot ``lsn``?"""
    if mode is ExecutionMode.GEOG_S and lsn < sen - 1:
        return Gate.DEFER
    return Gate.PROCEED


def uses_barriers(mode: ExecutionMode) -> bool:
    return mode is not ExecutionMode.GEOG_A


def transactional(mode: ExecutionMode) -> bool:
    """False when clients only get per-operation acceptance."""
    return mode is not ExecutionMode.GEOG_A
