from __future__ import annotations

import sys
from pathlib import Path

import pytest

from opshap.game import Coalition, ValueFunction

REPO_ROOT = Path(__file__).resolve().parent.parent
EVALUATORS = Path(__file__).resolve().parent / "evaluators"


class FnGame(ValueFunction):
    """Value function defined by a plain function over bitmasks."""

    concurrent_safe = True

    def __init__(self, n: int, fn):
        super().__init__()
        self._n = n
        self._fn = fn
        self.calls = 0

    @property
    def n_players(self) -> int:
        return self._n

    def evaluate(self, coalition: Coalition) -> float:
        self.calls += 1
        return self._fn(coalition.bits)


@pytest.fixture
def fn_game():
    return FnGame


def python_cmd(script: str, *args: str) -> list[str]:
    return [sys.executable, str(EVALUATORS / script), *args]


def loopback_cmd(game: str, *extra: str) -> list[str]:
    return [sys.executable, "-m", "opshap.loopback", "--game", game, *extra]
