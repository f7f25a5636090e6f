"""Episodic case bank with similarity- and value-weighted sampling.

Selection weights are ``max(sim, floor)**beta * exp(q / tau)``; with
``beta = 0`` this is a plain softmax over Q-values. The bank persists as
an append-only JSONL event log and is rebuilt by replay on open.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from filelock import FileLock

from .clock import utcnow_iso
from .embed import DEFAULT_EMBEDDER, EmbeddingProvider

log = logging.getLogger(__name__)


class NoCases(LookupError):
    pass


class CaseNotFound(KeyError):
    pass


@dataclass(frozen=True)
class SelectionPolicy:
    tau: float = 0.5
    beta: float = 1.0
    alpha: float = 0.2
    sim_floor: float = 1e-6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.sim_floor < 1:
            raise ValueError("sim_floor must lie in (0, 1)")


@dataclass
class EpisodicCase:
    case_id: str
    statement: str
    state_vec: np.ndarray
    plan_template: dict
    q_value: float
    outcomes: list[tuple[float, str]] = field(default_factory=list)

    @property
    def visit_count(self) -> int:
        return len(self.outcomes)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "statement": self.statement,
            "plan_template": self.plan_template,
            "q_value": self.q_value,
            "visit_count": self.visit_count,
            "outcomes": [list(o) for o in self.outcomes],
        }


def _check_reward(reward: float) -> float:
    r = float(reward)
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"reward {reward} outside [0, 1]")
    return r


def selection_distribution(state: np.ndarray, vectors: np.ndarray, q: np.ndarray, policy: SelectionPolicy) -> np.ndarray:
    """Normalised weights, computed in log space to survive small tau."""
    sims = np.clip(vectors @ state, 0.0, 1.0) if len(vectors) else np.zeros(0)
    logw = policy.beta * np.log(np.maximum(sims, policy.sim_floor)) + q / policy.tau
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


class MemoryBank:
    """In-memory bank, optionally backed by a JSONL event log."""

    def __init__(
        self,
        path: Optional[Path] = None,
        policy: SelectionPolicy = SelectionPolicy(),
        embedder: Optional[EmbeddingProvider] = None,
    ):
        self.path = Path(path) if path else None
        self.policy = policy
        self.embedder = embedder or DEFAULT_EMBEDDER
        self._cases: dict[str, EpisodicCase] = {}
        self._matrix: Optional[np.ndarray] = None
        if self.path and self.path.exists():
            self._replay()

    # -- persistence

    def _replay(self) -> None:
        lines = self.path.read_text(encoding="utf-8").splitlines()
        for n, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError:
                if n == len(lines) - 1:
                    log.warning("%s: ignoring torn final event", self.path.name)
                    break
                raise
            self._apply(ev)

    def _apply(self, ev: dict) -> None:
        payload = ev["payload"]
        if ev["event"] == "insert":
            r = payload["reward"]
            self._cases[ev["case_id"]] = EpisodicCase(
                ev["case_id"],
                payload["statement"],
                self.embedder.embed(payload["statement"]),
                payload.get("plan_template") or {},
                r,
                [(r, ev["ts"])],
            )
        elif ev["event"] == "update":
            case = self._cases[ev["case_id"]]
            r = payload["reward"]
            case.q_value = case.q_value + payload.get("alpha", self.policy.alpha) * (r - case.q_value)
            case.q_value = min(1.0, max(0.0, case.q_value))
            case.outcomes.append((r, ev["ts"]))
        else:
            raise ValueError(f"unknown event {ev['event']!r}")
        self._matrix = None

    def _log(self, ev: dict) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        line = json.dumps(ev, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
        with FileLock(str(self.path) + ".lock"):
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    # -- mutation

    def insert(self, statement: str, plan_template: Optional[dict] = None, reward: float = 0.0) -> str:
        if not statement or not statement.strip():
            raise ValueError("empty statement")
        r = _check_reward(reward)
        case_id = f"c{len(self._cases) + 1:06d}"
        while case_id in self._cases:
            case_id += "_"
        ev = {"event": "insert", "case_id": case_id, "ts": utcnow_iso(),
              "payload": {"statement": statement, "plan_template": plan_template or {}, "reward": r}}
        self._log(ev)
        self._apply(ev)
        return case_id

    def update(self, case_id: str, reward: float) -> EpisodicCase:
        if case_id not in self._cases:
            raise CaseNotFound(case_id)
        r = _check_reward(reward)
        ev = {"event": "update", "case_id": case_id, "ts": utcnow_iso(),
              "payload": {"reward": r, "alpha": self.policy.alpha}}
        self._log(ev)
        self._apply(ev)
        return self._cases[case_id]

    # -- reads

    def __len__(self) -> int:
        return len(self._cases)

    def __contains__(self, case_id: str) -> bool:
        return case_id in self._cases

    def get(self, case_id: str) -> EpisodicCase:
        try:
            return self._cases[case_id]
        except KeyError:
            raise CaseNotFound(case_id) from None

    def cases(self) -> list[EpisodicCase]:
        return list(self._cases.values())

    def _arrays(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        ids = list(self._cases)
        if self._matrix is None:
            self._matrix = np.vstack([self._cases[i].state_vec for i in ids]) if ids else np.zeros((0, self.embedder.dim))
        q = np.array([self._cases[i].q_value for i in ids], dtype=np.float64)
        return ids, self._matrix, q

    def distribution(self, state: np.ndarray, policy: Optional[SelectionPolicy] = None) -> dict[str, float]:
        if not self._cases:
            raise NoCases("memory bank is empty")
        ids, mat, q = self._arrays()
        p = selection_distribution(np.asarray(state, dtype=np.float64), mat, q, policy or self.policy)
        return dict(zip(ids, p.tolist()))

    def select(self, state: np.ndarray, policy: Optional[SelectionPolicy] = None, rng=None):
        """Draw one case; returns ``(case, distribution)``."""
        dist = self.distribution(state, policy)
        rng = rng if rng is not None else np.random.default_rng()
        ids = list(dist)
        cdf = np.cumsum(list(dist.values()))
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return self._cases[ids[min(i, len(ids) - 1)]], dist

    def sample_many(self, state: np.ndarray, n: int, rng, policy: Optional[SelectionPolicy] = None) -> np.ndarray:
        """Counts per case (bank order) over ``n`` independent draws."""
        dist = self.distribution(state, policy)
        cdf = np.cumsum(list(dist.values()))
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return np.bincount(np.minimum(idx, len(cdf) - 1), minlength=len(cdf))

    def stats(self) -> dict:
        qs = [c.q_value for c in self._cases.values()]
        visits = [c.visit_count for c in self._cases.values()]
        return {
            "cases": len(qs),
            "visits": int(sum(visits)),
            "q_mean": float(np.mean(qs)) if qs else None,
            "q_min": min(qs) if qs else None,
            "q_max": max(qs) if qs else None,
        }

    def top(self, n: int = 10) -> list[EpisodicCase]:
        return sorted(self._cases.values(), key=lambda c: (-c.q_value, -c.visit_count, c.case_id))[:n]


# function-style API


def select_case(state: np.ndarray, bank: MemoryBank, policy: Optional[SelectionPolicy] = None, rng=None):
    return bank.select(state, policy, rng)


def update_case(bank: MemoryBank, case_id: str, reward: float) -> EpisodicCase:
    return bank.update(case_id, reward)


def insert_case(bank: MemoryBank, statement: str, plan_template: Optional[dict] = None, reward: float = 0.0) -> str:
    return bank.insert(statement, plan_template, reward)


def entropy(p) -> float:
    p = np.asarray(list(p.values()) if isinstance(p, dict) else p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())
