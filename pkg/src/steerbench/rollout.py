"""Candidate generation over a pool of environment replicas.

``hypothesize_predict`` advances K autoregressive candidates in lockstep:
each candidate alternates policy token draws with predicted transitions
until it emits THINK, producing a variable-length action sequence plus
its predicted state trace and a virtual-time generation-finish instant
from the batched sampling schedule. After selection, ``sync_pool``
resets every replica to the chosen outcome so the next reasoning step
starts from a single world state.

Candidate randomness comes from per-candidate seed streams derived from
(episode seed, segment index, candidate index); candidates never share a
stream, so permuting streams permutes outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import PlanRecord, PolicyConfig, next_token, open_segment
from .taskworld import (
    DYNAMICS_TOKENS,
    ActionToken,
    WorldState,
    state_hash,
    step,
)
from .verify import LatencyModel, sampling_step_cost


class PoolDesyncError(Exception):
    """Replicas disagree at a reasoning-step boundary."""


class StaleCandidateError(Exception):
    """Candidate was produced from a different pool state."""


@dataclass
class EnvPool:
    replicas: list[WorldState]
    k: int
    base_hash: int

    def check_synchronized(self) -> None:
        hashes = {state_hash(s) for s in self.replicas}
        if hashes != {self.base_hash}:
            raise PoolDesyncError(
                f"replica hashes {hashes} != base {self.base_hash}"
            )


def make_pool(state: WorldState, k: int) -> EnvPool:
    if k < 1:
        raise ValueError("pool size must be >= 1")
    return EnvPool(replicas=[state] * k, k=k, base_hash=state_hash(state))


@dataclass(frozen=True)
class CandidateRollout:
    """One hypothesized action sequence with its predicted outcome.

    ``tokens`` ends in THINK; ``trace`` holds the predicted state after
    each dynamics action, so ``len(trace) == segment_len`` and a
    think-first candidate has an empty trace. ``gen_finish`` is relative
    to the segment start: each action token costs one batched sampling
    step, and the terminating THINK marks the boundary at no extra cost,
    so the candidate is ready ``segment_len`` batch steps in.
    """

    index: int
    tokens: tuple[ActionToken, ...]
    trace: tuple[WorldState, ...]
    gen_finish: float
    segment_len: int
    base_hash: int
    base_state: WorldState

    def final_state(self) -> WorldState:
        """Predicted outcome; the base state for a think-first candidate."""
        return self.trace[-1] if self.trace else self.base_state


def _candidate_streams(
    rng: np.random.SeedSequence | Sequence[np.random.SeedSequence], k: int
) -> list[np.random.SeedSequence]:
    if isinstance(rng, np.random.SeedSequence):
        return rng.spawn(k)
    streams = list(rng)
    if len(streams) != k:
        raise ValueError(f"need {k} candidate streams, got {len(streams)}")
    return streams


def hypothesize_predict(
    pool: EnvPool,
    plan: PlanRecord,
    cfg: PolicyConfig,
    lat: LatencyModel,
    rng: np.random.SeedSequence | Sequence[np.random.SeedSequence],
) -> list[CandidateRollout]:
    """Generate K candidate action sequences with predicted traces.

    With ``cfg.dynamics_noise > 0`` the predicted transition substitutes a
    uniformly random action with that probability per step, modeling an
    imperfect predictor; the policy's token stream is unaffected.
    """
    pool.check_synchronized()
    step_ms = sampling_step_cost(pool.k, lat)
    out = []
    for index, stream in enumerate(_candidate_streams(rng, pool.k)):
        gen = np.random.default_rng(stream)
        base = pool.replicas[index]
        state = base
        seg = open_segment(plan, state, cfg, gen)
        tokens: list[ActionToken] = []
        trace: list[WorldState] = []
        while True:
            tok = next_token(state, seg, cfg, gen)
            tokens.append(tok)
            if tok is ActionToken.THINK:
                break
            applied = tok
            if cfg.dynamics_noise > 0 and gen.random() < cfg.dynamics_noise:
                applied = DYNAMICS_TOKENS[int(gen.integers(0, len(DYNAMICS_TOKENS)))]
            state = step(state, applied)
            trace.append(state)
        pool.replicas[index] = state
        out.append(
            CandidateRollout(
                index=index,
                tokens=tuple(tokens),
                trace=tuple(trace),
                gen_finish=(len(tokens) - 1) * step_ms,
                segment_len=len(tokens) - 1,
                base_hash=pool.base_hash,
                base_state=base,
            )
        )
    return out


def replay_tokens(base: WorldState, tokens: Sequence[ActionToken]) -> WorldState:
    """Execute a token list on the true dynamics (THINK entries skipped)."""
    state = base
    for tok in tokens:
        if tok is ActionToken.THINK:
            continue
        state = step(state, tok)
    return state


def sync_pool(pool: EnvPool, chosen: CandidateRollout) -> EnvPool:
    """Set every replica to the chosen candidate's final state and update
    the pool hash. Rejects candidates generated from a different base."""
    if chosen.base_hash != pool.base_hash:
        raise StaleCandidateError(
            f"candidate base {chosen.base_hash} != pool base {pool.base_hash}"
        )
    return sync_pool_to_state(pool, chosen.final_state())


def sync_pool_to_state(pool: EnvPool, target: WorldState) -> EnvPool:
    """Reset all replicas to an explicit state (used when the executed
    outcome diverges from the prediction under dynamics noise)."""
    pool.replicas = [target] * pool.k
    pool.base_hash = state_hash(target)
    return pool
