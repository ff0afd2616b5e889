"""Parallel lookback sampling: explore M short continuations, keep the best.

Right after a lookback template is injected, M continuations of at most H
tokens are sampled with distinct seeds. Each is scored under the real and
noise contexts and summarized by a visual-helpfulness score

    V = -(1/H) * sum of delta_content over its scored tokens

so branches whose tokens get much easier with the actual image content score
high. Decoding resumes from the argmax branch; every branch's tokens count
against the budget because the exploration was actually paid for.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Any, Optional, Sequence

from .backend.noise import make_noise_context
from .backend.types import (
    Backend,
    ContextKind,
    GenerateRequest,
    SamplingParams,
    ScoreRequest,
    VisualContext,
)
from .errors import (
    BackendError,
    DataIntegrityError,
    PreconditionError,
)

if TYPE_CHECKING:
    from .controller import DecodeSession

LOGGER = logging.getLogger(__name__)

DEFAULT_M = 4
DEFAULT_H = 64
BRANCH_SEED_BASE = 10_000
BRANCH_SEED_STRIDE = 100


@dataclass(frozen=True)
class BranchingConfig:
    enabled: bool = False
    m_branches: int = DEFAULT_M
    horizon: int = DEFAULT_H

    def __post_init__(self):
        if self.enabled and self.m_branches < 2:
            raise PreconditionError(
                f"branching needs at least 2 branches, got {self.m_branches}"
            )
        if self.horizon < 1:
            raise PreconditionError(f"branch horizon must be >= 1, got {self.horizon}")


@dataclass(frozen=True)
class Branch:
    seed: int
    tokens: tuple[tuple[str, float], ...]  # (text, generation logprob)
    delta_content: tuple[float, ...]
    score: float
    stopped_early: bool

    def __post_init__(self):
        if len(self.delta_content) != len(self.tokens):
            raise PreconditionError("branch deltas must align with its tokens")


@dataclass(frozen=True)
class BranchSet:
    origin_step: int
    horizon: int
    branches: tuple[Branch, ...]

    def total_tokens(self) -> int:
        return sum(len(b.tokens) for b in self.branches)


@dataclass(frozen=True)
class BranchLog:
    origin_step: int
    horizon: int
    scores: tuple[tuple[int, float, int], ...]  # (seed, V, n_tokens)
    winner_seed: int
    winner_index: int
    token_overhead: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "origin_step": self.origin_step,
            "horizon": self.horizon,
            "branches": [
                {"seed": seed, "score": score, "n_tokens": n}
                for seed, score, n in self.scores
            ],
            "winner_seed": self.winner_seed,
            "winner_index": self.winner_index,
            "token_overhead": self.token_overhead,
        }


def branch_score(deltas: Sequence[float]) -> float:
    """Visual-helpfulness score of one continuation from its content deltas."""
    if not deltas:
        raise PreconditionError("cannot score a branch with no scored tokens")
    return -sum(deltas) / len(deltas)


def branch_seeds(base_seed: int, m: int) -> tuple[int, ...]:
    """Distinct deterministic seeds for the M branches of one trigger."""
    return tuple(BRANCH_SEED_BASE + BRANCH_SEED_STRIDE * base_seed + i
                 for i in range(m))


def _generate_branch(backend: Backend, question_text: str, context: VisualContext,
                     prefix: tuple[str, ...], sampling: SamplingParams,
                     seed: int, horizon: int, model_id: str):
    request = GenerateRequest(
        question_text=question_text,
        context=context,
        prefix=prefix,
        sampling=replace(sampling, seed=seed, max_new_tokens=horizon),
        model_id=model_id,
    )
    stream = backend.generate_stream(request)
    tokens = [(chunk.text, chunk.logprob) for chunk in stream]
    stopped_early = len(tokens) < horizon and not stream.truncated
    return tokens, stopped_early


def spawn_branches(
    backend: Backend,
    question_text: str,
    context: VisualContext,
    prefix: tuple[str, ...],
    sampling: SamplingParams,
    m: int = DEFAULT_M,
    horizon: int = DEFAULT_H,
    origin_step: int = 0,
    model_id: str = "",
    noise_seed: int = 0,
) -> BranchSet:
    """Sample and score M continuations of the current prefix.

    A branch whose generation or scoring fails is dropped with a warning as
    long as at least one branch survives; losing all of them is an error.
    """
    if m < 2:
        raise PreconditionError(f"need at least 2 branches, got {m}")
    if context.kind is not ContextKind.REAL:
        raise PreconditionError(
            f"branch scoring contrasts real vs noise contexts; got "
            f"{context.kind.value} context"
        )
    noise = make_noise_context(context, run_seed=noise_seed)
    seeds = branch_seeds(sampling.seed, m)

    with ThreadPoolExecutor(max_workers=m) as pool:
        futures = {
            seed: pool.submit(_generate_branch, backend, question_text, context,
                              prefix, sampling, seed, horizon, model_id)
            for seed in seeds
        }
        generated: dict[int, tuple[list[tuple[str, float]], bool]] = {}
        for seed in seeds:
            try:
                generated[seed] = futures[seed].result()
            except (BackendError, DataIntegrityError) as exc:
                LOGGER.warning("branch seed=%d generation failed: %s", seed, exc)

    candidates = {seed: g for seed, g in generated.items() if g[0]}
    for seed in generated:
        if seed not in candidates:
            LOGGER.warning("branch seed=%d produced no tokens, dropped", seed)
    if not candidates:
        raise BackendError("all branches failed to generate")

    def score_branch(seed: int) -> Branch:
        tokens, stopped_early = candidates[seed]
        forced = prefix + tuple(text for text, _ in tokens)
        real_req = ScoreRequest(question_text=question_text, context=context,
                                forced_continuation=forced, model_id=model_id)
        noise_req = ScoreRequest(question_text=question_text, context=noise,
                                 forced_continuation=forced, model_id=model_id)
        real_lps = backend.score(real_req).logprobs
        noise_lps = backend.score(noise_req).logprobs
        tail = len(tokens)
        deltas = tuple(
            math.exp(-r) - math.exp(-n)
            for r, n in zip(real_lps[-tail:], noise_lps[-tail:])
        )
        if stopped_early:
            LOGGER.info(
                "branch seed=%d stopped at %d of %d tokens; score averages "
                "over actual length", seed, tail, horizon,
            )
        return Branch(seed=seed, tokens=tuple(tokens), delta_content=deltas,
                      score=branch_score(deltas), stopped_early=stopped_early)

    branches: list[Branch] = []
    with ThreadPoolExecutor(max_workers=2 * m) as pool:
        scored = {seed: pool.submit(score_branch, seed) for seed in candidates}
        for seed in sorted(candidates):
            try:
                branches.append(scored[seed].result())
            except (BackendError, DataIntegrityError) as exc:
                LOGGER.warning("branch seed=%d scoring failed, dropped: %s", seed, exc)
    if not branches:
        raise BackendError("no branch survived scoring")
    return BranchSet(origin_step=origin_step, horizon=horizon,
                     branches=tuple(branches))


def select_branch(branch_set: BranchSet) -> int:
    """Index of the best branch: maximal score, ties to the lowest seed."""
    if not branch_set.branches:
        raise PreconditionError("cannot select from an empty branch set")
    best = 0
    for i, branch in enumerate(branch_set.branches[1:], start=1):
        current = branch_set.branches[best]
        if branch.score > current.score or (
                branch.score == current.score and branch.seed < current.seed):
            best = i
    return best


def branch_phase(
    backend: Backend,
    question_text: str,
    context: VisualContext,
    session: "DecodeSession",
    sampling: SamplingParams,
    branching: BranchingConfig,
    model_id: str = "",
) -> Optional[BranchLog]:
    """Run one explore-select round and fold the winner into the session."""
    if not branching.enabled:
        return None
    origin = len(session.emitted)
    branch_set = spawn_branches(
        backend=backend,
        question_text=question_text,
        context=context,
        prefix=session.emitted_texts(),
        sampling=sampling,
        m=branching.m_branches,
        horizon=branching.horizon,
        origin_step=origin,
        model_id=model_id,
        noise_seed=sampling.seed,
    )
    # Every branch is billed; the winner's tokens were paid for above.
    session.budget_used += branch_set.total_tokens()
    winner = select_branch(branch_set)
    for text, logprob in branch_set.branches[winner].tokens:
        session.push_generated(text, logprob, bill=False)
    return BranchLog(
        origin_step=origin,
        horizon=branch_set.horizon,
        scores=tuple((b.seed, b.score, len(b.tokens)) for b in branch_set.branches),
        winner_seed=branch_set.branches[winner].seed,
        winner_index=winner,
        token_overhead=branch_set.total_tokens(),
    )
