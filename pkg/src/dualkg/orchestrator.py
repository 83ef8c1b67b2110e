"""Reasoning loops: Operator/Supervisor dual mode and single-agent strict self-consistency."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

from .kg import KnowledgeGraph
from .llm import (
    MAX_TOKENS_LONG,
    SAMPLING_VARIATIONS,
    Backend,
    CompletionRequest,
    GatewayError,
    SamplingParams,
    ScriptError,
)

# backend failures that end a run as hard_failure; anything else is a bug and propagates
BACKEND_ERRORS = (GatewayError, ScriptError)
from .metrics import normalize_label
from .prompts import (
    PromptSet,
    load_prompt_set,
    operator_messages,
    paraphrase_messages,
    parse_paraphrases,
    single_answer_messages,
    supervisor_messages,
)
from .protocol import Answer, parse_supervisor_turn
from .server import OPERATOR, SUPERVISOR, SessionState, new_session, snapshot_evidence, take_turn

log = logging.getLogger(__name__)

DUAL = "dual"
SINGLE_SC = "single_sc"
MODES = (DUAL, SINGLE_SC)

MULTI_PROMPT = "multi_prompt"
PARAPHRASE = "paraphrase"
SAMPLING_VARIATION = "sampling_variation"
STRATEGIES = (MULTI_PROMPT, PARAPHRASE, SAMPLING_VARIATION)

LIMIT_EXCEEDED = "limit_exceeded"
TRIAL_DISAGREEMENT = "trial_disagreement"
TRIAL_ABSTAINED = "trial_abstained"
HARD_FAILURE = "hard_failure"
ABSTAIN_REASONS = (LIMIT_EXCEEDED, TRIAL_DISAGREEMENT, TRIAL_ABSTAINED, HARD_FAILURE)

DEFAULT_LIMITS = {DUAL: 15, SINGLE_SC: 10}


@dataclass(frozen=True)
class Answered:
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("an answer needs at least one label")


@dataclass(frozen=True)
class Abstained:
    reason: str

    def __post_init__(self) -> None:
        if self.reason not in ABSTAIN_REASONS:
            raise ValueError(f"unknown abstention reason {self.reason!r}")


Verdict = Union[Answered, Abstained]


@dataclass
class RunStats:
    operator_calls: int = 0
    supervisor_calls: int = 0
    iterations: int = 0


@dataclass
class ReasoningResult:
    verdict: Verdict
    transcript: list[dict]
    stats: RunStats
    error: str | None = None

    @property
    def answered(self) -> bool:
        return isinstance(self.verdict, Answered)


@dataclass
class RunConfig:
    mode: str = DUAL
    limit: int | None = None
    trials: int = 3
    strategy: str | None = None
    prompt_set: str | None = None
    operator_sampling: SamplingParams = field(default_factory=SamplingParams)
    supervisor_sampling: SamplingParams = field(default_factory=SamplingParams)
    sampling_variations: tuple[SamplingParams, ...] = tuple(SamplingParams(p, t) for p, t in SAMPLING_VARIATIONS)
    max_tokens: int = MAX_TOKENS_LONG
    few_shot: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.limit is None:
            self.limit = DEFAULT_LIMITS[self.mode]
        if self.limit < 1:
            raise ValueError(f"iteration limit T must be >= 1, got {self.limit}")
        self.sampling_variations = tuple(
            s if isinstance(s, SamplingParams) else SamplingParams(*s) for s in self.sampling_variations
        )
        if self.mode == SINGLE_SC:
            if self.trials < 2:
                raise ValueError("single_sc needs at least 2 trials")
            if self.strategy not in STRATEGIES:
                raise ValueError(f"single_sc needs a strategy from {STRATEGIES}, got {self.strategy!r}")
            if self.strategy == SAMPLING_VARIATION:
                if len(set(self.sampling_variations)) < self.trials:
                    raise ValueError(
                        f"sampling_variation needs {self.trials} distinct (top_p, temperature) pairs, "
                        f"got {len(set(self.sampling_variations))}"
                    )


def _transcript(state: SessionState, **extra) -> list[dict]:
    return [{**entry.to_dict(), **extra} for entry in state.chat_log]


def _operator_request(backend: Backend, messages, sampling: SamplingParams, max_tokens: int) -> CompletionRequest:
    return CompletionRequest(backend.model_id, tuple(messages), sampling.top_p, sampling.temperature, max_tokens)


def run_dual(
    query: str,
    topic_entities: Sequence[str],
    graph: KnowledgeGraph,
    operator_backend: Backend,
    supervisor_backend: Backend,
    cfg: RunConfig,
    prompts: PromptSet | None = None,
) -> ReasoningResult:
    """Operator explores, Supervisor judges; abstain once T turns are spent."""
    if cfg.mode != DUAL:
        raise ValueError("run_dual needs a dual-mode config")
    prompts = prompts or load_prompt_set(cfg.prompt_set)
    state = new_session(query, topic_entities, cfg.limit)
    topics = list(state.seen_entities)
    stats = RunStats()

    def result(verdict, error=None):
        stats.iterations = state.iteration
        transcript = _transcript(state)
        if error:
            transcript.append({"role": "error", "text": error, "iteration": state.iteration})
        return ReasoningResult(verdict, transcript, stats, error)

    try:
        while not state.exhausted:
            req = _operator_request(
                operator_backend,
                operator_messages(prompts, state, topics, cfg.few_shot),
                cfg.operator_sampling,
                cfg.max_tokens,
            )
            text = operator_backend.complete(req).text
            stats.operator_calls += 1
            _, _, verify = take_turn(state, graph, text)
            if not verify:
                continue
            sreq = CompletionRequest(
                supervisor_backend.model_id,
                tuple(supervisor_messages(prompts, state.query, snapshot_evidence(state))),
                cfg.supervisor_sampling.top_p,
                cfg.supervisor_sampling.temperature,
                cfg.max_tokens,
            )
            stext = supervisor_backend.complete(sreq).text
            stats.supervisor_calls += 1
            state.record(SUPERVISOR, stext if stext.strip() else "(empty supervisor response)")
            outcome = parse_supervisor_turn(stext)
            if isinstance(outcome, Answer):
                return result(Answered(outcome.labels))
            # feedback and unparseable replies both stay in the chat log for the Operator
    except BACKEND_ERRORS as exc:
        log.warning("hard failure after %d iterations: %s", state.iteration, exc)
        return result(Abstained(HARD_FAILURE), error=str(exc))
    return result(Abstained(LIMIT_EXCEEDED))


@dataclass(frozen=True)
class TrialInput:
    query: str
    few_shot: int = 0
    sampling: SamplingParams = SamplingParams()


@dataclass
class TrialOutcome:
    labels: tuple[str, ...] | None
    reason: str | None
    transcript: list[dict]
    operator_calls: int
    iterations: int

    @property
    def abstained(self) -> bool:
        return self.labels is None


def run_single_trial(
    query: str,
    topic_entities: Sequence[str],
    graph: KnowledgeGraph,
    backend: Backend,
    limit: int,
    prompts: PromptSet,
    few_shot: int = 0,
    sampling: SamplingParams = SamplingParams(),
    max_tokens: int = MAX_TOKENS_LONG,
) -> TrialOutcome:
    """One single-agent attempt: the Operator answers its own Verification().

    Anything other than a parseable ``ANSWER:`` reply ends the trial as an
    abstention; there is no feedback path.
    """
    state = new_session(query, topic_entities, limit)
    topics = list(state.seen_entities)
    calls = 0

    def outcome(labels, reason):
        return TrialOutcome(labels, reason, _transcript(state), calls, state.iteration)

    try:
        while not state.exhausted:
            req = _operator_request(backend, operator_messages(prompts, state, topics, few_shot), sampling, max_tokens)
            text = backend.complete(req).text
            calls += 1
            _, _, verify = take_turn(state, graph, text)
            if not verify:
                continue
            areq = _operator_request(
                backend, single_answer_messages(prompts, state.query, snapshot_evidence(state), few_shot), sampling, max_tokens
            )
            answer = backend.complete(areq).text
            calls += 1
            state.record(OPERATOR, answer)
            parsed = parse_supervisor_turn(answer)
            if isinstance(parsed, Answer):
                return outcome(parsed.labels, None)
            return outcome(None, "no_answer")
    except BACKEND_ERRORS as exc:
        log.warning("trial hard failure: %s", exc)
        return outcome(None, HARD_FAILURE)
    return outcome(None, LIMIT_EXCEEDED)


def label_key(labels: Sequence[str]) -> frozenset[str]:
    return frozenset(normalize_label(label) for label in labels)


def unanimous_verdict(outcomes: Sequence[Sequence[str] | None]) -> Verdict:
    """Strict self-consistency: answer only if every trial answered the same label set.

    ``None`` marks an abstaining trial. Any abstention wins over disagreement.
    """
    if not outcomes:
        raise ValueError("no trial outcomes")
    if any(o is None for o in outcomes):
        return Abstained(TRIAL_ABSTAINED)
    keys = {label_key(o) for o in outcomes}
    if len(keys) != 1:
        return Abstained(TRIAL_DISAGREEMENT)
    return Answered(tuple(outcomes[0]))


class TrialSetupError(RuntimeError):
    pass


def build_trial_inputs(
    query: str,
    cfg: RunConfig,
    prompts: PromptSet,
    backend: Backend | None = None,
) -> list[TrialInput]:
    """Materialize ``cfg.trials`` distinct trial inputs for the configured strategy.

    The paraphrase strategy spends one backend call to rewrite the query.
    """
    n = cfg.trials
    if cfg.strategy == MULTI_PROMPT:
        if len(prompts.operator_few_shots) < n:
            raise TrialSetupError(
                f"multi_prompt needs {n} few-shot blocks, prompt set has {len(prompts.operator_few_shots)}"
            )
        inputs = [TrialInput(query, i, cfg.operator_sampling) for i in range(n)]
    elif cfg.strategy == PARAPHRASE:
        if backend is None:
            raise TrialSetupError("paraphrase strategy needs a backend")
        req = _operator_request(backend, paraphrase_messages(prompts, query, n), cfg.operator_sampling, cfg.max_tokens)
        variants = parse_paraphrases(backend.complete(req).text)
        if len(variants) < n:
            raise TrialSetupError(f"paraphrase reply gave {len(variants)} distinct variations, need {n}")
        inputs = [TrialInput(v, cfg.few_shot, cfg.operator_sampling) for v in variants[:n]]
    elif cfg.strategy == SAMPLING_VARIATION:
        distinct = list(dict.fromkeys(cfg.sampling_variations))
        if len(distinct) < n:
            raise TrialSetupError(f"sampling_variation needs {n} distinct sampling pairs")
        inputs = [TrialInput(query, cfg.few_shot, s) for s in distinct[:n]]
    else:
        raise TrialSetupError(f"unknown strategy {cfg.strategy!r}")
    assert len(set(inputs)) == n
    return inputs


def run_single_sc(
    query: str,
    topic_entities: Sequence[str],
    graph: KnowledgeGraph,
    backend: Backend,
    cfg: RunConfig,
    prompts: PromptSet | None = None,
) -> ReasoningResult:
    """Run ``cfg.trials`` independent single-agent trials and apply the unanimity rule."""
    if cfg.mode != SINGLE_SC:
        raise ValueError("run_single_sc needs a single_sc config")
    prompts = prompts or load_prompt_set(cfg.prompt_set)
    stats = RunStats()
    try:
        inputs = build_trial_inputs(query, cfg, prompts, backend)
    except (*BACKEND_ERRORS, TrialSetupError) as exc:
        # a paraphrase reply that parsed badly still cost one call
        if cfg.strategy == PARAPHRASE and isinstance(exc, TrialSetupError):
            stats.operator_calls = 1
        error = f"trial setup failed: {exc}"
        return ReasoningResult(Abstained(HARD_FAILURE), [{"role": "error", "text": error, "iteration": 0}], stats, error)
    if cfg.strategy == PARAPHRASE:
        stats.operator_calls += 1

    transcript: list[dict] = []
    labels: list[tuple[str, ...] | None] = []
    for i, trial in enumerate(inputs):
        out = run_single_trial(
            trial.query, topic_entities, graph, backend, cfg.limit, prompts,
            few_shot=trial.few_shot, sampling=trial.sampling, max_tokens=cfg.max_tokens,
        )
        transcript.extend({**row, "trial": i} for row in out.transcript)
        stats.operator_calls += out.operator_calls
        stats.iterations = max(stats.iterations, out.iterations)
        labels.append(out.labels)
    return ReasoningResult(unanimous_verdict(labels), transcript, stats)
