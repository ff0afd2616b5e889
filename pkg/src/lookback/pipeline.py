"""End-to-end pipeline stages behind the CLI subcommands.

Each stage reads and writes JSONL/CSV under the configured paths. Expensive
backend work (scoring, decoding) goes through a resumable JsonlLog so a
killed job continues where it stopped instead of re-billing the backend.
Work is scheduled in deterministic order and results are written in schedule
order, so outputs are byte-stable for a fixed config, fixture set, and seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .backend import (
    Backend,
    ContextKind,
    HttpBackend,
    MockBackend,
    MockScript,
    SamplingParams,
    ScoreRequest,
    ScoreResponse,
    VisualContext,
    make_noise_context,
)
from .branching import BranchingConfig
from .config import RunConfig, config_hash
from .controller import run_decode
from .errors import (
    ConfigError,
    CoverageError,
    LookbackError,
    PreconditionError,
)
from .evaluation import (
    EvalRecord,
    accuracy_matrix,
    category_zscores,
    comparison_report,
    eval_record_from_dict,
    eval_record_to_dict,
    judge_trace,
    pass_at_k_curve,
    token_footprint,
    write_footprint_csv,
)
from .jobs import (
    HEADER_KEY,
    JsonlLog,
    Question,
    file_config_hash,
    load_questions,
    read_jsonl,
)
from .miner import (
    alignment_rate,
    build_vocabulary,
    mine_lookback_templates,
    mine_pause_phrases,
    PhraseVocabulary,
)
from .probe import (
    FlagIndex,
    FlagThresholds,
    ProbeRecord,
    StepFlag,
    aggregate_delta_curves,
    derive_thresholds,
    flag_steps,
    record_from_dict,
    record_to_dict,
    step_perplexities,
    write_curves_csv,
)
from .traces import ThinkingTrace, trace_from_dict

LOGGER = logging.getLogger(__name__)

MAX_IN_FLIGHT = 8
CONTEXT_KINDS = ("real", "noise", "absent")


def make_backend(config: RunConfig) -> Backend:
    if config.backend.kind == "mock":
        try:
            return MockBackend(MockScript.load(config.backend.mock_script))
        except FileNotFoundError as exc:
            raise ConfigError(
                f"backend.mock_script not found: {config.backend.mock_script}"
            ) from exc
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(
                f"backend.mock_script {config.backend.mock_script} is "
                f"unreadable: {exc}"
            ) from exc
    import os

    api_key = None
    if config.backend.auth_env_var:
        api_key = os.environ.get(config.backend.auth_env_var)
    return HttpBackend(config.backend.base_url, api_key=api_key)


def reports_dir(config: RunConfig) -> Path:
    path = Path(config.paths.reports)
    path.mkdir(parents=True, exist_ok=True)
    return path


def real_context(question: Question) -> Optional[VisualContext]:
    """Real visual context from the question's image file, if it has one."""
    if not question.image_path:
        return None
    path = Path(question.image_path)
    if not path.exists():
        return None
    data = path.read_bytes()
    from PIL import Image
    import io

    with Image.open(io.BytesIO(data)) as img:
        resolution = img.size
        media = Image.MIME.get(img.format or "", "image/png")
    return VisualContext(kind=ContextKind.REAL, image_payload=data,
                         media_type=media, resolution=resolution)


def _write_derived(path: Path, format_name: str, cfg_hash: str,
                   rows: Iterable[Mapping[str, Any]]) -> None:
    """Plain rewrite for cheap derived files (no resume manifest)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {HEADER_KEY: {"format": format_name, "config_hash": cfg_hash}}
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"),
                                ensure_ascii=False) + "\n")


def load_traces(path: str | Path) -> list[ThinkingTrace]:
    _, rows = read_jsonl(path)
    traces = []
    for row in rows:
        if not row.get("tokens"):
            continue  # failed pass with no output; nothing to probe
        traces.append(trace_from_dict(row))
    return traces


@dataclass(frozen=True)
class StageResult:
    backend_calls: int
    skipped: int
    outputs: tuple[str, ...]
    failures: int = 0
    notes: tuple[str, ...] = ()


def stamp_correctness(traces: Sequence[ThinkingTrace],
                      questions: Mapping[str, Question]) -> list[ThinkingTrace]:
    """Fill in missing correctness labels by judging against gold answers.

    Traces that already carry a label keep it; traces whose question has no
    gold answer stay unlabeled.
    """
    stamped = []
    for trace in traces:
        question = questions.get(trace.question_id)
        if trace.correct is None and question is not None and question.answer:
            trace = replace(trace, correct=judge_trace(trace, question.answer))
        stamped.append(trace)
    return stamped


# --- probe stage ------------------------------------------------------------


def plan_probe(config: RunConfig) -> int:
    traces = load_traces(config.paths.traces)
    scores_path = reports_dir(config) / "probe_scores.jsonl"
    done: set[str] = set()
    if scores_path.exists():
        _, rows = read_jsonl(scores_path)
        done = {f"{r['question_id']}/{r['pass_index']}/{r['context']}"
                for r in rows if "context" in r}
    pending = 0
    for trace in traces:
        for kind in CONTEXT_KINDS:
            if f"{trace.question_id}/{trace.pass_index}/{kind}" not in done:
                pending += 1
    return pending


def run_probe_stage(config: RunConfig, backend: Optional[Backend] = None,
                    force: bool = False) -> StageResult:
    cfg_hash = config_hash(config)
    traces = load_traces(config.paths.traces)
    if not traces:
        raise PreconditionError(f"no usable traces in {config.paths.traces}")
    questions = {q.question_id: q for q in load_questions(config.paths.questions)}
    traces = stamp_correctness(traces, questions)
    if backend is None:
        backend = make_backend(config)
    out_dir = reports_dir(config)
    cap = config.probe.max_trace_tokens

    contexts: dict[str, Optional[dict[str, VisualContext]]] = {}
    for qid in sorted({t.question_id for t in traces}):
        question = questions.get(qid)
        real = real_context(question) if question else None
        if question is None or real is None:
            contexts[qid] = None
            continue
        contexts[qid] = {
            "real": real,
            "noise": make_noise_context(real, run_seed=config.sampling.seed),
            "absent": VisualContext.absent(),
        }

    scores_log = JsonlLog(out_dir / "probe_scores.jsonl", cfg_hash,
                          "lookback/probe-scores@1", force=force)
    calls = 0
    skipped = 0
    try:
        work: list[tuple[ThinkingTrace, str]] = []
        for trace in sorted(traces, key=lambda t: t.key):
            if contexts[trace.question_id] is None:
                skip_key = f"{trace.question_id}/{trace.pass_index}/skip"
                if skip_key not in scores_log.done_keys:
                    scores_log.append(skip_key, {
                        "question_id": trace.question_id,
                        "pass_index": trace.pass_index,
                        "skipped": "missing image",
                    })
                skipped += 1
                continue
            for kind in CONTEXT_KINDS:
                key = f"{trace.question_id}/{trace.pass_index}/{kind}"
                if key not in scores_log.done_keys:
                    work.append((trace, kind))

        question_text = {q.question_id: q.text for q in questions.values()}

        def score_one(item: tuple[ThinkingTrace, str]) -> dict[str, Any]:
            trace, kind = item
            texts = trace.token_texts()
            truncated = cap is not None and len(texts) > cap
            if truncated:
                texts = texts[:cap]
            request = ScoreRequest(
                question_text=question_text[trace.question_id],
                context=contexts[trace.question_id][kind],
                forced_continuation=texts,
                model_id=config.backend.model_id,
            )
            response = backend.score(request)
            return {
                "question_id": trace.question_id,
                "pass_index": trace.pass_index,
                "context": kind,
                "logprobs": [lp for _, lp in response.token_logprobs],
                "truncated": truncated,
            }

        with ThreadPoolExecutor(max_workers=MAX_IN_FLIGHT) as pool:
            for (trace, kind), payload in zip(work, pool.map(score_one, work)):
                scores_log.append(
                    f"{trace.question_id}/{trace.pass_index}/{kind}", payload)
                calls += 1
    finally:
        scores_log.close()

    # Recompute derived records from the full score store (pure, cheap).
    _, score_rows = read_jsonl(out_dir / "probe_scores.jsonl")
    by_trace: dict[tuple[str, int], dict[str, list[float]]] = {}
    truncated_traces: set[tuple[str, int]] = set()
    for row in score_rows:
        if "context" not in row:
            continue
        key = (row["question_id"], row["pass_index"])
        by_trace.setdefault(key, {})[row["context"]] = row["logprobs"]
        if row.get("truncated"):
            truncated_traces.add(key)

    records: list[ProbeRecord] = []
    for trace in sorted(traces, key=lambda t: t.key):
        scores = by_trace.get(trace.key)
        if not scores or any(kind not in scores for kind in CONTEXT_KINDS):
            continue
        n_scored = len(scores["real"])
        sub = trace if n_scored == len(trace.tokens) else _clip(trace, n_scored)
        responses = {
            kind: ScoreResponse(
                token_logprobs=tuple(zip(sub.token_texts(), scores[kind])),
                model_echo=config.backend.model_id,
            )
            for kind in CONTEXT_KINDS
        }
        records.extend(step_perplexities(
            sub, responses["real"], responses["noise"], responses["absent"],
            total_steps=len(trace.tokens),
        ))

    records_path = out_dir / "probe_records.jsonl"
    _write_derived(records_path, "lookback/probe-records@1", cfg_hash,
                   (record_to_dict(r) for r in records))
    curves_path = out_dir / "curves.csv"
    if records:
        rows = aggregate_delta_curves(records, bins=config.probe.bins)
        write_curves_csv(rows, curves_path, config_hash=cfg_hash)
    notes = []
    if truncated_traces:
        notes.append(f"{len(truncated_traces)} probe(s) truncated at "
                     f"{cap} tokens")
    return StageResult(backend_calls=calls, skipped=skipped,
                       outputs=(str(records_path), str(curves_path)),
                       notes=tuple(notes))


def _clip(trace: ThinkingTrace, n: int) -> ThinkingTrace:
    return ThinkingTrace(
        question_id=trace.question_id, pass_index=trace.pass_index,
        tokens=trace.tokens[:n], model_id=trace.model_id,
        category=trace.category, difficulty=trace.difficulty,
        correct=trace.correct,
    )


# --- mine stage -------------------------------------------------------------


def resolve_thresholds(config: RunConfig,
                       records: Sequence[ProbeRecord]) -> FlagThresholds:
    manual = (config.probe.q_p, config.probe.q_c, config.probe.q_g)
    if all(v is not None for v in manual):
        return FlagThresholds(q_p=manual[0], q_c=manual[1], q_g=manual[2])
    if any(v is not None for v in manual):
        raise ConfigError(
            "set all of probe.q_p, probe.q_c, probe.q_g or none of them"
        )
    return derive_thresholds(records, (config.probe.q_p_quantile,
                                       config.probe.q_c_quantile,
                                       config.probe.q_g_quantile))


def run_mine_stage(config: RunConfig) -> StageResult:
    cfg_hash = config_hash(config)
    out_dir = reports_dir(config)
    _, record_rows = read_jsonl(out_dir / "probe_records.jsonl")
    records = [record_from_dict(r) for r in record_rows]
    if not records:
        raise PreconditionError("no probe records found; run the probe stage first")
    traces = load_traces(config.paths.traces)
    questions = {q.question_id: q for q in load_questions(config.paths.questions)}
    traces = stamp_correctness(traces, questions)

    thresholds = resolve_thresholds(config, records)
    flags = flag_steps(records, thresholds=thresholds)
    mining = config.mining
    pause = mine_pause_phrases(
        traces, flags,
        n_range=(mining.pause_n_min, mining.pause_n_max),
        min_support=mining.min_support, min_enrichment=mining.min_enrichment,
    )

    notes = []
    templates = []
    if flags.count(StepFlag.CONTENT_GROUNDED) == 0:
        notes.append("no content-grounded steps; template mining skipped")
    else:
        templates = mine_lookback_templates(
            traces, flags,
            n_range=(mining.template_n_min, mining.template_n_max),
            min_support=mining.min_support, min_enrichment=mining.min_enrichment,
        )
    if flags.count(StepFlag.PRESENCE_SENSITIVE) == 0:
        notes.append("no presence-sensitive steps; vocabulary is seed markers only")

    provenance = {
        "config_hash": cfg_hash,
        "corpus": Path(config.paths.traces).name,
        "run_seed": config.sampling.seed,
        "thresholds": {"q_p": thresholds.q_p, "q_c": thresholds.q_c,
                       "q_g": thresholds.q_g},
        "min_support": mining.min_support,
        "min_enrichment": mining.min_enrichment,
    }
    vocab = build_vocabulary(pause, templates, provenance=provenance,
                             use_fallback_template=mining.use_fallback_template)
    try:
        report = alignment_rate(vocab, traces, flags)
        provenance = dict(vocab.provenance)
        provenance["alignment_rate"] = report.rate
        provenance["alignment_occurrences"] = report.total_occurrences
        vocab = PhraseVocabulary(
            pause_phrases=vocab.pause_phrases,
            lookback_templates=vocab.lookback_templates,
            seed_markers=vocab.seed_markers,
            provenance=provenance,
        )
    except LookbackError as exc:
        notes.append(f"alignment rate unavailable: {exc}")
    vocab.save(config.paths.vocab)
    return StageResult(backend_calls=0, skipped=0,
                       outputs=(config.paths.vocab,), notes=tuple(notes))


# --- decode stage -----------------------------------------------------------


def plan_decode(config: RunConfig) -> int:
    questions = load_questions(config.paths.questions)
    done: set[str] = set()
    traces_path = Path(config.paths.traces)
    if traces_path.exists():
        _, rows = read_jsonl(traces_path)
        done = {f"{r['question_id']}/{r['pass_index']}" for r in rows
                if "question_id" in r}
    pending = 0
    for question in questions:
        for p in range(config.sampling.n_passes):
            if f"{question.question_id}/{p}" not in done:
                pending += 1
    return pending


def run_decode_stage(config: RunConfig, backend: Optional[Backend] = None,
                     passthrough: bool = False, force: bool = False) -> StageResult:
    cfg_hash = config_hash(config)
    questions = load_questions(config.paths.questions)
    if not questions:
        raise PreconditionError(f"no questions in {config.paths.questions}")
    vocab: Optional[PhraseVocabulary] = None
    if not passthrough:
        vocab_path = Path(config.paths.vocab)
        if not vocab_path.exists():
            raise PreconditionError(
                f"vocabulary {vocab_path} not found; mine one first or pass "
                "--passthrough for a baseline run"
            )
        vocab = PhraseVocabulary.load(vocab_path)
    if backend is None:
        backend = make_backend(config)

    branching = config.branching if config.branching.enabled else None
    budget = config.decode_budget()
    log = JsonlLog(config.paths.traces, cfg_hash, "lookback/traces@1", force=force)
    failures = 0
    calls = 0
    try:
        work = [
            (question, pass_index)
            for question in questions
            for pass_index in range(config.sampling.n_passes)
            if f"{question.question_id}/{pass_index}" not in log.done_keys
        ]

        def decode_one(item: tuple[Question, int]) -> dict[str, Any]:
            question, pass_index = item
            context = real_context(question) or VisualContext.absent()
            sampling = SamplingParams(
                temperature=config.sampling.temperature,
                top_p=config.sampling.top_p,
                seed=config.sampling.seed + pass_index,
                max_new_tokens=budget,
            )
            outcome = run_decode(
                question_text=question.text,
                context=context,
                backend=backend,
                config=config.controller,
                vocab=vocab,
                sampling=sampling,
                budget=budget,
                branching=branching,
                question_id=question.question_id,
                pass_index=pass_index,
                model_id=config.backend.model_id,
                category=question.category,
                difficulty=question.difficulty,
            )
            line = outcome.to_line_dict()
            line.setdefault("question_id", question.question_id)
            line.setdefault("pass_index", pass_index)
            return line

        with ThreadPoolExecutor(max_workers=MAX_IN_FLIGHT) as pool:
            for (question, pass_index), line in zip(work, pool.map(decode_one, work)):
                log.append(f"{question.question_id}/{pass_index}", line)
                calls += 1
                if line.get("status") != "ok":
                    failures += 1
    finally:
        log.close()
    return StageResult(backend_calls=calls, skipped=0,
                       outputs=(config.paths.traces,), failures=failures)


# --- eval stage -------------------------------------------------------------


def run_eval_stage(config: RunConfig, method_id: str,
                   traces_path: Optional[str] = None,
                   out_path: Optional[str] = None) -> StageResult:
    cfg_hash = config_hash(config)
    src = Path(traces_path or config.paths.traces)
    if not src.exists():
        raise PreconditionError(f"traces file {src} not found")
    questions = {q.question_id: q for q in load_questions(config.paths.questions)}
    _, rows = read_jsonl(src)

    records: list[EvalRecord] = []
    for row in rows:
        qid = row.get("question_id")
        if qid is None:
            continue
        question = questions.get(str(qid))
        if question is None:
            raise CoverageError(
                f"trace references unknown question id {qid!r}",
                missing_ours=(str(qid),),
            )
        if row.get("tokens"):
            trace = trace_from_dict(row)
            correct = judge_trace(trace, question.answer)
            total = trace.total_tokens
            thinking = trace.thinking_tokens
        else:
            correct = False  # failed pass: no output to judge
            total = thinking = 0
        records.append(EvalRecord(
            question_id=str(qid),
            category=question.category,
            difficulty=question.difficulty,
            pass_index=int(row["pass_index"]),
            correct=correct,
            total_tokens=total,
            thinking_tokens=thinking,
            method_id=method_id,
        ))
    if not records:
        raise PreconditionError(f"no trace lines in {src}")

    out = Path(out_path) if out_path else reports_dir(config) / f"eval_{method_id}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_derived(out, "lookback/eval-records@1", cfg_hash,
                   (eval_record_to_dict(r) for r in records))
    return StageResult(backend_calls=0, skipped=0, outputs=(str(out),))


# --- report stage -----------------------------------------------------------


def _load_eval_records(path: Path) -> tuple[Optional[str], list[EvalRecord]]:
    if not path.exists():
        raise PreconditionError(f"eval records {path} not found")
    header, rows = read_jsonl(path)
    records = [eval_record_from_dict(r) for r in rows]
    return (None if header is None else header.get("config_hash")), records


def run_report_stage(config: RunConfig, force: bool = False) -> StageResult:
    cfg_hash = config_hash(config)
    out_dir = reports_dir(config)
    ours_path = Path(config.report.ours or out_dir / "eval_ours.jsonl")
    orig_path = Path(config.report.original or out_dir / "eval_original.jsonl")
    ours_hash, ours = _load_eval_records(ours_path)
    orig_hash, original = _load_eval_records(orig_path)

    hashes = {h for h in (ours_hash, orig_hash) if h is not None}
    if len(hashes) > 1 and not force:
        raise ConfigError(
            f"eval records carry mixed config hashes {sorted(hashes)}; "
            "pass --force to combine them anyway"
        )

    labels = (original[0].method_id, ours[0].method_id)
    report = comparison_report(ours, original, method_labels=labels,
                               first_pass_only=config.report.first_pass_only)
    report.to_csv(out_dir / "comparison.csv", config_hash=cfg_hash)
    (out_dir / "comparison.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    payload = report.to_json_dict()
    payload["config_hash"] = cfg_hash
    (out_dir / "comparison.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    import csv as _csv

    with open(out_dir / "passk.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        writer = _csv.writer(fh)
        writer.writerow(["method", "k", "pass_at_k"])
        for label, records in ((labels[0], original), (labels[1], ours)):
            for k, value in sorted(pass_at_k_curve(records).items()):
                writer.writerow([label, k, repr(value)])

    matrix = accuracy_matrix([*original, *ours])
    zscores = category_zscores(matrix)
    with open(out_dir / "zscores.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        writer = _csv.writer(fh)
        writer.writerow(["category", "method", "zscore", "degenerate"])
        for category in sorted(zscores.values):
            for method in sorted(zscores.values[category]):
                writer.writerow([
                    category, method, repr(zscores.values[category][method]),
                    category in zscores.degenerate,
                ])

    write_footprint_csv(token_footprint([*original, *ours]),
                        out_dir / "footprint.csv", config_hash=cfg_hash)

    manifest: dict[str, Any] = {
        "config_hash": cfg_hash,
        "inputs": {"ours": str(ours_path), "original": str(orig_path)},
        "input_hashes": {"ours": ours_hash, "original": orig_hash},
    }
    vocab_path = Path(config.paths.vocab)
    if vocab_path.exists():
        manifest["vocab_sha256"] = hashlib.sha256(
            vocab_path.read_bytes()).hexdigest()
    (out_dir / "report_manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    outputs = tuple(str(out_dir / name) for name in
                    ("comparison.csv", "comparison.txt", "comparison.json",
                     "passk.csv", "zscores.csv", "footprint.csv",
                     "report_manifest.json"))
    return StageResult(backend_calls=0, skipped=0, outputs=outputs)
