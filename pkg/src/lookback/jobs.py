"""Crash-safe JSONL persistence for resumable batch jobs.

Every output JSONL starts with a header line carrying the config hash. Next
to each data file lives an append-only manifest sidecar (<path>.manifest)
holding one line per committed data line: its work-unit key and the sha256 of
the exact line text. A data line only counts as done once its manifest entry
is on disk, so a crash between the two writes loses at most the uncommitted
tail, which resume truncates. Any checksum mismatch means the data was edited
or corrupted and the job refuses to resume over it.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence

from .errors import (
    ConfigError,
    DataIntegrityError,
    ManifestError,
    PreconditionError,
)
from .traces import Difficulty

HEADER_KEY = "_header"


def _line_hash(line: str) -> str:
    return hashlib.sha256(line.encode("utf-8")).hexdigest()


def manifest_path(data_path: str | Path) -> Path:
    return Path(str(data_path) + ".manifest")


def _read_manifest(path: Path) -> list[dict[str, Any]]:
    entries: list[dict[str, Any]] = []
    raw_lines = path.read_text(encoding="utf-8").split("\n")
    # A trailing fragment without a newline is an uncommitted write; any
    # other unparsable line is corruption.
    complete, partial = raw_lines[:-1], raw_lines[-1]
    for i, line in enumerate(complete):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            entries.append({"key": str(entry["key"]), "sha256": str(entry["sha256"])})
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: manifest line {i + 1} unreadable: {exc}") from exc
    if partial.strip():
        try:
            entry = json.loads(partial)
            entries.append({"key": str(entry["key"]), "sha256": str(entry["sha256"])})
        except (ValueError, KeyError, TypeError):
            pass  # dropped: crash mid-append
    return entries


class JsonlLog:
    """Append-only JSONL writer with manifest-backed resume.

    Single-writer: route all appends for one file through one instance.
    """

    def __init__(self, path: str | Path, config_hash: str, format_name: str,
                 force: bool = False):
        self.path = Path(path)
        self.manifest = manifest_path(path)
        self.config_hash = config_hash
        self.format_name = format_name
        self.done_keys: set[str] = set()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists() and self.path.stat().st_size > 0:
            self._resume(force=force)
            self._data = open(self.path, "a", encoding="utf-8")
            self._mf = open(self.manifest, "a", encoding="utf-8")
        else:
            self._data = open(self.path, "w", encoding="utf-8")
            self._mf = open(self.manifest, "w", encoding="utf-8")
            header = {HEADER_KEY: {"format": format_name, "config_hash": config_hash}}
            self._commit(HEADER_KEY, header)

    def _resume(self, force: bool) -> None:
        if not self.manifest.exists():
            raise ManifestError(
                f"{self.path} exists but its manifest sidecar is missing; "
                "delete the file to start over"
            )
        entries = _read_manifest(self.manifest)
        if not entries:
            raise ManifestError(f"{self.path}: manifest is empty but data exists")
        text = self.path.read_text(encoding="utf-8")
        lines = text.split("\n")
        complete = lines[:-1]  # final element is "" or a partial line
        if len(complete) < len(entries):
            raise ManifestError(
                f"{self.path} has {len(complete)} complete lines but the manifest "
                f"records {len(entries)}; data file was truncated or edited"
            )
        offset = 0
        for i, entry in enumerate(entries):
            line = complete[i]
            if _line_hash(line) != entry["sha256"]:
                raise ManifestError(
                    f"{self.path} line {i + 1} fails its checksum; refusing to "
                    "resume over corrupted output"
                )
            offset += len(line.encode("utf-8")) + 1
            if entry["key"] == HEADER_KEY:
                header = json.loads(line).get(HEADER_KEY, {})
                if header.get("config_hash") != self.config_hash and not force:
                    raise ConfigError(
                        f"{self.path} was produced under config hash "
                        f"{header.get('config_hash')!r}, current is "
                        f"{self.config_hash!r}; rerun with --force to mix"
                    )
            else:
                self.done_keys.add(entry["key"])
        if len(text.encode("utf-8")) > offset:
            # Uncommitted tail from a crash: drop it before appending.
            with open(self.path, "r+", encoding="utf-8") as fh:
                fh.truncate(offset)

    def _commit(self, key: str, obj: Mapping[str, Any]) -> None:
        line = json.dumps(obj, ensure_ascii=False, separators=(",", ":"),
                          sort_keys=True)
        self._data.write(line + "\n")
        self._data.flush()
        os.fsync(self._data.fileno())
        self._mf.write(json.dumps({"key": key, "sha256": _line_hash(line)}) + "\n")
        self._mf.flush()
        os.fsync(self._mf.fileno())

    def append(self, key: str, obj: Mapping[str, Any]) -> None:
        if key == HEADER_KEY:
            raise DataIntegrityError(f"{HEADER_KEY!r} is reserved")
        if key in self.done_keys:
            raise DataIntegrityError(f"duplicate work-unit key: {key!r}")
        self._commit(key, obj)
        self.done_keys.add(key)

    def close(self) -> None:
        self._data.close()
        self._mf.close()

    def __enter__(self) -> "JsonlLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_jsonl(path: str | Path) -> tuple[Optional[dict[str, Any]], list[dict[str, Any]]]:
    """Read a JSONL file, splitting off the header line if present."""
    header: Optional[dict[str, Any]] = None
    rows: list[dict[str, Any]] = []
    if not Path(path).exists():
        raise PreconditionError(f"input file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DataIntegrityError(f"{path} line {i + 1} is not JSON: {exc}") from exc
            if i == 0 and isinstance(obj, dict) and HEADER_KEY in obj:
                header = obj[HEADER_KEY]
            else:
                rows.append(obj)
    return header, rows


def file_config_hash(path: str | Path) -> Optional[str]:
    header, _ = read_jsonl(path)
    return None if header is None else header.get("config_hash")


# --- benchmark questions --------------------------------------------------


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    image_path: str  # empty for image-free questions
    answer: str
    category: str = ""
    difficulty: Difficulty = Difficulty.UNKNOWN


def load_questions(path: str | Path) -> list[Question]:
    _, rows = read_jsonl(path)
    base = Path(path).resolve().parent
    questions = []
    for i, row in enumerate(rows):
        image = str(row.get("image", ""))
        if image and not Path(image).is_absolute():
            # image paths travel with the question file, not the CWD
            image = str(base / image)
        try:
            questions.append(Question(
                question_id=str(row["id"]),
                text=str(row["text"]),
                image_path=image,
                answer=str(row.get("answer", "")),
                category=str(row.get("category", "")),
                difficulty=Difficulty.parse(row.get("difficulty")),
            ))
        except (KeyError, TypeError) as exc:
            raise DataIntegrityError(
                f"{path} question {i + 1} is malformed: {exc}"
            ) from exc
    ids = [q.question_id for q in questions]
    if len(set(ids)) != len(ids):
        raise DataIntegrityError(f"{path} contains duplicate question ids")
    return questions
