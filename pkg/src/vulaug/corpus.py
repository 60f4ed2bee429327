"""Labeled C-function corpora: ingestion, seeded sampling, ratio-preserving assembly.

The on-disk format is JSONL with one function per line:

    {"id": str, "func": str, "target": 0|1, "vul_lines": [str], "project": str}

"vul_lines" and "project" are optional; unknown extra fields survive a round
trip through ``meta``.  Augmented-dataset exports add an "origin" field
("base" | "generated" | "clean-pool").

Every random draw uses one documented procedure so results reproduce across
platforms: a numpy PCG64 generator seeded with the given 64-bit integer
permutes the candidate positions (ingestion order) and the first n positions
are taken.  For a fixed seed, the draw for n is therefore a prefix of the
draw for n+1.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import PipelineError

log = logging.getLogger(__name__)

VULNERABLE = "vulnerable"
CLEAN = "clean"

# canonical field -> JSONL field name
DEFAULT_SCHEMA = {
    "id": "id",
    "code": "func",
    "label": "target",
    "vul_lines": "vul_lines",
    "project": "project",
}


@dataclass
class CodeSample:
    """One labeled C function; ``vul_lines`` entries must occur verbatim in ``code``."""

    id: str
    code: str
    label: str
    vul_lines: tuple[str, ...] | None = None
    origin: str = ""
    meta: dict = field(default_factory=dict)


def check_sample(sample: CodeSample) -> list[str]:
    """Return invariant violations; an empty list means the sample is valid."""
    problems = []
    if sample.label not in (VULNERABLE, CLEAN):
        problems.append(f"invalid label {sample.label!r}")
    if not sample.code or not sample.code.strip():
        problems.append("empty code")
    if sample.vul_lines is not None:
        if sample.label == CLEAN:
            problems.append("clean sample carries vul_lines")
        for line in sample.vul_lines:
            if line not in sample.code:
                problems.append(f"vul_line not a substring of code: {line!r}")
                break
    return problems


class CorpusStore:
    """Immutable collection of unique-id samples, partitioned by label.

    Safe to share across threads once built; all operations on it are pure.
    """

    def __init__(self, samples):
        self.samples: list[CodeSample] = list(samples)
        self.by_id: dict[str, CodeSample] = {}
        for s in self.samples:
            if s.id in self.by_id:
                raise PipelineError(f"duplicate sample id: {s.id!r}")
            self.by_id[s.id] = s
        self.vulnerable = [s for s in self.samples if s.label == VULNERABLE]
        self.clean = [s for s in self.samples if s.label == CLEAN]

    @property
    def vulnerable_count(self) -> int:
        return len(self.vulnerable)

    @property
    def clean_count(self) -> int:
        return len(self.clean)

    def __len__(self) -> int:
        return len(self.samples)


def _parse_label(raw) -> str | None:
    if isinstance(raw, bool):
        return VULNERABLE if raw else CLEAN
    if raw in (1, "1"):
        return VULNERABLE
    if raw in (0, "0"):
        return CLEAN
    return None


def _sample_from_obj(obj: dict, mapping: dict, lineno: int, origin: str):
    problems = []
    code = obj.get(mapping["code"])
    if not isinstance(code, str):
        problems.append(f"missing or non-string {mapping['code']!r} field")
        code = ""
    label = _parse_label(obj.get(mapping["label"]))
    if label is None:
        problems.append(f"missing or non-binary {mapping['label']!r} field")
        label = CLEAN
    raw_id = obj.get(mapping["id"])
    sid = str(raw_id) if raw_id is not None else f"line-{lineno}"
    raw_lines = obj.get(mapping["vul_lines"])
    vul_lines = None
    if raw_lines:
        if isinstance(raw_lines, list) and all(isinstance(x, str) for x in raw_lines):
            vul_lines = tuple(raw_lines)
        else:
            problems.append(f"{mapping['vul_lines']!r} must be a list of strings")
    meta = {}
    project = obj.get(mapping["project"])
    if isinstance(project, str):
        meta["project"] = project
    known = set(mapping.values())
    for key, value in obj.items():
        if key not in known:
            meta[key] = value
    sample = CodeSample(id=sid, code=code, label=label, vul_lines=vul_lines,
                        origin=origin, meta=meta)
    problems.extend(check_sample(sample))
    return sample, problems


def ingest_jsonl(path, schema: dict | None = None) -> CorpusStore:
    """Read a JSONL corpus, dropping (and logging) lines that break sample invariants.

    ``schema`` remaps canonical field names to the file's field names.
    Raises PipelineError for an unreadable file, duplicate ids, or a file
    with zero valid records.
    """
    mapping = dict(DEFAULT_SCHEMA)
    if schema:
        mapping.update(schema)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PipelineError(f"cannot read corpus file {path}: {exc}") from exc
    origin = path.stem
    samples: list[CodeSample] = []
    seen: set[str] = set()
    rejected = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            log.warning("%s line %d rejected: invalid JSON (%s)", path.name, lineno, exc)
            rejected += 1
            continue
        if not isinstance(obj, dict):
            log.warning("%s line %d rejected: not a JSON object", path.name, lineno)
            rejected += 1
            continue
        sample, problems = _sample_from_obj(obj, mapping, lineno, origin)
        if problems:
            log.warning("%s line %d rejected: %s", path.name, lineno, "; ".join(problems))
            rejected += 1
            continue
        if sample.id in seen:
            raise PipelineError(f"duplicate sample id {sample.id!r} at {path.name} line {lineno}")
        seen.add(sample.id)
        samples.append(sample)
    if not samples:
        raise PipelineError(f"no valid records in {path}")
    if rejected:
        log.warning("%s: rejected %d of %d lines", path.name, rejected, rejected + len(samples))
    return CorpusStore(samples)


def sample_to_obj(sample: CodeSample, origin_role: str | None = None) -> dict:
    obj = {
        "id": sample.id,
        "func": sample.code,
        "target": 1 if sample.label == VULNERABLE else 0,
    }
    if sample.vul_lines:
        obj["vul_lines"] = list(sample.vul_lines)
    if "project" in sample.meta:
        obj["project"] = sample.meta["project"]
    for key, value in sample.meta.items():
        if key != "project" and key not in obj:
            obj[key] = value
    if origin_role is not None:
        obj["origin"] = origin_role
    return obj


def export_jsonl(samples, path, origin_role: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_obj(s, origin_role), ensure_ascii=False) + "\n")


def _seeded_permutation(count: int, seed: int) -> np.ndarray:
    """The documented selection procedure: PCG64(seed) permutation of range(count)."""
    return np.random.Generator(np.random.PCG64(seed)).permutation(count)


def sample_vulnerable(store: CorpusStore, n: int, seed: int) -> list[CodeSample]:
    """Draw n distinct vulnerable samples, deterministically for a fixed seed.

    The draw for n is a prefix of the draw for n+1 under the same seed.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    pool = store.vulnerable
    if n > len(pool):
        raise ValueError(f"requested {n} vulnerable samples, store has {len(pool)}")
    order = _seeded_permutation(len(pool), seed)
    return [pool[i] for i in order[:n]]


def _round_half_up_ratio(count: int, num: int, den: int) -> int:
    """round-half-up of count * num / den, in exact integer arithmetic."""
    return (2 * count * num + den) // (2 * den)


@dataclass
class AugmentedDataset:
    base: CorpusStore
    generated_vulnerable: list[CodeSample]
    added_clean: list[CodeSample]
    target_ratio: tuple[int, int]  # (vulnerable, clean) counts of the base corpus


def assemble_augmented(store: CorpusStore, generated, clean_pool: CorpusStore,
                       seed: int) -> AugmentedDataset:
    """Merge generated vulnerable samples into the base corpus, adding seeded
    random clean samples so the vulnerable:clean ratio of the base is kept
    (round-half-up on the clean side)."""
    generated = [replace(s, origin="generated") for s in generated]
    for s in generated:
        if s.label != VULNERABLE:
            raise ValueError(f"generated sample {s.id!r} is not labeled vulnerable")
    base_vul = store.vulnerable_count
    base_clean = store.clean_count
    if not generated:
        return AugmentedDataset(store, [], [], (base_vul, base_clean))
    if base_vul == 0:
        raise ValueError("base corpus has no vulnerable samples; ratio undefined")
    needed = _round_half_up_ratio(len(generated), base_clean, base_vul)
    pool = clean_pool.clean
    if needed > len(pool):
        raise PipelineError(
            f"clean pool holds {len(pool)} samples, need {needed} to preserve the base ratio")
    order = _seeded_permutation(len(pool), seed)
    added = [pool[i] for i in order[:needed]]
    return AugmentedDataset(store, generated, added, (base_vul, base_clean))


def export_augmented(dataset: AugmentedDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.base.samples:
            fh.write(json.dumps(sample_to_obj(s, "base"), ensure_ascii=False) + "\n")
        for s in dataset.generated_vulnerable:
            fh.write(json.dumps(sample_to_obj(s, "generated"), ensure_ascii=False) + "\n")
        for s in dataset.added_clean:
            fh.write(json.dumps(sample_to_obj(s, "clean-pool"), ensure_ascii=False) + "\n")
