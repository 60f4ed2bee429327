"""Chat-endpoint driver: bounded retries, fenced-code extraction, token and
cost accounting, and a resumable batch runner.

Wire shape (chat-completions compatible):

    POST <endpoint>/v1/chat/completions
    {"model": ..., "messages": [{"role": "user", "content": ...}],
     "temperature": ..., "max_tokens": ...}

The reply is read from choices[0].message.content and
usage.{prompt_tokens, completion_tokens}; when the endpoint reports no
usage, a whitespace token count (len(text.split())) stands in.  The API key
comes from the LLM_API_KEY environment variable when set.

Failure policy: transport errors and 5xx responses are retried under the
same attempt cap as missing code fences (exponential backoff, base 1 s,
factor 2, small jitter); 401/403/429 abort the whole run since retrying
cannot help; any other 4xx marks the record api_error without retrying.
Token usage is summed over every attempt a prompt consumed.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import PipelineError

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_NO_CODE = "no_code"
STATUS_API_ERROR = "api_error"
STATUS_SKIPPED = "skipped"

_FENCE_RE = re.compile(r"```(.*?)```", re.DOTALL)
_LANG_TAG_RE = re.compile(r"[A-Za-z][A-Za-z0-9+#._-]{0,19}")


class FatalGenerationError(PipelineError):
    """The endpoint refused the run (auth/quota); retrying cannot help."""


def extract_code_block(text: str | None) -> str | None:
    """Body of the first triple-backtick fence.

    A language tag on the opening fence line (any casing) is stripped,
    leading and trailing newlines are trimmed, and an absent or empty fence
    yields None.
    """
    if not text:
        return None
    m = _FENCE_RE.search(text)
    if not m:
        return None
    body = m.group(1)
    head, sep, rest = body.partition("\n")
    if sep and _LANG_TAG_RE.fullmatch(head.strip()):
        body = rest
    body = body.strip("\n")
    if not body.strip():
        return None
    return body


@dataclass
class GenerationConfig:
    endpoint: str
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.5
    max_new_tokens: int = 4096
    max_attempts: int = 3
    concurrency: int = 1
    price_in_per_1k: float = 0.0005
    price_out_per_1k: float = 0.0015
    backoff_base_s: float = 1.0
    timeout_s: float = 120.0

    def __post_init__(self):
        if not self.endpoint:
            raise ValueError("endpoint is required")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be at least 1")


@dataclass
class GenerationRecord:
    prompt_id: str
    attempts: int
    raw_response: str | None
    extracted_code: str | None
    input_tokens: int
    output_tokens: int
    status: str
    error: str | None = None


def _auth_headers() -> dict:
    key = os.environ.get("LLM_API_KEY")
    return {"Authorization": f"Bearer {key}"} if key else {}


def generate_one(prompt, cfg: GenerationConfig) -> GenerationRecord:
    """Send one prompt as a single user message, retrying up to
    cfg.max_attempts total attempts; every failure mode ends up encoded in
    the record except run-fatal endpoint refusals."""
    body = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_new_tokens,
    }
    prompt_id = prompt.id if prompt.id is not None else "prompt"
    url = cfg.endpoint.rstrip("/") + "/v1/chat/completions"
    in_tokens = out_tokens = 0
    raw = None
    code = None
    err: str | None = None
    status = STATUS_API_ERROR
    attempts = 0
    for attempt in range(1, cfg.max_attempts + 1):
        attempts = attempt
        if attempt > 1 and cfg.backoff_base_s > 0:
            time.sleep(cfg.backoff_base_s * 2 ** (attempt - 2)
                       + random.uniform(0, cfg.backoff_base_s / 10))
        try:
            resp = requests.post(url, json=body, headers=_auth_headers(), timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            status, err = STATUS_API_ERROR, f"transport: {exc}"
            continue
        if resp.status_code in (401, 403, 429):
            raise FatalGenerationError(
                f"endpoint refused the run (HTTP {resp.status_code}): {resp.text[:200]}")
        if resp.status_code >= 500:
            status, err = STATUS_API_ERROR, f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            status, err = STATUS_API_ERROR, f"HTTP {resp.status_code}: {resp.text[:200]}"
            break  # non-transient client error: do not retry
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError):
            status, err = STATUS_API_ERROR, "malformed completion payload"
            continue
        usage = payload.get("usage") or {}
        in_tokens += int(usage.get("prompt_tokens", len(prompt.text.split())))
        out_tokens += int(usage.get("completion_tokens",
                                    len(content.split()) if isinstance(content, str) else 0))
        raw = content
        code = extract_code_block(content)
        if code:
            status, err = STATUS_OK, None
            break
        status, err = STATUS_NO_CODE, "no code fence in response"
    return GenerationRecord(prompt_id, attempts, raw, code, in_tokens, out_tokens, status, err)


def record_to_obj(rec: GenerationRecord) -> dict:
    return {
        "prompt_id": rec.prompt_id,
        "attempts": rec.attempts,
        "raw_response": rec.raw_response,
        "extracted_code": rec.extracted_code,
        "input_tokens": rec.input_tokens,
        "output_tokens": rec.output_tokens,
        "status": rec.status,
        "error": rec.error,
    }


def record_from_obj(obj: dict) -> GenerationRecord:
    return GenerationRecord(
        prompt_id=str(obj["prompt_id"]),
        attempts=int(obj["attempts"]),
        raw_response=obj.get("raw_response"),
        extracted_code=obj.get("extracted_code"),
        input_tokens=int(obj.get("input_tokens", 0)),
        output_tokens=int(obj.get("output_tokens", 0)),
        status=str(obj["status"]),
        error=obj.get("error"),
    )


def save_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_obj(rec), ensure_ascii=False) + "\n")


def load_records(path) -> list[GenerationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_obj(json.loads(line)))
    return records


def run_batch(prompts, cfg: GenerationConfig, journal_path=None) -> list[GenerationRecord]:
    """Generate for every prompt with at most cfg.concurrency requests in
    flight; output is index-aligned with the input.

    When journal_path is given, finished records are appended there as they
    complete, and prompts already present in the journal are not re-sent, so
    an interrupted batch resumes where it stopped.
    """
    prompts = list(prompts)
    if not prompts:
        raise ValueError("prompts must be non-empty")
    for i, p in enumerate(prompts):
        if p.id is None:
            p.id = f"prompt-{i:06d}"
    done: dict[str, GenerationRecord] = {}
    if journal_path and Path(journal_path).exists():
        for rec in load_records(journal_path):
            done[rec.prompt_id] = rec
        if done:
            log.info("journal %s: %d prompts already complete", journal_path, len(done))
    todo = [p for p in prompts if p.id not in done]
    lock = threading.Lock()
    journal_fh = open(journal_path, "a", encoding="utf-8") if journal_path else None
    try:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            futures = [pool.submit(generate_one, p, cfg) for p in todo]
            for fut in as_completed(futures):
                rec = fut.result()
                with lock:
                    done[rec.prompt_id] = rec
                    if journal_fh is not None:
                        journal_fh.write(json.dumps(record_to_obj(rec), ensure_ascii=False) + "\n")
                        journal_fh.flush()
    finally:
        if journal_fh is not None:
            journal_fh.close()
    return [done[p.id] for p in prompts]


@dataclass
class CostReport:
    total_usd: float
    per_1k_samples_usd: float | None  # None when no record succeeded
    ok_records: int


def estimate_cost(records, cfg: GenerationConfig) -> CostReport:
    """total = sum(input_tokens * p_in + output_tokens * p_out) / 1000 over all
    records; the per-1K figure divides by the count of status=ok records."""
    total = sum(r.input_tokens * cfg.price_in_per_1k + r.output_tokens * cfg.price_out_per_1k
                for r in records) / 1000.0
    ok = sum(1 for r in records if r.status == STATUS_OK)
    per_1k = (total * 1000.0 / ok) if ok else None
    return CostReport(total, per_1k, ok)
