"""Prompt instantiation for the three augmentation strategies.

Templates live as UTF-8 text assets with {{placeholder}} markers so tests can
pin them byte-for-byte.  All rendering is pure: the same inputs always give
the same bytes.  Vulnerable-line lists are joined with the literal separator
"/~/" inside every prompt.

The default transformation rule list ships with the package
(data/mutation_rules.txt, one rule per line, order significant); the first
five rules must be safe on the important lines, i.e. they must not change the
execution trace.  Deployments can swap the file for their own list.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .corpus import CLEAN, VULNERABLE, CodeSample, CorpusStore
from .retrieval import RetrievedPair

LINE_SEPARATOR = "/~/"
SAFE_RULE_PREFIX = 5
STRATEGIES = ("mutation", "injection", "extension")

_MARKER_RE = re.compile(r"\{\{([a-z_]+)\}\}")


@dataclass
class PromptInstance:
    strategy: str
    text: str
    source_ids: list[str]
    id: str | None = None


@dataclass
class RuleSet:
    rules: list[str]
    safe_prefix_len: int = SAFE_RULE_PREFIX

    def __post_init__(self):
        if len(self.rules) < self.safe_prefix_len:
            raise ValueError(f"need at least {self.safe_prefix_len} rules, got {len(self.rules)}")


def load_rules(path) -> RuleSet:
    """One rule per line; blank lines are skipped, order is significant."""
    with open(path, encoding="utf-8") as fh:
        rules = [line.rstrip("\n") for line in fh if line.strip()]
    return RuleSet(rules)


def default_rules() -> RuleSet:
    text = resources.files("vulaug").joinpath("data/mutation_rules.txt").read_text(encoding="utf-8")
    return RuleSet([line for line in text.splitlines() if line.strip()])


def join_vul_lines(lines) -> str:
    """Join line strings with the exact "/~/" separator; empty input gives ""."""
    return LINE_SEPARATOR.join(lines)


def _load_template(name: str) -> str:
    text = resources.files("vulaug").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


def _fill(template: str, mapping: dict[str, str]) -> str:
    markers = set(_MARKER_RE.findall(template))
    missing = markers - mapping.keys()
    if missing:
        raise RuntimeError(f"template has unfilled placeholders: {sorted(missing)}")
    text = template
    for key in markers:
        text = text.replace("{{" + key + "}}", mapping[key])
    return text


def _numbered(rules: list[str]) -> str:
    return "\n".join(f"{i}- {rule}" for i, rule in enumerate(rules, start=1))


def render_mutation(sample: CodeSample, rules: RuleSet) -> PromptInstance:
    """Mutation prompt for one vulnerable sample; absent vul_lines render empty."""
    if sample.label != VULNERABLE:
        raise ValueError(f"mutation needs a vulnerable sample, got label {sample.label!r}")
    text = _fill(_load_template("mutation"), {
        "rules": _numbered(rules.rules),
        "vulnerable_code": sample.code,
        "vulnerable_lines": join_vul_lines(sample.vul_lines or ()),
    })
    return PromptInstance("mutation", text, [sample.id])


def _resolve_pair(pair: RetrievedPair, store: CorpusStore) -> tuple[CodeSample, CodeSample]:
    try:
        clean = store.by_id[pair.clean_id]
        vul = store.by_id[pair.vul_id]
    except KeyError as exc:
        raise ValueError(f"pair references unknown sample id {exc.args[0]!r}") from None
    if clean.label != CLEAN:
        raise ValueError(f"sample {clean.id!r} is not clean")
    if vul.label != VULNERABLE:
        raise ValueError(f"sample {vul.id!r} is not vulnerable")
    if not vul.vul_lines:
        raise ValueError(f"vulnerable sample {vul.id!r} lacks vul_lines metadata")
    return clean, vul


def render_injection(pair: RetrievedPair, store: CorpusStore) -> PromptInstance:
    """Injection prompt: weave the vulnerable snippet's logic into the clean one."""
    if pair.direction != "injection":
        raise ValueError(f"expected an injection pair, got direction {pair.direction!r}")
    clean, vul = _resolve_pair(pair, store)
    text = _fill(_load_template("injection"), {
        "vulnerable_code": vul.code,
        "clean_code": clean.code,
        "vulnerable_lines": join_vul_lines(vul.vul_lines),
    })
    return PromptInstance("injection", text, [pair.clean_id, pair.vul_id])


def render_extension(pair: RetrievedPair, store: CorpusStore) -> PromptInstance:
    """Extension prompt: graft parts of the clean snippet onto the vulnerable one."""
    if pair.direction != "extension":
        raise ValueError(f"expected an extension pair, got direction {pair.direction!r}")
    clean, vul = _resolve_pair(pair, store)
    text = _fill(_load_template("extension"), {
        "clean_code": clean.code,
        "vulnerable_code": vul.code,
        "vulnerable_lines": join_vul_lines(vul.vul_lines),
    })
    return PromptInstance("extension", text, [pair.clean_id, pair.vul_id])
