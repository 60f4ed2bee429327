"""Per-cluster BM25 search and diversity-aware clean/vulnerable pair selection.

Pairing walks the clustered corpus the same way for both directions: every
query is matched with the single best BM25 hit inside each cluster, each
cluster's hit list is sorted by score (ties keep query order), the lists
themselves are ordered by length descending (ties by cluster id), and the
final selection round-robins across lists taking the best remaining pair
from each.  The first picks therefore span distinct clusters.

direction="injection": queries are clean samples searched against the
clustered vulnerable corpus.  direction="extension": queries are vulnerable
samples searched against a clustered clean corpus.  The pair fields record
the clean/vulnerable roles either way.

A query whose id equals its retrieved document's id (possible only when the
same function sits in both pools) is dropped from that cluster's list and
logged rather than paired with itself.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import CLEAN, VULNERABLE
from .errors import PipelineError

log = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DIRECTIONS = ("injection", "extension")

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


def tokenize(code: str) -> list[str]:
    """Lowercased maximal ASCII-alphanumeric runs, in order of appearance."""
    return [t.lower() for t in _TOKEN_RE.findall(code)]


@dataclass
class Bm25Index:
    doc_ids: list[str]
    doc_token_counts: list[dict[str, int]]
    doc_lengths: list[int]
    avg_doc_length: float
    df: dict[str, int]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    _pos: dict[str, int] = field(init=False, repr=False)
    _idf: dict[str, float] = field(init=False, repr=False)

    def __post_init__(self):
        self._pos = {doc_id: i for i, doc_id in enumerate(self.doc_ids)}
        n_docs = len(self.doc_ids)
        self._idf = {
            term: math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            for term, df in self.df.items()
        }


def build_index(docs, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    """Index ``doc.code`` of each sample under ``tokenize``."""
    docs = list(docs)
    if not docs:
        raise ValueError("cannot index an empty document list")
    doc_ids, counts, lengths = [], [], []
    df: dict[str, int] = {}
    for doc in docs:
        tokens = tokenize(doc.code)
        tf = dict(Counter(tokens))
        doc_ids.append(doc.id)
        counts.append(tf)
        lengths.append(len(tokens))
        for term in tf:
            df[term] = df.get(term, 0) + 1
    avg = sum(lengths) / len(lengths)
    return Bm25Index(doc_ids, counts, lengths, avg, df, k1, b)


def score(index: Bm25Index, query: list[str], doc_id: str) -> float:
    """BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)).

    Query tokens contribute once per occurrence; terms unknown to the index
    contribute 0.  Scores are non-negative because of the +1 inside the log.
    """
    pos = index._pos.get(doc_id)
    if pos is None:
        raise ValueError(f"unknown doc id {doc_id!r}")
    return _score_at(index, query, pos)


def _score_at(index: Bm25Index, query: list[str], pos: int) -> float:
    tf_map = index.doc_token_counts[pos]
    dl = index.doc_lengths[pos]
    k1, b = index.k1, index.b
    total = 0.0
    for term in query:
        tf = tf_map.get(term, 0)
        if tf == 0:
            continue
        total += index._idf[term] * (tf * (k1 + 1.0)) / (
            tf + k1 * (1.0 - b + b * dl / index.avg_doc_length))
    return total


def search_top1(index: Bm25Index, query_code: str) -> tuple[str, float]:
    """Best-scoring doc for the query; ties keep the earliest doc in index order.

    A doc is returned even when every score is 0.
    """
    query = tokenize(query_code)
    best_pos, best = 0, -math.inf
    for pos in range(len(index.doc_ids)):
        s = _score_at(index, query, pos)
        if s > best:
            best_pos, best = pos, s
    return index.doc_ids[best_pos], best


@dataclass
class RetrievedPair:
    clean_id: str
    vul_id: str
    score: float
    cluster_id: int
    direction: str


@dataclass
class RetrievalRequest:
    N: int
    G: int = 5
    direction: str = "injection"
    seed: int = 0  # recorded for provenance; selection itself is deterministic

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.G < 1:
            raise ValueError("G must be at least 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


def _check_labels(queries, corpus, direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    query_label = CLEAN if direction == "injection" else VULNERABLE
    corpus_label = VULNERABLE if direction == "injection" else CLEAN
    for q in queries:
        if q.label != query_label:
            raise ValueError(f"query {q.id!r} has label {q.label!r}, "
                             f"expected {query_label!r} for direction {direction!r}")
    for d in corpus:
        if d.label != corpus_label:
            raise ValueError(f"corpus sample {d.id!r} has label {d.label!r}, "
                             f"expected {corpus_label!r} for direction {direction!r}")


def _to_pair(rec, direction: str) -> RetrievedPair:
    _qpos, query_id, doc_id, pair_score, cid = rec
    if direction == "injection":
        return RetrievedPair(query_id, doc_id, pair_score, cid, direction)
    return RetrievedPair(doc_id, query_id, pair_score, cid, direction)


def interleave_select(pair_lists: list[list], n: int) -> list:
    """Round-robin selection over score-sorted lists: step i takes element
    i // len(lists) from list i % len(lists), skipping exhausted lists."""
    total = sum(len(lst) for lst in pair_lists)
    if n > total:
        raise ValueError(f"cannot select {n} pairs from {total} candidates")
    out = []
    g = len(pair_lists)
    longest = max((len(lst) for lst in pair_lists), default=0)
    i = 0
    while len(out) < n:
        lst = pair_lists[i % g]
        idx = i // g
        if idx < len(lst):
            out.append(lst[idx])
        i += 1
        if i > g * (longest + 1):
            raise RuntimeError("selection loop ran past every list")
    return out


def retrieve_pairs(queries, corpus, assignment, req: RetrievalRequest) -> list[RetrievedPair]:
    """Diversity-aware pair retrieval over a clustered corpus.

    Every corpus sample must carry a cluster assignment in [0, req.G).
    Requires G * len(queries) >= req.N candidate pairs.
    """
    queries = list(queries)
    corpus = list(corpus)
    if not queries:
        raise ValueError("queries must be non-empty")
    if not corpus:
        raise ValueError("corpus must be non-empty")
    _check_labels(queries, corpus, req.direction)
    for doc in corpus:
        cid = assignment.assignments.get(doc.id)
        if cid is None:
            raise ValueError(f"corpus sample {doc.id!r} lacks a cluster assignment")
        if not 0 <= cid < req.G:
            raise ValueError(f"cluster id {cid} of sample {doc.id!r} outside [0, {req.G})")
    if req.G * len(queries) < req.N:
        raise ValueError(
            f"cannot select {req.N} pairs from at most {req.G * len(queries)} candidates")

    clusters: list[list] = [[] for _ in range(req.G)]
    for doc in corpus:
        clusters[assignment.assignments[doc.id]].append(doc)
    indexes = [build_index(docs) if docs else None for docs in clusters]

    cluster_pairs: list[list] = [[] for _ in range(req.G)]
    skipped_self = 0
    for qpos, q in enumerate(queries):
        qtokens = tokenize(q.code)
        for cid in range(req.G):
            index = indexes[cid]
            if index is None:
                continue
            best_pos, best = 0, -math.inf
            for pos in range(len(index.doc_ids)):
                s = _score_at(index, qtokens, pos)
                if s > best:
                    best_pos, best = pos, s
            doc_id = index.doc_ids[best_pos]
            if doc_id == q.id:
                skipped_self += 1
                continue
            cluster_pairs[cid].append((qpos, q.id, doc_id, best, cid))
    if skipped_self:
        log.info("excluded %d exact-id self pairs", skipped_self)

    for cid in range(req.G):
        cluster_pairs[cid].sort(key=lambda rec: -rec[3])  # stable: ties keep query order
    ordered = sorted(range(req.G), key=lambda cid: (-len(cluster_pairs[cid]), cid))
    lists = [cluster_pairs[cid] for cid in ordered]
    total = sum(len(lst) for lst in lists)
    if total < req.N:
        raise ValueError(f"only {total} candidate pairs available, need {req.N}")
    picked = interleave_select(lists, req.N)
    return [_to_pair(rec, req.direction) for rec in picked]


def retrieve_pairs_no_clustering(queries, corpus, n: int, per_query: int,
                                 direction: str) -> list[RetrievedPair]:
    """Ablation: one flat index; each query contributes its top ``per_query``
    hits (rank order, ties by doc order), then all pairs are ranked globally
    by score (ties by query order, then rank) and the top n are taken."""
    queries = list(queries)
    corpus = list(corpus)
    if not queries or not corpus:
        raise ValueError("queries and corpus must be non-empty")
    if per_query < 1:
        raise ValueError("per_query must be at least 1")
    _check_labels(queries, corpus, direction)
    index = build_index(corpus)
    candidates = []
    for qpos, q in enumerate(queries):
        qtokens = tokenize(q.code)
        scores = [_score_at(index, qtokens, pos) for pos in range(len(corpus))]
        order = sorted(range(len(corpus)), key=lambda pos: (-scores[pos], pos))[:per_query]
        for rank, pos in enumerate(order):
            if corpus[pos].id == q.id:
                continue
            candidates.append((scores[pos], qpos, rank, q.id, corpus[pos].id))
    candidates.sort(key=lambda rec: (-rec[0], rec[1], rec[2]))
    if len(candidates) < n:
        raise ValueError(f"only {len(candidates)} candidate pairs available, need {n}")
    out = []
    for pair_score, _qpos, _rank, query_id, doc_id in candidates[:n]:
        if direction == "injection":
            out.append(RetrievedPair(query_id, doc_id, pair_score, -1, direction))
        else:
            out.append(RetrievedPair(doc_id, query_id, pair_score, -1, direction))
    return out


def random_match_pairs(queries, corpus, n: int, direction: str, seed: int) -> list[RetrievedPair]:
    """Ablation: seeded uniform query/doc pairing with no search; scores are 0."""
    queries = list(queries)
    corpus = list(corpus)
    if not queries or not corpus:
        raise ValueError("queries and corpus must be non-empty")
    _check_labels(queries, corpus, direction)
    rng = np.random.Generator(np.random.PCG64(seed))
    out: list[RetrievedPair] = []
    rejects = 0
    while len(out) < n:
        q = queries[int(rng.integers(len(queries)))]
        d = corpus[int(rng.integers(len(corpus)))]
        if q.id == d.id:
            rejects += 1
            if rejects > 1000 + 10 * n:
                raise PipelineError("random matching kept hitting identical ids; pools overlap")
            continue
        if direction == "injection":
            out.append(RetrievedPair(q.id, d.id, 0.0, -1, direction))
        else:
            out.append(RetrievedPair(d.id, q.id, 0.0, -1, direction))
    return out


def save_pairs(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "clean_id": p.clean_id,
                "vul_id": p.vul_id,
                "score": p.score,
                "cluster": p.cluster_id,
                "direction": p.direction,
            }) + "\n")


def load_pairs(path) -> list[RetrievedPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append(RetrievedPair(obj["clean_id"], obj["vul_id"], float(obj["score"]),
                                       int(obj["cluster"]), obj["direction"]))
    return pairs
