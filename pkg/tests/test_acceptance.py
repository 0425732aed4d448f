"""Acceptance gate: ten numbered criteria, one test per criterion.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail line per
criterion. Where a criterion calls for an oracle, the expected values are
recomputed here from math/statistics primitives — not by calling back into
the code under test.
"""

import json
import math
import random
import re
import shutil
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from hiermem.bench import load_transcript, run_bench
from hiermem.config import EngineConfig
from hiermem.engine import MemoryEngine
from hiermem.graph import MemoryGraph
from hiermem.persistence import recover, snapshot_to_obj
from hiermem.retrieve import Query, RetrievalOptions, Retriever
from hiermem.scoring import (
    ScoredCandidate,
    ScoringParams,
    TemporalContext,
    rank_candidates,
    relevance,
    semantic_fusion,
    temporal_weight,
)
from hiermem.service import create_app
from hiermem.textkit import STOPWORDS

from conftest import TOY_DATASET, basis, unit

BASE_TS = 1_600_000_000


def _elapsed_ok(start: float, bound_s: float, label: str) -> None:
    elapsed = time.perf_counter() - start
    assert elapsed < bound_s, f"{label} took {elapsed:.2f}s, bound is {bound_s}s"
    print(f"{label}: PASS ({elapsed:.2f}s < {bound_s:.0f}s)")


# -- criterion 1 --------------------------------------------------------------------


def test_criterion_01_scoring_exactness():
    """fusion(1.0,0.5)=2/3±1e-6; w(tau,tau,k)=e^-1±1e-9; w(4tau,tau,0.5)=e^-2±1e-9."""
    start = time.perf_counter()
    assert abs(semantic_fusion(1.0, 0.5) - 0.666667) < 1e-6

    rng = random.Random(0xAC01)
    for _ in range(100):
        tau = rng.uniform(1.0, 1e6)
        k = rng.uniform(0.05, 0.95)
        assert abs(temporal_weight(tau, tau, k) - math.exp(-1.0)) < 1e-9
    for _ in range(100):
        tau = rng.uniform(1.0, 1e6)
        assert abs(temporal_weight(4.0 * tau, tau, 0.5) - math.exp(-2.0)) < 1e-9

    _elapsed_ok(start, 1.0, "criterion 1 (scoring exactness)")


# -- criterion 2 --------------------------------------------------------------------


def test_criterion_02_scoring_properties():
    """1000 random cases per property: HM bounds and monotonicity, strict
    decay decrease, R bounded by its factors, shift-invariant ranking."""
    start = time.perf_counter()
    rng = random.Random(0xAC02)

    # harmonic mean stays between its arguments
    for _ in range(1000):
        a, b = rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)
        hm = semantic_fusion(a, b)
        assert min(a, b) <= hm <= max(a, b)

    # monotone in each argument
    for _ in range(1000):
        a, b = rng.uniform(0.0, 0.99), rng.uniform(0.001, 1.0)
        bigger = a + rng.uniform(0.001, 1.0 - a)
        assert semantic_fusion(bigger, b) >= semantic_fusion(a, b)
        assert semantic_fusion(b, bigger) >= semantic_fusion(b, a)

    # strictly decreasing in age (ranges keep (age/gap)^k << 745, where
    # exp() would underflow to an exact 0.0 and flatten the comparison)
    for _ in range(1000):
        gap = rng.uniform(1e4, 1e6)
        k = rng.uniform(0.05, 0.9)
        age = rng.uniform(0.0, 1e7)
        step = rng.uniform(1.0, 1e4)
        assert temporal_weight(age + step, gap, k) < temporal_weight(age, gap, k)

    # relevance never exceeds either of its factors
    params = ScoringParams()
    for _ in range(1000):
        cand = ScoredCandidate("t1", rng.uniform(0, 1), rng.uniform(0, 1),
                               BASE_TS - rng.randint(0, 10**7))
        ctx = TemporalContext(query_ts=BASE_TS, median_gap=rng.uniform(1.0, 1e6))
        scored = relevance(cand, ctx, params)
        assert scored.relevance <= scored.semantic_score
        assert scored.relevance <= scored.time_weight

    # ranking is invariant under a uniform timestamp shift
    for _ in range(1000):
        n = rng.randint(2, 20)
        rows = [(f"t{i:03d}", rng.uniform(0, 1), rng.uniform(0, 1),
                 BASE_TS - rng.randint(0, 10**6)) for i in range(n)]
        if rng.random() < 0.3:  # force ties on every component
            tid, ss, st, ts = rows[0]
            rows.append((f"t{n:03d}", ss, st, ts))
        shift = rng.randint(-10**8, 10**8)

        def order(offset):
            qts = BASE_TS + 1000 + offset
            ages = [max(0.0, float(qts - (ts + offset))) for _, _, _, ts in rows]
            ctx = TemporalContext(query_ts=qts, median_gap=max(1.0, sorted(ages)[len(ages) // 2]))
            scored = [relevance(ScoredCandidate(tid, ss, st, ts + offset), ctx, params)
                      for tid, ss, st, ts in rows]
            return [c.triple_id for c in rank_candidates(scored, 15)]

        assert order(0) == order(shift)

    _elapsed_ok(start, 5.0, "criterion 2 (scoring properties)")


# -- criterion 3 --------------------------------------------------------------------


def test_criterion_03_dedup_idempotence(tmp_path):
    """Re-ingesting the same 10-chunk session adds no triples, only links."""
    start = time.perf_counter()
    config = EngineConfig.from_dict({
        "backend": {"dim": 64, "seed": 7},
        "storage": {"data_dir": str(tmp_path / "data")},
    })
    facts = [f"I bought Gadget{i}." for i in range(10)]

    with MemoryEngine(config) as engine:
        for i, fact in enumerate(facts):
            report = engine.ingest({"session_id": "s1", "ts": BASE_TS + i * 60,
                                    "turns": [{"speaker": "USER", "text": fact}]})
            assert report.triples_added + report.triples_merged == 1  # conservation
            assert report.triples_added == 1
        triples_after_first = engine.stats()["triples"]

        for i, fact in enumerate(facts):  # same facts, fresh chunks
            report = engine.ingest({"session_id": "s1", "ts": BASE_TS + 9000 + i * 60,
                                    "turns": [{"speaker": "USER", "text": fact}]})
            assert report.triples_added + report.triples_merged == 1
            assert report.triples_added == 0
            assert report.triples_merged >= 1

        assert engine.stats()["triples"] == triples_after_first == 10
        assert engine.stats()["chunks"] == 20
        snap = engine.graph.snapshot()
        for triple in snap.triples.values():
            assert len(triple.chunk_ids) == 2  # original plus duplicate evidence

    _elapsed_ok(start, 10.0, "criterion 3 (dedup idempotence)")


# -- criterion 4 --------------------------------------------------------------------


def test_criterion_04_traceability_walk(tmp_path):
    """5 sessions x 10 chunks; every cross-layer link resolves both ways."""
    start = time.perf_counter()
    config = EngineConfig.from_dict({
        "backend": {"dim": 64, "seed": 7},
        "storage": {"data_dir": str(tmp_path / "data")},
    })
    with MemoryEngine(config) as engine:
        n = 0
        for s in range(5):
            for c in range(10):
                # 7 places cycling over 50 chunks: plenty of duplicates, so
                # triples acquire links into several sessions and chunks
                engine.ingest({"session_id": f"s{s}", "ts": BASE_TS + n * 60,
                               "turns": [{"speaker": "USER",
                                          "text": f"I visited Place{n % 7}."}]})
                n += 1
        snap = engine.graph.snapshot()

    assert len(snap.sessions) == 5
    assert len(snap.chunks) == 50
    assert snap.triples

    for sid, session in snap.sessions.items():
        for tid in session.triple_ids:
            assert sid in snap.triples[tid].session_ids
        for cid in session.chunk_ids:
            assert snap.chunks[cid].session_id == sid

    for tid, t in snap.triples.items():
        assert t.subject_id in snap.entities
        assert t.object_id in snap.entities
        assert t.session_ids and t.chunk_ids
        for sid in t.session_ids:
            assert tid in snap.sessions[sid].triple_ids
        for cid in t.chunk_ids:
            assert tid in snap.chunks[cid].triple_ids
        assert tid in snap.entity_triples[t.subject_id]
        assert tid in snap.entity_triples[t.object_id]
        assert tid in snap.pair_triples[(t.subject_id, t.object_id)]

    for cid, chunk in snap.chunks.items():
        assert chunk.session_id in snap.sessions
        assert cid in snap.sessions[chunk.session_id].chunk_ids
        for tid in chunk.triple_ids:
            assert cid in snap.triples[tid].chunk_ids

    for eid, tids in snap.entity_triples.items():
        assert eid in snap.entities
        for tid in tids:
            assert eid in (snap.triples[tid].subject_id, snap.triples[tid].object_id)

    for (subj, obj), tids in snap.pair_triples.items():
        for tid in tids:
            assert (snap.triples[tid].subject_id, snap.triples[tid].object_id) == (subj, obj)

    # some fact ended up cross-referenced by several sessions
    assert any(len(t.session_ids) > 1 for t in snap.triples.values())

    _elapsed_ok(start, 10.0, "criterion 4 (traceability walk)")


# -- criterion 5 --------------------------------------------------------------------


class _PlannedQueryBackend:
    """Scripted query-side backend: fixed embedding and entity anchors."""

    def __init__(self, dim, qvec, entities):
        self.dim = dim
        self._qvec = qvec
        self._entities = tuple(entities)

    def embed(self, text):
        return self._qvec

    def extract_entities(self, text):
        return [(name, "other") for name in self._entities]

    def extract_triples(self, text):
        return []

    def summarize(self, text, prior_summary=""):
        return ("", set())


def _random_unit(nrng, dim):
    vec = nrng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    vec.setflags(write=False)
    return vec


def _oracle_order(snap, qvec, anchors, query_keys, qts, top_k, entry_limit, flat):
    """Brute-force recomputation of the ranked candidate ids."""

    def clamp01(x):
        return min(1.0, max(0.0, x))

    scores = {}
    for sid, node in snap.sessions.items():
        overlap = (len(query_keys & set(node.keys)) / max(1, len(query_keys))
                   if query_keys else 0.0)
        sim = (0.0 if node.summary_embedding is None
               else clamp01((float(np.dot(qvec, node.summary_embedding)) + 1.0) / 2.0))
        scores[sid] = 0.5 * overlap + (1.0 - 0.5) * sim
    entry = sorted(scores, key=lambda sid: (-scores[sid],
                                            -snap.sessions[sid].last_ts, sid))[:entry_limit]

    if flat:
        pool = set(snap.triples)
    else:
        pool = {tid for tid, t in snap.triples.items()
                if t.subject_id in anchors or t.object_id in anchors}
        for sid in entry:
            pool.update(snap.sessions[sid].triple_ids)
    if not pool:
        return []

    ages = sorted(max(0.0, float(qts - snap.triples[tid].ts)) for tid in pool)
    n = len(ages)
    mid = float(ages[n // 2]) if n % 2 else (ages[n // 2 - 1] + ages[n // 2]) / 2.0
    tau = max(1.0, mid)

    rows = []
    for tid in pool:
        t = snap.triples[tid]
        s_sess = max((scores.get(sid, 0.0) for sid in t.session_ids), default=0.0)
        s_tri = clamp01((float(np.dot(qvec, t.relation_embedding)) + 1.0) / 2.0)
        if flat:
            sem = s_tri
        else:
            total = s_sess + s_tri
            sem = 0.0 if total == 0.0 else 2.0 * s_sess * s_tri / total
        age = max(0.0, float(qts - t.ts))
        w = math.exp(-((age / tau) ** 0.5))
        rows.append((sem * w, t.ts, tid))
    rows.sort(key=lambda r: (-r[0], -r[1], r[2]))
    return [tid for _, _, tid in rows[:top_k]]


def test_criterion_05_rerank_oracle_equivalence():
    """50 random graphs: retrieve() ordering == brute-force R, ties included."""
    start = time.perf_counter()
    dim = 32
    entity_pool = [f"e{i}" for i in range(12)]
    key_pool = entity_pool + ["kw1", "kw2", "kw3"]
    word_re = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)?")

    compared = 0
    branches = set()
    for trial in range(50):
        rng = random.Random(5000 + trial)
        nrng = np.random.RandomState(9000 + trial)

        graph = MemoryGraph()
        n_sessions = rng.randint(2, 6)
        chunk_of = {}
        for s in range(n_sessions):
            sid = f"s{s}"
            if rng.random() < 0.8:
                keys = frozenset(rng.sample(key_pool, rng.randint(1, 4)))
                emb = _random_unit(nrng, dim) if rng.random() < 0.8 else None
                graph.upsert_session(sid, f"recap {s}", keys, BASE_TS + s, emb)
            else:
                graph.upsert_session(sid, "", frozenset(), BASE_TS + s)
            chunk_of[sid] = graph.insert_chunk(sid, f"note {s}", (), BASE_TS + s).chunk_id

        last_vec, last_ts = None, None
        for _ in range(rng.randint(5, 200)):
            sid = f"s{rng.randrange(n_sessions)}"
            subj, obj = rng.sample(entity_pool, 2)
            if last_vec is not None and rng.random() < 0.15:
                vec, ts = last_vec, last_ts  # exact tie on both R and ts
            else:
                vec, ts = _random_unit(nrng, dim), BASE_TS + rng.randint(0, 2_000_000)
            triple = graph.insert_triple(subj, f"rel{rng.randrange(6)}", obj,
                                         sid, chunk_of[sid], ts, vec)
            last_vec, last_ts = vec, ts
            if rng.random() < 0.2:
                other = f"s{rng.randrange(n_sessions)}"
                graph.add_hyperlink(triple.triple_id, other, chunk_of[other])

        snap = graph.snapshot()
        qvec = _random_unit(nrng, dim)
        named = rng.sample(entity_pool, rng.randint(1, 3))
        if rng.random() < 0.2:
            named.append("zz9")  # unknown anchor: must be a no-op
        text_tokens = list(named)
        if rng.random() < 0.5:
            text_tokens += rng.sample(key_pool, 2)
        text = " ".join(text_tokens)
        degraded = rng.random() < 0.25
        backend = _PlannedQueryBackend(dim, qvec, [] if degraded else named)

        qts = BASE_TS + rng.randint(500_000, 3_000_000)
        top_k = (3, 15, 50)[trial % 3]
        entry_limit = (1, 2, 5)[trial % 3]
        flat = trial % 5 == 0

        retriever = Retriever(
            backend, ScoringParams(top_k=top_k),
            RetrievalOptions(entry_limit=entry_limit, flat_retrieval=flat))
        result = retriever.retrieve(snap, Query(text, ts=qts), now_ts=0)

        tokens = word_re.findall(text.lower())
        query_keys = frozenset(t for t in tokens if len(t) >= 2 and t not in STOPWORDS)
        anchors = (set(t for t in tokens if len(t) >= 2 and t not in STOPWORDS)
                   if degraded else set(named))
        expected = _oracle_order(snap, qvec, anchors, query_keys, qts,
                                 top_k, entry_limit, flat)
        got = [c.triple_id for c in result.candidates]
        assert got == expected, f"trial {trial}: {got} != {expected}"
        compared += len(got)
        branches.add(("flat" if flat else "tree", "degraded" if degraded else "named"))

    assert compared > 500, "comparisons were near-vacuous"
    assert {"flat", "tree"} <= {b[0] for b in branches}
    assert {"degraded", "named"} <= {b[1] for b in branches}

    _elapsed_ok(start, 30.0, "criterion 5 (rerank oracle equivalence)")


# -- criterion 6 --------------------------------------------------------------------


def test_criterion_06_temporal_ordering_flip():
    """Decay ranks the fresher near-duplicate first; pure semantics does not."""
    start = time.perf_counter()
    dim = 4
    day = 86_400
    ts_old = BASE_TS
    ts_new = BASE_TS + 90 * day
    qts = ts_new + day

    graph = MemoryGraph()
    graph.upsert_session("s1", "facts about things", frozenset({"fact"}),
                         ts_old, basis(dim, 0))
    c1 = graph.insert_chunk("s1", "old note", (), ts_old).chunk_id
    c2 = graph.insert_chunk("s1", "new note", (), ts_new).chunk_id
    # cosines against the query vector e0: 0.95 (older) vs 0.90 (newer)
    t_old = graph.insert_triple("alpha", "likes", "beta", "s1", c1, ts_old,
                                unit([0.95, math.sqrt(1 - 0.95**2), 0.0, 0.0]))
    t_new = graph.insert_triple("gamma", "likes", "delta", "s1", c2, ts_new,
                                unit([0.90, 0.0, math.sqrt(1 - 0.90**2), 0.0]))
    snap = graph.snapshot()
    backend = _PlannedQueryBackend(dim, basis(dim, 0), ["alpha", "gamma"])
    query = Query("which fact is most recent?", ts=qts)

    def order(params):
        result = Retriever(backend, params).retrieve(snap, query, now_ts=0)
        return [c.triple_id for c in result.candidates]

    semantic_only = order(ScoringParams(decay_enabled=False))
    with_decay = order(ScoringParams())

    assert semantic_only == [t_old.triple_id, t_new.triple_id]
    assert with_decay == [t_new.triple_id, t_old.triple_id]
    assert semantic_only != with_decay

    _elapsed_ok(start, 10.0, "criterion 6 (temporal ordering flip)")


# -- criterion 7 --------------------------------------------------------------------


def test_criterion_07_recovery_equivalence(tmp_path):
    """Snapshot+suffix replay == full-log replay at 20 crash offsets."""
    start = time.perf_counter()
    dim = 64
    config = EngineConfig.from_dict({
        "backend": {"dim": dim, "seed": 7},
        "storage": {"data_dir": str(tmp_path / "live"), "snapshot_every": 97},
    })
    rng = random.Random(0xAC07)

    engine = MemoryEngine(config)
    snapshot_sizes: dict[str, int] = {}  # snapshot filename -> log size when written

    def note_new_snapshots():
        for path in engine.snapshot_dir.glob("*.snap"):
            if path.name not in snapshot_sizes:
                snapshot_sizes[path.name] = engine.log_path.stat().st_size

    i = 0
    while engine.stats()["log_seq"] < 1000:
        text = (f"I bought Item{rng.randrange(15)} yesterday. "
                f"I visited Spot{rng.randrange(15)} after.")
        engine.ingest({"session_id": f"s{i % 6}", "ts": BASE_TS + i * 60,
                       "turns": [{"speaker": "USER", "text": text}]})
        note_new_snapshots()
        i += 1
        assert i < 400, "workload never reached 1000 events"
    engine.close()
    note_new_snapshots()
    assert len(snapshot_sizes) >= 2

    full_log = engine.log_path.read_bytes()
    snapshot_bytes = {name: (engine.snapshot_dir / name).read_bytes()
                      for name in snapshot_sizes}

    offsets = [len(full_log), min(snapshot_sizes.values()) + 10]
    offsets += [rng.randrange(0, len(full_log) + 1) for _ in range(18)]
    assert any(x >= min(snapshot_sizes.values()) for x in offsets)

    for j, cut in enumerate(offsets):
        work = tmp_path / f"crash{j:02d}"
        with_snaps = work / "a"
        log_only = work / "b"
        for root, use_snapshots in ((with_snaps, True), (log_only, False)):
            (root / "snapshots").mkdir(parents=True)
            (root / "memory.log").write_bytes(full_log[:cut])
            if use_snapshots:
                for name, size in snapshot_sizes.items():
                    if size <= cut:
                        (root / "snapshots" / name).write_bytes(snapshot_bytes[name])

        a, b = MemoryGraph(), MemoryGraph()
        recover(a, with_snaps / "memory.log", with_snaps / "snapshots", dim)
        recover(b, log_only / "memory.log", log_only / "snapshots", dim)
        obj_a = snapshot_to_obj(a.snapshot(), dim)
        obj_b = snapshot_to_obj(b.snapshot(), dim)
        for obj in (obj_a, obj_b):
            obj.pop("saved_wall_ts")
            obj.pop("checksum")
        assert obj_a == obj_b, f"divergence at crash offset {cut}"
        shutil.rmtree(work)

    _elapsed_ok(start, 60.0, "criterion 7 (recovery equivalence)")


# -- criterion 8 --------------------------------------------------------------------


def test_criterion_08_bench_determinism(tmp_path):
    """Toy dataset: recall@15 == 1.0 and masked reports bitwise-stable."""
    start = time.perf_counter()
    dataset = load_transcript(TOY_DATASET)
    assert (len(dataset.session_ids), len(dataset.chunks), len(dataset.questions)) \
        == (3, 12, 10)

    first = run_bench(dataset, data_dir=str(tmp_path / "a"))
    second = run_bench(dataset, data_dir=str(tmp_path / "b"))

    assert first.top_k == 15
    assert first.recall_at_k == 1.0
    assert second.recall_at_k == 1.0
    assert first.to_json(mask_timing=True) == second.to_json(mask_timing=True)

    _elapsed_ok(start, 30.0, "criterion 8 (bench determinism)")


# -- criterion 9 --------------------------------------------------------------------


def test_criterion_09_top_k_budget_contract(tmp_path):
    """Every bench question: candidates <= 15 and FACTS lines <= 15."""
    start = time.perf_counter()
    dataset = load_transcript(TOY_DATASET)
    config = EngineConfig.from_dict({
        "storage": {"data_dir": str(tmp_path / "data")},
    })
    with MemoryEngine(config) as engine:
        for chunk in dataset.chunks:
            engine.ingest({"session_id": chunk.session_id, "ts": chunk.ts,
                           "turns": [{"speaker": s, "text": t} for s, t in chunk.turns]})
        for q in dataset.questions:
            result = engine.query(Query(q.text, ts=q.ts))
            assert len(result.candidates) <= 15, q.qid
            assert len(result.context.facts) <= 15, q.qid

    _elapsed_ok(start, 30.0, "criterion 9 (top-15 budget contract)")


# -- criterion 10 -------------------------------------------------------------------


def test_criterion_10_live_availability_over_http(tmp_path):
    """100/100: a fact is retrievable over HTTP right after its ingest 200."""
    start = time.perf_counter()
    config = EngineConfig.from_dict({
        "backend": {"dim": 64, "seed": 7},
        "storage": {"data_dir": str(tmp_path / "data")},
    })
    with MemoryEngine(config) as engine:
        client = TestClient(create_app(engine))
        hits = 0
        for i in range(100):
            ingest = client.post("/v1/memories", json={
                "session_id": f"s{i % 7}", "ts": BASE_TS + i * 60,
                "turns": [{"speaker": "USER",
                           "text": f"I keep Gadget{i} in Vault{i}."}]})
            assert ingest.status_code == 200
            answer = client.post("/v1/query", json={
                "text": f"Where is Gadget{i}?", "ts": BASE_TS + i * 60 + 1})
            assert answer.status_code == 200
            facts = answer.json()["context"]["facts"]
            if any(f"Gadget{i})" in fact for fact in facts):
                hits += 1
        assert hits == 100, f"only {hits}/100 immediately visible"

    _elapsed_ok(start, 60.0, "criterion 10 (live availability over HTTP)")
