#!/usr/bin/env python3
"""Regenerate datasets/toy_dialogs.jsonl.

Three short sessions, twelve chunks, ten questions. Every question names at
least one entity that appears in exactly the chunk(s) cited as evidence, so
a correct retrieval pipeline reaches full recall on this set — while the
total triple count exceeds the default candidate budget, which keeps the
rank-and-truncate stage honest. The file is deterministic: running this
script twice produces identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "datasets" / "toy_dialogs.jsonl"

# Session epochs: s1 March 2021, s2 July 2022, s3 June 2023.
T1 = 1614765600   # 2021-03-03T10:00:00Z
T2 = 1657101600   # 2022-07-06T10:00:00Z
T3 = 1686650400   # 2023-06-13T10:00:00Z
HOUR = 3600

SESSIONS = [
    ("s1", T1, [
        [("ALICE", "I moved to Paris in 2021. My flat in Bastille faces the Seine."),
         ("BOB", "Nice! How do you like the city so far?")],
        [("ALICE", "I started a job at Lumon Industries."),
         ("BOB", "Congratulations on the new role!")],
        [("ALICE", "My sister Dana visited Montmartre with me."),
         ("BOB", "I hear the view from there is great.")],
        [("ALICE", "We adopted a cat named Clementine."),
         ("BOB", "That is a lovely name for a cat.")],
    ]),
    ("s2", T2, [
        [("BOB", "I visited Kyoto for a robotics conference. Shinkansen connects Tokyo with Kyoto."),
         ("ALICE", "Did you get to see the temples?")],
        [("BOB", "I presented GraphPaper at the workshop. GraphPaper cites HyperTree throughout."),
         ("ALICE", "How was it received?")],
        [("BOB", "I bought a Nikon camera at the airport."),
         ("ALICE", "You always wanted a proper camera.")],
        [("BOB", "I joined RiverClub for morning swims. RiverClub meets near Tower Bridge."),
         ("ALICE", "Swimming before work sounds refreshing.")],
    ]),
    ("s3", T3, [
        [("CAROL", "I joined Mastodon in June 2023. Mastodon federates with Pixelfed."),
         ("DAVE", "Which server did you pick?")],
        [("CAROL", "I organize PhotoWalk every Saturday. PhotoWalk toured Trastevere in May."),
         ("DAVE", "Count me in for the next one.")],
        [("CAROL", "I planted tomatoes on the balcony."),
         ("DAVE", "Fresh tomatoes beat store-bought ones.")],
        [("CAROL", "I borrowed Salambo from the library. Flaubert wrote Salambo in 1862."),
         ("DAVE", "Tell me how it ends, I never finished it.")],
    ]),
]

# (qid, ts, text, evidence sessions, evidence chunks)
QUESTIONS = [
    ("q01", T3 + 30 * 24 * HOUR, "Did Alice move to Paris in 2021?", ["s1"], ["s1#0"]),
    ("q02", T3 + 30 * 24 * HOUR, "Where does Alice work, is it Lumon Industries?", ["s1"], ["s1#1"]),
    ("q03", T3 + 30 * 24 * HOUR, "Who visited Montmartre with Dana?", ["s1"], ["s1#2"]),
    ("q04", T3 + 30 * 24 * HOUR, "Is Clementine the cat that Alice adopted?", ["s1"], ["s1#3"]),
    ("q05", T3 + 30 * 24 * HOUR, "When did Bob visit Kyoto?", ["s2"], ["s2#0"]),
    ("q06", T3 + 30 * 24 * HOUR, "What did Bob present, GraphPaper?", ["s2"], ["s2#1"]),
    ("q07", T3 + 30 * 24 * HOUR, "Did Bob buy a Nikon camera?", ["s2"], ["s2#2"]),
    ("q08", T3 + 30 * 24 * HOUR, "What did Carol join in June 2023?", ["s3"], ["s3#0"]),
    ("q09", T3 + 30 * 24 * HOUR, "Who organizes PhotoWalk on Saturdays?", ["s3"], ["s3#1"]),
    ("q10", T3 + 30 * 24 * HOUR, "Who borrowed Salambo from the library?", ["s3"], ["s3#3"]),
]


def main() -> None:
    records = []
    for session_id, start, chunks in SESSIONS:
        for i, turns in enumerate(chunks):
            records.append({
                "type": "chunk",
                "session_id": session_id,
                "ts": start + i * HOUR,
                "turns": [{"speaker": s, "text": t} for s, t in turns],
            })
    for qid, ts, text, ev_sessions, ev_chunks in QUESTIONS:
        records.append({
            "type": "question",
            "qid": qid,
            "ts": ts,
            "text": text,
            "evidence_session_ids": ev_sessions,
            "evidence_chunk_ids": ev_chunks,
        })
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {len(records)} records to {OUT}")


if __name__ == "__main__":
    main()
