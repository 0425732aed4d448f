#!/usr/bin/env python3
"""Compare retrieval variants on a transcript dataset.

Runs the benchmark once per configuration: the full pipeline, temporal decay
disabled, session weighting disabled, and flat (non-hierarchical) candidate
gathering. Prints one row per variant.

Usage: python scripts/ablation_sweep.py [dataset.jsonl]
"""

from __future__ import annotations

import sys
from pathlib import Path

from hiermem.bench import load_transcript, run_bench
from hiermem.config import EngineConfig

VARIANTS = [
    ("full", {}),
    ("no-decay", {"decay_enabled": False}),
    ("no-session-weight", {"session_weight_enabled": False}),
    ("flat", {"flat_retrieval": True}),
]


def main() -> int:
    default = Path(__file__).resolve().parent.parent / "datasets" / "toy_dialogs.jsonl"
    dataset_path = Path(sys.argv[1]) if len(sys.argv) > 1 else default
    dataset = load_transcript(dataset_path)

    print(f"dataset: {dataset.name} "
          f"({len(dataset.chunks)} chunks, {len(dataset.questions)} questions)")
    print(f"{'variant':<20} {'recall@k':>9} {'K_R':>8} {'T_R ms':>8}")
    for name, overrides in VARIANTS:
        config = EngineConfig()
        for key, value in overrides.items():
            setattr(config.retrieval, key, value)
        report = run_bench(dataset, config)
        print(f"{name:<20} {report.recall_at_k:>9.3f} "
              f"{report.k_r_mean:>8.1f} {report.t_r_ms_mean:>8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
