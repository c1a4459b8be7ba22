"""Run one program under both engines with the stochastic stub and compare
what each engine did: tool calls, tokens, accuracy and trace hashes.

    python demos/01_engines_side_by_side.py [PROGRAM_ID] [REPEATS]
"""

import sys

from dualorch.core import Mode, RunConfig, load_suite
from dualorch.gateway import build_backend
from dualorch.orchestrators import run_program
from dualorch.suite import bundled_manifest, bundled_suite_dir, load_hints
from dualorch.trace import divergence_point, trace_hash


def main() -> None:
    pid = sys.argv[1] if len(sys.argv) > 1 else "NC101"
    repeats = int(sys.argv[2]) if len(sys.argv) > 2 else 4
    suite_dir = bundled_suite_dir()
    programs = {p.id: p for p in load_suite(bundled_manifest())}
    program = programs[pid]
    base = RunConfig(backend={"kind": "stub", "model": "stub"})
    backend = build_backend(base.backend, hints=load_hints(suite_dir, list(programs.values())))

    for mode in (Mode.DETERMINISTIC, Mode.AGENTIC):
        print(f"== {pid} {mode.value}")
        runs = []
        for k in range(repeats):
            record = run_program(program, base.replace(mode=mode, seed=k), backend,
                                 run_index=k, fixtures_dir=suite_dir)
            runs.append(record)
            tools = record.trace.tools()
            print(f"  seed={k} ca={record.ca} tokens={record.token_ledger.totals.total} "
                  f"error={record.error.value if record.error else '-'} "
                  f"hash={trace_hash(record.trace)[:12]} tools={tools}")
        hashes = {trace_hash(r.trace) for r in runs}
        print(f"  distinct trace hashes: {len(hashes)}")
        if len(runs) > 1:
            print(f"  first divergence seed0 vs seed1: "
                  f"{divergence_point(runs[0].trace, runs[1].trace)}")


if __name__ == "__main__":
    main()
