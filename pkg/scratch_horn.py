"""Throwaway smoke test: check -> horn solve -> emit -> parse -> re-solve."""
import sys

sys.path.insert(0, "src")

from sprite_check.check import checkProgram
from sprite_check.horn import (
    Sat,
    Unsat,
    emitSystem,
    parseSystem,
    showAssignment,
    showFlat,
    solve,
    solveJob,
    systemFromJob,
)
from sprite_check.smt import SolverSession, defaultSolverCommand
from sprite_check.syntax import anfProgram, elaborate, parse

INC = """
val inc : x:int[v|0 <= v] => int[v|x < v];
let inc = (x) => {
  let one = 1;
  x + one
};
"""

MAXCLIENT = """
val max : x:int => y:int => int[?];
let max = (x, y) => {
  let c = x < y;
  if (c) { y } else { x }
};

val client : u:int[v|0 <= v] => int[v|0 <= v];
let client = (u) => {
  max(0, u)
};
"""

BADCLIENT = """
val max : x:int => y:int => int[?];
let max = (x, y) => {
  let c = x < y;
  if (c) { y } else { x }
};

val client : u:int => int[v|10 < v];
let client = (u) => {
  max(0, u)
};
"""


def run(name: str, src: str, expect: str) -> None:
    prog = elaborate(anfProgram(parse(src, f"{name}.re")))
    job = checkProgram(prog)
    with SolverSession(defaultSolverCommand()) as session:
        res = solveJob(job, session)
        kind = "sat" if isinstance(res, Sat) else "unsat"
        print(f"== {name}: {kind} (expected {expect})")
        if isinstance(res, Sat):
            print(showAssignment(res.assignment))
        else:
            print(showFlat(res.clause))
        print(
            f"   iters={res.stats.iterations} queries={res.stats.smt_queries} "
            f"cands {res.stats.candidates_initial}->{res.stats.candidates_final}"
        )
        assert kind == expect, f"{name}: got {kind}, wanted {expect}"

        # textual round trip must reproduce the verdict
        system = systemFromJob(job)
        text = emitSystem(system)
        reparsed = parseSystem(text)
        res2 = solve(reparsed, session)
        kind2 = "sat" if isinstance(res2, Sat) else "unsat"
        assert kind2 == kind, f"{name}: round-trip changed verdict to {kind2}"
        print(f"   round-trip ok ({len(text)} chars)")


run("inc", INC, "sat")
run("maxclient", MAXCLIENT, "sat")
run("badclient", BADCLIENT, "unsat")
print("horn smoke ok")
