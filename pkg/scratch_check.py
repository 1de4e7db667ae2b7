from sprite_check.syntax import ParseContext, parse, anfProgram, elaborate, Program
from sprite_check.check import checkProgram
from sprite_check.logic import showCstr

PRELUDE = """
type nat = int[v|0 <= v];
type pos = int[v|0 < v];
val assert : bool[b|b] => int;
val add : x:int => y:int => int[v|v == x + y];
val sub : x:int => y:int => int[v|v == x - y];
val leq : x:int => y:int => bool[b|b == (x <= y)];
"""

INC = """
val inc : x:nat => int[v|x < v];
let inc = (x) => {
  let one = 1;
  add(x, one)
};
"""

MAXCLIENT = """
val max : forall 'a:Base. 'a => 'a => 'a;
let max = (x, y) => { if (x < y) { y } else { x } };

val client : () => int[v|0 < v];
let client = (u) => {
  let r = max(0, 5);
  r + 1
};
"""


def job(src, name, prelude=PRELUDE, **kw):
    ctx = ParseContext()
    items = parse(prelude, "prelude.re", ctx).items
    prog = parse(src, name, ctx)
    prog = Program(items + prog.items, prog.directives, prog.path)
    prog = elaborate(anfProgram(prog))
    return checkProgram(prog, **kw)


r = job(INC, "inc.re")
print("=== inc ===")
print(showCstr(r.cstr))
print("kappas:", r.kappa_sorts)
print()
r = job(MAXCLIENT, "maxclient.re")
print("=== max/client ===")
print(showCstr(r.cstr))
print("kappas:", r.kappa_sorts)
