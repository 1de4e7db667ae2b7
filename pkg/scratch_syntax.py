from sprite_check.syntax import (
    ParseContext, parse, anfProgram, elaborate, showExpr, LetItem,
    anfViolations,
)

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

SUMT = """
val sumT : total:nat => n:nat => nat / n;
let rec sumT = (total, n) => {
  if (n == 0) { total } else { sumT(total + n, n - 1) }
};
"""

LISTS = """
measure len : list('a) => nat;
type list('a) =
  | Nil => [v|len(v) == 0]
  | Cons (x:'a, xs:list('a)) => [v|len(v) == 1 + len(xs)];

val append : xs:list('a) => ys:list('a) => list('a)[v|len(v) == len(xs) + len(ys)] / len(xs);
let rec append = (xs, ys) => {
  switch (xs) {
    | Nil => ys
    | Cons (x, xs1) => Cons(x, append(xs1, ys))
  }
};
"""

MAXI = """
val maxI : rforall p : (int) => bool. int[v|p(v)] => int[v|p(v)] => int[v|p(v)];
let maxI = (x, y) => { if (x < y) { y } else { x } };

val bigger : c1:nat => c2:nat => nat;
let bigger = (c1, c2) => { maxI(c1, c2) };
"""

THM = """
val sum : n:nat => nat / n;
def sum = (n) => { if (n == 0) { 0 } else { n + sum(n - 1) } };

val thm_sum : n:nat => [2 * sum(n) == n * (n + 1)] / n;
let rec thm_sum = (n) => {
  switch (n) {
    | 0 => { 2 * sum(0) === 0 * (0 + 1) }
    | m => { 2 * sum(m) === 2 * (m + sum(m - 1)) ? thm_sum(m - 1) === m * (m + 1) }
  }
};
"""

PROOF_PRELUDE = """
val (===) : forall 'a:Base. x:'a => y:'a[v|v == x] => 'a[v|v == x && v == y];
let (===) = (x, y) => { y };
val (?) : forall 'a:Base. forall 'b:Base. rforall p : ('a) => bool. rforall q : ('b) => bool. x:'a[v|p(v)] => y:'b[v|q(v)] => 'a[v|p(v) && q(y)];
let (?) = (x, y) => { x };
"""


def run(name, src, extra=""):
    print(f"=== {name} ===")
    ctx = ParseContext()
    items = []
    items += parse(PRELUDE + extra, "prelude.re", ctx).items
    prog = parse(src, name, ctx)
    prog.items = items + prog.items
    prog = anfProgram(prog)
    prog2 = elaborate(prog)
    for it in prog2.items:
        if isinstance(it, LetItem) and it.span.file != "prelude.re":
            print(f"let {it.name} = {showExpr(it.rhs)}")
            bad = anfViolations(it.rhs)
            if bad:
                print("  ANF VIOLATIONS:", bad)
    snap = [showExpr(it.rhs) for it in prog2.items if isinstance(it, LetItem)]
    prog3 = elaborate(prog2)
    snap2 = [showExpr(it.rhs) for it in prog3.items if isinstance(it, LetItem)]
    print("elaborate idempotent:", snap == snap2)
    print()


run("inc.re", INC)
run("maxclient.re", MAXCLIENT)
run("sumT.re", SUMT)
run("lists.re", LISTS)
run("maxI.re", MAXI)
run("thm.re", THM, extra=PROOF_PRELUDE)
