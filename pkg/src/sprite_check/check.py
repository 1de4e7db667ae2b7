"""Bidirectional refinement checking: programs become Horn constraints.

Synthesis covers variables, constants, applications, annotations, and the
two instantiation forms; everything else is checked against a type. One
file yields one constraint, solved in one batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .logic import (
    BOOL,
    BinOp,
    DataSort,
    BoolLit,
    Cstr,
    All,
    C_TRUE,
    FuncSort,
    Fresh,
    Head,
    IntLit,
    Ite,
    KApp,
    NO_SPAN,
    Not,
    Pred,
    Span,
    SpriteError,
    SymbolTable,
    TRUE,
    UApp,
    Var,
    VarSort,
    cAnd,
    conjuncts,
    isBaseSort,
    pAnd,
    pEq,
    substPred,
    substPreds,
)
from .smt import AdtCtor, AdtDecl, AdtField
from .syntax import (
    Alt,
    EAnnot,
    EApp,
    EConst,
    EIf,
    ELam,
    ELet,
    ELetRec,
    ERApp,
    EReflect,
    ESwitch,
    ETAbs,
    ETApp,
    EVar,
    Expr,
    AliasItem,
    DataItem,
    Item,
    LetItem,
    MeasureItem,
    Program,
    ValItem,
)
from .types import (
    AllRef,
    AllTy,
    Base,
    BBool,
    BInt,
    BTCon,
    BTyVar,
    ConcRef,
    DataDecl,
    Env,
    Fun,
    Globals,
    Hole,
    KappaSpace,
    Kind,
    Type,
    UNIT_TYCON,
    baseSort,
    _envKappaParams,
    emptyGlobals,
    fresh,
    limit,
    refinementAt,
    registerData,
    reflect as reflectType,
    replaceTyvar,
    rinst,
    self_,
    showType,
    sortOfType,
    sub,
    substTypeVar,
    tvSubst,
    unapply,
    wf,
)


class UnboundVariable(SpriteError):
    pass


class NotAFunction(SpriteError):
    pass


class NotPolymorphic(SpriteError):
    pass


class MissingAnnotation(SpriteError):
    pass


class NonEmbeddableBody(SpriteError):
    pass


# ---------------------------------------------------------------------------
# primitive signatures


def _arithTy(op: str) -> Type:
    x, y, v = Var("x"), Var("y"), Var("v")
    return Fun(
        "x",
        Base(BInt(), "v", BoolLit(True)),
        Fun(
            "y",
            Base(BInt(), "v", BoolLit(True)),
            Base(BInt(), "v", pEq(v, BinOp(op, x, y))),
        ),
    )


def _cmpTy(op: str) -> Type:
    x, y, b = Var("x"), Var("y"), Var("b")
    body = Fun(
        "x",
        Base(BTyVar("a"), "v", BoolLit(True)),
        Fun(
            "y",
            Base(BTyVar("a"), "v", BoolLit(True)),
            Base(BBool(), "b", BinOp("<=>", b, BinOp(op, x, y))),
        ),
    )
    return AllTy("a", Kind.BASE, body)


def _logicTy(op: str) -> Type:
    x, y, b = Var("x"), Var("y"), Var("b")
    return Fun(
        "x",
        Base(BBool(), "v", BoolLit(True)),
        Fun(
            "y",
            Base(BBool(), "v", BoolLit(True)),
            Base(BBool(), "b", BinOp("<=>", b, BinOp(op, x, y))),
        ),
    )


def _notTy() -> Type:
    x, b = Var("x"), Var("b")
    return Fun(
        "x",
        Base(BBool(), "v", BoolLit(True)),
        Base(BBool(), "b", BinOp("<=>", b, Not(x))),
    )


def constty(value: object, span: Span = NO_SPAN) -> Type:
    """Exact type of a literal or primitive operator."""
    if isinstance(value, bool):
        b = Var("b")
        return Base(BBool(), "b", BinOp("<=>", b, BoolLit(value)))
    if isinstance(value, int):
        return Base(BInt(), "v", pEq(Var("v"), IntLit(value)))
    if value == ():
        return Base(BTCon(UNIT_TYCON), "v", BoolLit(True))
    if isinstance(value, str):
        if value in ("+", "-", "*"):
            return _arithTy(value)
        if value in ("==", "!=", "<", "<=", ">", ">="):
            return _cmpTy("=" if value == "==" else value)
        if value in ("&&", "||"):
            return _logicTy(value)
        if value == "!":
            return _notTy()
    raise SpriteError(f"unknown constant {value!r}", span)


# ---------------------------------------------------------------------------
# reflection: embedding program terms into the logic


def _spine(e: Expr) -> tuple[Expr, list[Expr]]:
    """Strip applications and instantiation wrappers down to the head."""
    args: list[Expr] = []
    while True:
        if isinstance(e, EApp):
            args.append(e.arg)
            e = e.fn
        elif isinstance(e, (ETApp, ERApp, EAnnot)):
            e = e.expr
        elif isinstance(e, ETAbs):
            e = e.body
        else:
            return e, list(reversed(args))


_EMBED_OPS = {
    "+": "+", "-": "-", "*": "*",
    "==": "=", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
    "&&": "&&", "||": "||",
}


def embed(e: Expr, g: Globals, span: Span) -> Pred:
    """Translate a definition body into a logic term."""
    if isinstance(e, EConst):
        if isinstance(e.value, bool):
            return BoolLit(e.value)
        if isinstance(e.value, int):
            return IntLit(e.value)
        if e.value == ():
            return UApp("Unit", ())
        raise NonEmbeddableBody(
            f"operator {e.value!r} cannot appear bare in a reflected body", e.span
        )
    if isinstance(e, EVar):
        return Var(e.name)
    if isinstance(e, (ETApp, ERApp, EAnnot)):
        return embed(e.expr, g, span)
    if isinstance(e, ETAbs):
        return embed(e.body, g, span)
    if isinstance(e, ELet):
        body = embed(e.body, g, span)
        rhs = embed(e.rhs, g, span)
        return substPred(body, e.name, rhs)
    if isinstance(e, EIf):
        return Ite(
            embed(e.cond, g, span), embed(e.then, g, span), embed(e.els, g, span)
        )
    if isinstance(e, ESwitch):
        if not isinstance(e.scrut, EVar):
            raise NonEmbeddableBody("reflected match on a non-variable", e.span)
        y = e.scrut.name
        if not e.alts:
            raise NonEmbeddableBody("reflected match with no alternatives", e.span)

        def altPred(a: Alt) -> Pred:
            body = embed(a.body, g, span)
            repl = {
                z: UApp(f"{a.ctor}.{i}", (Var(y),))
                for i, z in enumerate(a.binders)
            }
            return substPreds(body, repl)

        out = altPred(e.alts[-1])
        for a in reversed(e.alts[:-1]):
            out = Ite(UApp(f"is-{a.ctor}", (Var(y),)), altPred(a), out)
        return out
    if isinstance(e, EApp):
        head, args = _spine(e)
        if isinstance(head, EConst) and isinstance(head.value, str):
            op = head.value
            if op == "!":
                if len(args) != 1:
                    raise NonEmbeddableBody("negation expects one argument", e.span)
                return Not(embed(args[0], g, span))
            if op in _EMBED_OPS and len(args) == 2:
                return BinOp(
                    _EMBED_OPS[op], embed(args[0], g, span), embed(args[1], g, span)
                )
            raise NonEmbeddableBody(f"operator {op!r} is not embeddable", e.span)
        if isinstance(head, EVar):
            name = head.name
            ok = (
                name in g.reflected
                or name in g.ctors
                or name in g.table.result_refinements
            )
            if not ok:
                raise NonEmbeddableBody(
                    f"call to {name!r} cannot be embedded: it is not a "
                    "reflected definition, constructor, or measure",
                    e.span,
                )
            return UApp(name, tuple(embed(a, g, span) for a in args))
        raise NonEmbeddableBody("cannot embed this application", e.span)
    raise NonEmbeddableBody(
        f"cannot embed a {type(e).__name__} into the logic", getattr(e, "span", span)
    )


# ---------------------------------------------------------------------------
# aligning a signature to the lambda that implements it


def _lambdaOf(e: Expr) -> ELam | None:
    while isinstance(e, (ETAbs, EAnnot)):
        e = e.body if isinstance(e, ETAbs) else e.expr
    return e if isinstance(e, ELam) else None


def _substFreeNames(t: Type, m: dict[str, str]) -> Type:
    """Rename free variable occurrences inside refinements, shadow-aware."""
    if not m:
        return t
    if isinstance(t, AllTy):
        return AllTy(t.tyvar, t.kind, _substFreeNames(t.body, m))
    if isinstance(t, AllRef):
        return AllRef(t.rvar, t.arg_sorts, _substFreeNames(t.body, m))
    if isinstance(t, Fun):
        inner = {k: v for k, v in m.items() if k != t.param}
        return Fun(t.param, _substFreeNames(t.dom, m), _substFreeNames(t.cod, inner))
    if isinstance(t, Base):
        base = t.base
        if isinstance(base, BTCon):
            rargs = []
            for conc in base.rargs:
                body = conc.body
                if not isinstance(body, Hole):
                    mm = {
                        k: Var(v) for k, v in m.items() if k not in conc.params
                    }
                    body = substPreds(body, mm)
                rargs.append(ConcRef(conc.params, body))
            base = BTCon(
                base.tycon,
                tuple(_substFreeNames(a, m) for a in base.targs),
                tuple(rargs),
            )
        ref = t.refinement
        if not isinstance(ref, Hole):
            mm = {k: Var(v) for k, v in m.items() if k != t.binder}
            ref = substPreds(ref, mm)
        return Base(base, t.binder, ref)
    raise AssertionError(t)


def _renameChainParams(t: Type, ren: dict[str, str]) -> Type:
    """Rename the outer parameter chain of a signature (and every mention)."""
    if not ren:
        return t
    if isinstance(t, AllTy):
        return AllTy(t.tyvar, t.kind, _renameChainParams(t.body, ren))
    if isinstance(t, AllRef):
        return AllRef(t.rvar, t.arg_sorts, _renameChainParams(t.body, ren))
    if isinstance(t, Fun):
        return Fun(
            ren.get(t.param, t.param),
            _substFreeNames(t.dom, ren),
            _renameChainParams(t.cod, ren),
        )
    return _substFreeNames(t, ren)


def _alignToLambda(
    t: Type, metric: tuple[Pred, ...], lam: ELam | None
) -> tuple[Type, tuple[Pred, ...]]:
    """Rename signature parameters to the checked lambda's binder names.

    A termination-limited signature is consulted at recursive call sites
    inside the body, so the metric facts it carries must speak about names
    bound there, not the names the declaration happened to use.
    """
    if lam is None:
        return t, metric
    cur = t
    while isinstance(cur, (AllTy, AllRef)):
        cur = cur.body
    ren: dict[str, str] = {}
    for p in lam.params:
        if not isinstance(cur, Fun):
            break
        if cur.param != p:
            ren[cur.param] = p
        cur = cur.cod
    if not ren:
        return t, metric
    mapping = {o: Var(n) for o, n in ren.items()}
    return (
        _renameChainParams(t, ren),
        tuple(substPreds(mp, mapping) for mp in metric),
    )


# ---------------------------------------------------------------------------
# job state and results


@dataclass
class JobResult:
    """Everything the Horn stage needs for one file."""

    cstr: Cstr
    table: SymbolTable
    kappa_sorts: dict[str, tuple]
    harvest_types: list[Type]
    adts: tuple[AdtDecl, ...]
    globals: Globals
    reflected_bodies: dict[str, Pred] = field(default_factory=dict)


class Checker:
    def __init__(self, *, termination: bool = True, reflection: bool = True):
        self.namer = Fresh()
        self.kappas = KappaSpace(self.namer)
        self.globals = emptyGlobals()
        self.termination = termination
        self.reflection = reflection
        self.harvest_types: list[Type] = []
        self.adts_needed = False

    # -- constructor facts under reflection

    def _ctorSpine(self, e: Expr) -> tuple[str, list[str]] | None:
        head, args = _spine(e)
        if not isinstance(head, EVar) or head.name not in self.globals.ctors:
            return None
        names = []
        for a in args:
            if not isinstance(a, EVar):
                return None
            names.append(a.name)
        return head.name, names

    def _ctorDecl(self, ctor: str) -> tuple[DataDecl, tuple[Type, ...]]:
        tycon, _ = self.globals.ctors[ctor]
        decl = self.globals.datatypes[tycon]
        for c in decl.ctors:
            if c.name == ctor:
                return decl, tuple(t for _, t in c.fields)
        raise AssertionError(ctor)

    def _ctorFactOk(self, env: Env, ctor: str, args: list[str]) -> bool:
        """A `v = C(args)` equality is only emitted when each argument's
        sort matches the declared field sort (type-variable fields collapse
        to the shared element sort, so they accept exactly variable sorts)."""
        if not self.reflection:
            return False
        decl, fields = self._ctorDecl(ctor)
        if len(fields) != len(args):
            return False
        for a, ft in zip(args, fields):
            at = env.lookup(a)
            if at is None:
                return False
            s_arg = sortOfType(at)
            s_field = sortOfType(ft)
            if isinstance(s_field, VarSort):
                if not isinstance(s_arg, VarSort):
                    return False
            elif s_arg != s_field:
                return False
        return True

    def _strengthenCtor(self, env: Env, t: Type, e: Expr) -> Type:
        """Conjoin `v = C(x..)` onto a constructor application's type."""
        if not isinstance(t, Base):
            return t
        spine = self._ctorSpine(e)
        if spine is None:
            return t
        ctor, args = spine
        if not self._ctorFactOk(env, ctor, args):
            return t
        self.adts_needed = True
        eq = pEq(Var(t.binder), UApp(ctor, tuple(Var(a) for a in args)))
        return Base(t.base, t.binder, pAnd(t.refinement, eq))

    # -- synthesis

    def synth(self, env: Env, e: Expr) -> tuple[Cstr, Type]:
        if isinstance(e, EVar):
            t = env.lookup(e.name)
            if t is None:
                entry = self.globals.ctors.get(e.name)
                if entry is None:
                    raise UnboundVariable(f"unbound variable {e.name!r}", e.span)
                return C_TRUE, entry[1]
            return C_TRUE, self_(e.name, t)
        if isinstance(e, EConst):
            return C_TRUE, constty(e.value, e.span)
        if isinstance(e, EApp):
            c1, tf = self.synth(env, e.fn)
            if not isinstance(tf, Fun):
                raise NotAFunction(
                    f"cannot apply a value of type {showType(tf)}", e.span
                )
            if not isinstance(e.arg, EVar):
                raise SpriteError(
                    "application argument is not a variable "
                    "(the expression was not normalized)",
                    e.span,
                )
            y = e.arg.name
            c2 = self.check(env, e.arg, tf.dom)
            cod = substTypeVar(tf.cod, tf.param, y, self.namer)
            return cAnd([c1, c2]), cod
        if isinstance(e, EAnnot):
            if not isinstance(e.ty, (Base, Fun, AllTy, AllRef)):
                raise SpriteError("annotation was not elaborated", e.span)
            wf(env, e.ty, Kind.STAR, e.span)
            t = fresh(env, e.ty, self.kappas)
            c = self.check(env, e.expr, t)
            return c, t
        if isinstance(e, ETApp):
            c, t = self.synth(env, e.expr)
            if not isinstance(t, AllTy):
                raise NotPolymorphic(
                    f"cannot instantiate a value of type {showType(t)}", e.span
                )
            if not isinstance(e.ty, (Base, Fun, AllTy, AllRef)):
                raise SpriteError("instantiation was not elaborated", e.span)
            wf(env, e.ty, t.kind, e.span)
            inst = fresh(env, e.ty, self.kappas)
            return c, tvSubst(t.body, t.tyvar, inst, e.span)
        if isinstance(e, ERApp):
            c, t = self.synth(env, e.expr)
            if not isinstance(t, AllRef):
                raise NotPolymorphic(
                    f"no refinement parameter to instantiate at type {showType(t)}",
                    e.span,
                )
            conc = self._freshConc(env, t.arg_sorts)
            return c, rinst(t.body, t.rvar, conc)
        if isinstance(e, ELet):
            c1, s = self.synth(env, e.rhs)
            s = self._strengthenCtor(env, s, e.rhs)
            env2 = env.bind(e.name, s)
            c2, t = self.synth(env2, e.body)
            guarded = All(e.name, sortOfType(s), refinementAt(s, e.name), c2)
            return cAnd([c1, guarded]), t
        raise MissingAnnotation(
            f"cannot synthesize a type for this {type(e).__name__}; "
            "add an annotation",
            getattr(e, "span", NO_SPAN),
        )

    def _freshConc(self, env: Env, arg_sorts: tuple) -> ConcRef:
        """A fresh Horn-variable refinement lambda over the given sorts."""
        params = tuple(self.namer.name("$r") for _ in arg_sorts)
        value = (params[-1], arg_sorts[-1])
        pre = list(zip(params[:-1], arg_sorts[:-1]))
        seen = {value[0]}
        args = [value]
        for name, s in pre + _envKappaParams(env):
            if name not in seen:
                seen.add(name)
                args.append((name, s))
        k = self.kappas.new(tuple(s for _, s in args))
        return ConcRef(params, KApp(k, tuple(n for n, _ in args)))

    # -- checking

    def check(self, env: Env, e: Expr, t: Type) -> Cstr:
        span = getattr(e, "span", NO_SPAN)
        if isinstance(e, ETAbs):
            cur: Type = t
            env2 = env
            for a, k in e.tyvars:
                if not isinstance(cur, AllTy):
                    raise SpriteError(
                        f"type abstraction against non-polymorphic {showType(t)}",
                        span,
                    )
                # align the abstraction's variable with the signature's
                if cur.tyvar != a:
                    cur = AllTy(a, cur.kind, replaceTyvar(cur.body, cur.tyvar, a))
                env2 = env2.bindTyvar(a, cur.kind)
                cur = cur.body
            return self.check(env2, e.body, cur)
        if isinstance(t, AllTy):
            env2 = env.bindTyvar(t.tyvar, t.kind)
            return self.check(env2, e, t.body)
        if isinstance(t, AllRef):
            return self._checkRAbs(env, e, t, span)
        if isinstance(e, ELam):
            return self._checkLam(env, e, t, span)
        if isinstance(e, ELet):
            c1, s = self.synth(env, e.rhs)
            s = self._strengthenCtor(env, s, e.rhs)
            env2 = env.bind(e.name, s)
            c2 = self.check(env2, e.body, t)
            guarded = All(e.name, sortOfType(s), refinementAt(s, e.name), c2)
            return cAnd([c1, guarded])
        if isinstance(e, ELetRec):
            return self._checkLetRec(env, e, t, span)
        if isinstance(e, EReflect):
            return self._checkReflect(env, e, t, span)
        if isinstance(e, EIf):
            if not isinstance(e.cond, EVar):
                raise SpriteError("if condition is not a variable", span)
            x = e.cond.name
            v = self.namer.value()
            c_then = All(v, BOOL, Var(x), self.check(env, e.then, t))
            c_else = All(v, BOOL, Not(Var(x)), self.check(env, e.els, t))
            return cAnd([c_then, c_else])
        if isinstance(e, ESwitch):
            if not isinstance(e.scrut, EVar):
                raise SpriteError("switch scrutinee is not a variable", span)
            y = e.scrut.name
            return cAnd([self.checkAlt(env, y, a, t) for a in e.alts])
        # fall back to synthesis plus subtyping
        c, s = self.synth(env, e)
        return cAnd([c, sub(env, s, t, span, self.namer)])

    def _checkLam(self, env: Env, e: ELam, t: Type, span: Span) -> Cstr:
        env2 = env
        cur: Type = t
        hyps: list[tuple[str, object, Pred]] = []
        for p in e.params:
            if not isinstance(cur, Fun):
                raise SpriteError(
                    f"lambda has more parameters than the type {showType(t)}",
                    span,
                )
            dom = cur.dom
            env2 = env2.bind(p, dom)
            hyps.append((p, sortOfType(dom), refinementAt(dom, p)))
            cur = substTypeVar(cur.cod, cur.param, p, self.namer)
        inner = self.check(env2, e.body, cur)
        for p, s, h in reversed(hyps):
            inner = All(p, s, h, inner)
        return inner

    def _checkLetRec(self, env: Env, e: ELetRec, t: Type, span: Span) -> Cstr:
        if e.annot is None or not isinstance(e.annot, (Base, Fun, AllTy, AllRef)):
            raise MissingAnnotation(
                f"recursive binding {e.name!r} was not annotated", span
            )
        wf(env, e.annot, Kind.STAR, span)
        if e.metric is not None and self.termination:
            tf, c1 = self.chkTerm(env, e.name, e.rhs, e.annot, e.metric, span)
        elif self.termination:
            raise MissingAnnotation(
                f"recursive binding {e.name!r} needs a termination metric",
                span,
            )
        else:
            tf = fresh(env, e.annot, self.kappas)
            env_f = env.bind(e.name, tf)
            c1 = self.check(env_f, e.rhs, tf)
        env2 = env.bind(e.name, tf)
        c2 = self.check(env2, e.body, t)
        return cAnd([c1, c2])

    def _checkReflect(self, env: Env, e: EReflect, t: Type, span: Span) -> Cstr:
        env2, c1 = self.processReflect(env, e.name, e.rhs, e.annot, e.metric, span)
        c2 = self.check(env2, e.body, t)
        return cAnd([c1, c2])

    def chkTerm(
        self,
        env: Env,
        f: str,
        e: Expr,
        t: Type,
        metric: tuple[Pred, ...],
        span: Span,
    ) -> tuple[Type, Cstr]:
        """Check a recursive binding: inner occurrences only apply at
        strictly smaller metric values."""
        tf = fresh(env, t, self.kappas)
        # the limited signature is consulted at call sites inside the body,
        # where only the lambda's binder names are in scope
        tf, metric = _alignToLambda(tf, metric, _lambdaOf(e))
        tlim = limit(env, metric, tf, span, self.namer)
        env_f = env.bind(f, tlim)
        c = self.check(env_f, e, tf)
        return tf, c

    def _checkRAbs(self, env: Env, e: Expr, t: AllRef, span: Span) -> Cstr:
        """Checking against a refinement-quantified type: replace the
        parameter by an opaque predicate symbol."""
        uf = self.namer.name("$uf_")
        self.globals.table.declare(uf, FuncSort(t.arg_sorts, BOOL), span)
        params = tuple(self.namer.name("$q") for _ in t.arg_sorts)
        conc = ConcRef(params, UApp(uf, tuple(Var(p) for p in params)))
        opened = rinst(t.body, t.rvar, conc)
        env2 = env.bindRvar(t.rvar, t.arg_sorts)
        # signatures now mention the opaque symbol; make its shapes
        # available to qualifier harvesting
        self.harvest_types.append(opened)
        return self.check(env2, e, opened)

    def checkAlt(self, env: Env, y: str, alt: Alt, t: Type) -> Cstr:
        span = alt.span
        env2, fields, res = unapply(
            env, y, tuple(alt.binders), alt.ctor, span, self.namer
        )
        fact = substPred(res.refinement, res.binder, Var(y))
        if self._ctorFactOk(env2, alt.ctor, list(alt.binders)):
            self.adts_needed = True
            fact = pAnd(
                fact,
                pEq(Var(y), UApp(alt.ctor, tuple(Var(z) for z in alt.binders))),
            )
        inner = self.check(env2, alt.body, t)
        guard = All(self.namer.value(), BOOL, fact, inner)
        for z, zt in reversed(fields):
            guard = All(z, sortOfType(zt), refinementAt(zt, z), guard)
        return guard

    # -- top-level reflection

    def processReflect(
        self,
        env: Env,
        name: str,
        rhs: Expr,
        annot: Type | None,
        metric: tuple[Pred, ...] | None,
        span: Span,
    ) -> tuple[Env, Cstr]:
        if not self.reflection:
            raise SpriteError(
                f"cannot reflect {name!r}: reflection is disabled", span
            )
        if annot is None or not isinstance(annot, (Base, Fun, AllTy, AllRef)):
            raise MissingAnnotation(
                f"reflected definition {name!r} needs a signature", span
            )
        wf(env, annot, Kind.STAR, span)
        lam = rhs
        while isinstance(lam, (ETAbs, EAnnot)):
            lam = lam.body if isinstance(lam, ETAbs) else lam.expr
        if not isinstance(lam, ELam):
            raise NonEmbeddableBody(
                f"reflected definition {name!r} must be a lambda", span
            )
        # provisional entry so the body may call itself
        self.globals.reflected.setdefault(name, TRUE)
        body_pred = embed(lam.body, self.globals, span)
        strong, fsort = reflectType(env, name, annot, body_pred, lam.params, span)
        self.globals.table.declare(name, fsort, span)
        self.globals.reflected[name] = body_pred
        if metric is not None and self.termination:
            strong_l, metric_l = _alignToLambda(strong, metric, lam)
            env_f = env.bind(name, limit(env, metric_l, strong_l, span, self.namer))
        elif self.termination:
            raise MissingAnnotation(
                f"reflected definition {name!r} needs a termination metric", span
            )
        else:
            env_f = env.bind(name, strong)
        c = self.check(env_f, rhs, annot)
        self.harvest_types.append(strong)
        return env.bind(name, strong), c


# ---------------------------------------------------------------------------
# datatype declarations for the solver


def adtDecls(g: Globals, include_unit: bool) -> tuple[AdtDecl, ...]:
    decls = []
    for tycon, decl in g.datatypes.items():
        if tycon == UNIT_TYCON and not include_unit:
            continue
        ctors = []
        for c in decl.ctors:
            fields = tuple(
                AdtField(f"{c.name}.{i}", sortOfType(ft))
                for i, (_, ft) in enumerate(c.fields)
            )
            ctors.append(AdtCtor(c.name, fields))
        decls.append(AdtDecl(tycon, tuple(ctors)))
    return tuple(decls)


def _declareSelectors(g: Globals) -> None:
    """Type the selector and tester symbols so sort checking can see them;
    the solver gets them from the datatype declaration itself."""
    for tycon, decl in g.datatypes.items():
        d = DataSort(tycon)
        for c in decl.ctors:
            for i, (_, ft) in enumerate(c.fields):
                sel = f"{c.name}.{i}"
                if g.table.lookup(sel) is None:
                    g.table.declare(sel, FuncSort((d,), sortOfType(ft)))
                    g.table.adt_provided.add(sel)
            tester = f"is-{c.name}"
            if g.table.lookup(tester) is None:
                g.table.declare(tester, FuncSort((d,), BOOL))
                g.table.adt_provided.add(tester)
            # constructor applications appear as uninterpreted calls
            if g.table.lookup(c.name) is None:
                arg_sorts = tuple(sortOfType(ft) for _, ft in c.fields)
                g.table.declare(c.name, FuncSort(arg_sorts, d))
                g.table.adt_provided.add(c.name)


# ---------------------------------------------------------------------------
# whole-program driver


def checkProgram(
    prog: Program, *, termination: bool = True, reflection: bool = True
) -> JobResult:
    ck = Checker(termination=termination, reflection=reflection)
    g = ck.globals
    env = Env(g, ())
    cstrs: list[Cstr] = []

    let_names = {it.name for it in prog.items if isinstance(it, LetItem)}
    pending: dict[str, ValItem] = {}

    for item in prog.items:
        if isinstance(item, DataItem):
            registerData(g, item.decl)
            for ctor in item.decl.ctors:
                _, sig = g.ctors[ctor.name]
                ck.harvest_types.append(sig)
            continue
        if isinstance(item, MeasureItem):
            g.table.declare(item.name, item.fsort, item.span)
            g.table.result_refinements[item.name] = (
                item.binder,
                item.argnames,
                item.result,
            )
            continue
        if isinstance(item, AliasItem):
            continue
        if isinstance(item, ValItem):
            ck.harvest_types.append(item.ty)
            if item.name in let_names:
                pending[item.name] = item
            else:
                # a signature with no definition is taken as given
                wf(env, item.ty, Kind.STAR, item.span)
                env = env.bind(item.name, fresh(env, item.ty, ck.kappas))
            continue
        if isinstance(item, LetItem):
            val = pending.pop(item.name, None)
            if item.reflected:
                if val is None:
                    raise MissingAnnotation(
                        f"reflected definition {item.name!r} needs a signature",
                        item.span,
                    )
                env, c = ck.processReflect(
                    env, item.name, item.rhs, val.ty, val.metric, item.span
                )
                cstrs.append(c)
                continue
            if val is None:
                c, t = ck.synth(env, item.rhs)
                cstrs.append(c)
                env = env.bind(item.name, t)
                continue
            wf(env, val.ty, Kind.STAR, item.span)
            if item.rec:
                if val.metric is not None and termination:
                    tf, c = ck.chkTerm(
                        env, item.name, item.rhs, val.ty, val.metric, item.span
                    )
                elif termination:
                    raise MissingAnnotation(
                        f"recursive binding {item.name!r} needs a termination "
                        "metric",
                        item.span,
                    )
                else:
                    tf = fresh(env, val.ty, ck.kappas)
                    c = ck.check(env.bind(item.name, tf), item.rhs, tf)
            else:
                tf = fresh(env, val.ty, ck.kappas)
                c = ck.check(env, item.rhs, tf)
            cstrs.append(c)
            env = env.bind(item.name, tf)
            continue
        raise AssertionError(item)

    use_adts = reflection and (len(g.datatypes) > 1 or ck.adts_needed or g.reflected)
    include_unit = any(
        "Unit" in _uappNames(p) for p in g.reflected.values()
    )
    adts = adtDecls(g, include_unit) if use_adts else ()
    if adts:
        _declareSelectors(g)
    return JobResult(
        cstr=cAnd(cstrs),
        table=g.table,
        kappa_sorts=dict(ck.kappas.sorts),
        harvest_types=list(ck.harvest_types),
        adts=adts,
        globals=g,
        reflected_bodies=dict(g.reflected),
    )


def _uappNames(p: Pred) -> set[str]:
    out: set[str] = set()

    def go(p: Pred) -> None:
        if isinstance(p, UApp):
            out.add(p.fn)
            for a in p.args:
                go(a)
        elif isinstance(p, BinOp):
            go(p.lhs)
            go(p.rhs)
        elif isinstance(p, Not):
            go(p.arg)
        elif isinstance(p, Ite):
            go(p.cond)
            go(p.then)
            go(p.els)

    go(p)
    return out
