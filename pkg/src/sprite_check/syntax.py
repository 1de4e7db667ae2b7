"""Surface language: lexer, parser, ANF normalization, and elaboration.

The pipeline for a file is parse -> anf -> elaborate. After ANF every
application argument and every branch scrutinee is a variable; after
elaboration every use of a polymorphic name carries an explicit type
application whose refinements are holes, and every use of a
refinement-quantified name carries an instantiation marker.
"""

from __future__ import annotations

from dataclasses import dataclass

from .logic import (
    BinOp,
    BoolLit,
    FuncSort,
    IntLit,
    KApp,
    NO_SPAN,
    Not,
    Pred,
    Span,
    SpriteError,
    UApp,
    Var,
    pAnd,
    substPred,
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
    DataCtor,
    DataDecl,
    Fun,
    HOLE,
    Hole,
    Kind,
    Type,
    UNIT_TYCON,
    showType,
    sortOfType,
    tUnit,
)


class ParseError(SpriteError):
    pass


class UnificationFailure(SpriteError):
    pass


class OccursCheck(SpriteError):
    pass


# ---------------------------------------------------------------------------
# expressions


@dataclass
class EConst:
    """Literal or primitive operator; the value is an int, a bool, the
    unit value (), or the operator's name."""

    value: object
    span: Span = NO_SPAN


@dataclass
class EVar:
    name: str
    span: Span = NO_SPAN


@dataclass
class ELam:
    params: list[str]
    body: "Expr"
    span: Span = NO_SPAN


@dataclass
class EApp:
    fn: "Expr"
    arg: "Expr"   # a variable after ANF
    span: Span = NO_SPAN


@dataclass
class ELet:
    name: str
    rhs: "Expr"
    body: "Expr"
    span: Span = NO_SPAN


@dataclass
class ELetRec:
    name: str
    rhs: "Expr"
    annot: Type | None
    metric: tuple[Pred, ...] | None
    body: "Expr"
    span: Span = NO_SPAN


@dataclass
class EReflect:
    """A definition whose body is embedded into the refinement logic."""

    name: str
    rhs: "Expr"
    annot: Type | None
    metric: tuple[Pred, ...] | None
    body: "Expr"
    span: Span = NO_SPAN


@dataclass
class EIf:
    cond: "Expr"  # a variable after ANF
    then: "Expr"
    els: "Expr"
    span: Span = NO_SPAN


@dataclass
class Alt:
    ctor: str
    binders: list[str]
    body: "Expr"
    span: Span = NO_SPAN


@dataclass
class ESwitch:
    scrut: "Expr"  # a variable after ANF
    alts: list[Alt]
    span: Span = NO_SPAN


@dataclass
class EAnnot:
    expr: "Expr"
    ty: object  # Type, or an elaborator placeholder before zonking
    span: Span = NO_SPAN


@dataclass
class ETAbs:
    tyvars: list[tuple[str, Kind]]
    body: "Expr"
    span: Span = NO_SPAN


@dataclass
class ETApp:
    expr: "Expr"
    ty: object  # bare Type (all refinements holes), or a placeholder
    span: Span = NO_SPAN


@dataclass
class ERApp:
    """Implicit refinement-parameter instantiation marker."""

    expr: "Expr"
    span: Span = NO_SPAN


Expr = (
    EConst | EVar | ELam | EApp | ELet | ELetRec | EReflect | EIf | ESwitch
    | EAnnot | ETAbs | ETApp | ERApp
)


# ---------------------------------------------------------------------------
# top-level items


@dataclass
class ValItem:
    name: str
    ty: Type
    metric: tuple[Pred, ...] | None
    span: Span


@dataclass
class LetItem:
    name: str
    rhs: Expr
    rec: bool
    reflected: bool
    span: Span


@dataclass
class DataItem:
    decl: DataDecl
    span: Span


@dataclass
class MeasureItem:
    name: str
    fsort: FuncSort
    argnames: tuple[str, ...]
    binder: str
    result: Pred
    span: Span


@dataclass
class AliasItem:
    name: str
    span: Span


Item = ValItem | LetItem | DataItem | MeasureItem | AliasItem


@dataclass
class Program:
    items: list[Item]
    directives: list[str]
    path: str


# ---------------------------------------------------------------------------
# lexer


_KEYWORDS = {
    "val", "let", "rec", "def", "type", "measure", "if", "else", "switch",
    "forall", "rforall", "true", "false",
}

_OPS = [
    "===", "==", "=>", "!=", "<=", ">=", "&&", "||",
    "=", "<", ">", "!", "+", "-", "*", "/", "?", "|",
    "(", ")", "[", "]", "{", "}", ",", ";", ":", ".",
]


@dataclass(frozen=True)
class Tok:
    kind: str   # int | ident | tyvar | kw | op | eof
    value: str
    line: int
    col: int


def _lex(text: str, path: str) -> list[Tok]:
    toks: list[Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Tok("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_'"):
                j += 1
            word = text[i:j]
            toks.append(Tok("kw" if word in _KEYWORDS else "ident", word, line, col))
            col += j - i
            i = j
            continue
        if c == "'":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            if j == i + 1:
                raise ParseError("dangling quote", Span(path, line, col))
            toks.append(Tok("tyvar", text[i + 1 : j], line, col))
            col += j - i
            i = j
            continue
        for op in _OPS:
            if text.startswith(op, i):
                toks.append(Tok("op", op, line, col))
                col += len(op)
                i += len(op)
                break
        else:
            raise ParseError(f"unexpected character {c!r}", Span(path, line, col))
    toks.append(Tok("eof", "", line, col))
    return toks


def _directives(text: str) -> list[str]:
    out: list[str] = []
    for raw in text.splitlines():
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("// sprite:"):
            out.extend(stripped[len("// sprite:"):].split())
            continue
        if stripped.startswith("//"):
            continue
        break
    return out


# ---------------------------------------------------------------------------
# parse context (shared across prelude + file so aliases carry over)


class ParseContext:
    def __init__(self) -> None:
        self.aliases: dict[str, tuple[list[str], Type]] = {}
        self.datatypes: dict[str, DataDecl] = {}
        self.anon = 0

    def freshName(self, prefix: str) -> str:
        n = self.anon
        self.anon += 1
        return f"{prefix}{n}"


_CMP_TOKENS = {"==": "=", "=": "=", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


class Parser:
    def __init__(self, text: str, path: str, ctx: ParseContext | None = None):
        self.toks = _lex(text, path)
        self.pos = 0
        self.path = path
        self.ctx = ctx if ctx is not None else ParseContext()
        self.directives = _directives(text)

    # -- token plumbing

    def peek(self, ahead: int = 0) -> Tok:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def span(self, tok: Tok | None = None) -> Span:
        t = tok if tok is not None else self.peek()
        return Span(self.path, t.line, t.col)

    def at(self, kind: str, value: str | None = None) -> bool:
        t = self.peek()
        return t.kind == kind and (value is None or t.value == value)

    def atOp(self, value: str) -> bool:
        return self.at("op", value)

    def expect(self, kind: str, value: str | None = None) -> Tok:
        t = self.peek()
        if t.kind != kind or (value is not None and t.value != value):
            want = value if value is not None else kind
            got = t.value if t.value else t.kind
            raise ParseError(f"expected {want!r}, found {got!r}", self.span(t))
        return self.next()

    def expectOp(self, value: str) -> Tok:
        return self.expect("op", value)

    # -- program

    def program(self) -> Program:
        items: list[Item] = []
        while not self.at("eof"):
            items.append(self.item())
        return Program(items, self.directives, self.path)

    def item(self) -> Item:
        t = self.peek()
        if t.kind == "kw" and t.value == "val":
            return self.valItem()
        if t.kind == "kw" and t.value in ("let", "def"):
            return self.letItem()
        if t.kind == "kw" and t.value == "type":
            return self.typeItem()
        if t.kind == "kw" and t.value == "measure":
            return self.measureItem()
        raise ParseError(f"expected a declaration, found {t.value!r}", self.span(t))

    def bindingName(self) -> str:
        if self.at("ident"):
            return self.next().value
        if self.atOp("("):
            # operator binding: val (===) : ... / let (?) = ...
            start = self.next()
            t = self.next()
            if t.kind != "op" or t.value in ("(", ")"):
                raise ParseError("expected an operator name", self.span(start))
            self.expectOp(")")
            return t.value
        raise ParseError("expected a name", self.span())

    def valItem(self) -> ValItem:
        t0 = self.expect("kw", "val")
        name = self.bindingName()
        self.expectOp(":")
        ty = self.parseType(set(), set())
        metric: tuple[Pred, ...] | None = None
        if self.atOp("/"):
            self.next()
            parts = [self.parseMetricExpr()]
            while self.atOp(","):
                self.next()
                parts.append(self.parseMetricExpr())
            metric = tuple(parts)
        self.expectOp(";")
        return ValItem(name, ty, metric, self.span(t0))

    def letItem(self) -> LetItem:
        t0 = self.next()
        reflected = t0.value == "def"
        rec = reflected
        if not reflected and self.at("kw", "rec"):
            self.next()
            rec = True
        name = self.bindingName()
        self.expectOp("=")
        rhs = self.expr()
        self.expectOp(";")
        return LetItem(name, rhs, rec, reflected, self.span(t0))

    def measureItem(self) -> MeasureItem:
        t0 = self.expect("kw", "measure")
        name = self.expect("ident").value
        self.expectOp(":")
        ty = self.parseType(set(), set())
        args: list[tuple[str, Type]] = []
        cur = ty
        while isinstance(cur, Fun):
            args.append((cur.param, cur.dom))
            cur = cur.cod
        if not args or not isinstance(cur, Base):
            raise ParseError(
                f"measure {name} needs a first-order signature", self.span(t0)
            )
        fsort = FuncSort(
            tuple(sortOfType(d) for _, d in args), sortOfType(cur)
        )
        result = cur.refinement if not isinstance(cur.refinement, Hole) else BoolLit(True)
        self.expectOp(";")
        return MeasureItem(
            name,
            fsort,
            tuple(n for n, _ in args),
            cur.binder,
            result,
            self.span(t0),
        )

    def typeItem(self) -> Item:
        t0 = self.expect("kw", "type")
        name = self.expect("ident").value
        tyvars: list[tuple[str, Kind]] = []
        rvars: list[tuple[str, tuple]] = []
        if self.atOp("(") and self.peek(1).kind == "tyvar":
            self.next()
            tyvars.append(self.tyvarBinder())
            while self.atOp(","):
                self.next()
                tyvars.append(self.tyvarBinder())
            self.expectOp(")")
        while self.atOp("(") and self.peek(1).kind == "ident" and self.peek(2).value == ":":
            self.next()
            rname = self.expect("ident").value
            self.expectOp(":")
            rty = self.parseType({a for a, _ in tyvars}, set())
            sorts = []
            cur = rty
            while isinstance(cur, Fun):
                sorts.append(sortOfType(cur.dom))
                cur = cur.cod
            if not (isinstance(cur, Base) and isinstance(cur.base, BBool)):
                raise ParseError(
                    f"refinement parameter {rname} must end in bool", self.span(t0)
                )
            rvars.append((rname, tuple(sorts)))
            self.expectOp(")")
        self.expectOp("=")
        tyvar_names = {a for a, _ in tyvars}
        rvar_names = {r for r, _ in rvars}
        if self.atOp("|") or (self.at("ident") and self.peek().value[0].isupper()):
            ctors = self.ctorList(tyvar_names, rvar_names)
            decl = DataDecl(name, tuple(tyvars), tuple(rvars), tuple(ctors), self.span(t0))
            self.ctx.datatypes[name] = decl
            if self.atOp(";"):
                self.next()
            return DataItem(decl, self.span(t0))
        if rvars:
            raise ParseError(
                "type aliases cannot declare refinement parameters", self.span(t0)
            )
        body = self.parseType(tyvar_names, set())
        self.ctx.aliases[name] = ([a for a, _ in tyvars], body)
        if self.atOp(";"):
            self.next()
        return AliasItem(name, self.span(t0))

    def tyvarBinder(self) -> tuple[str, Kind]:
        a = self.expect("tyvar").value
        kind = Kind.BASE
        if self.atOp(":"):
            self.next()
            kind = self.kind()
        return a, kind

    def kind(self) -> Kind:
        t = self.expect("ident")
        if t.value == "Base":
            return Kind.BASE
        if t.value == "Star":
            return Kind.STAR
        raise ParseError(f"unknown kind {t.value!r}", self.span(t))

    def ctorList(self, tyvars: set[str], rvars: set[str]) -> list[DataCtor]:
        ctors = []
        if self.atOp("|"):
            self.next()
        ctors.append(self.ctor(tyvars, rvars))
        while self.atOp("|"):
            self.next()
            ctors.append(self.ctor(tyvars, rvars))
        return ctors

    def ctor(self, tyvars: set[str], rvars: set[str]) -> DataCtor:
        t0 = self.expect("ident")
        name = t0.value
        fields: list[tuple[str, Type]] = []
        if self.atOp("("):
            self.next()
            while True:
                fname = self.expect("ident").value
                self.expectOp(":")
                fty = self.parseType(tyvars, rvars)
                fields.append((fname, fty))
                if self.atOp(","):
                    self.next()
                    continue
                break
            self.expectOp(")")
        binder, refinement = "v", BoolLit(True)
        if self.atOp("=>"):
            self.next()
            self.expectOp("[")
            binder = self.expect("ident").value
            self.expectOp("|")
            refinement = self.pred(rvars)
            self.expectOp("]")
        return DataCtor(name, tuple(fields), binder, refinement)

    # -- types

    def parseType(self, tyvars: set[str], rvars: set[str]) -> Type:
        t = self.peek()
        if t.kind == "kw" and t.value == "forall":
            self.next()
            a, kind = self.tyvarBinder()
            self.expectOp(".")
            return AllTy(a, kind, self.parseType(tyvars | {a}, rvars))
        if t.kind == "kw" and t.value == "rforall":
            self.next()
            rname = self.expect("ident").value
            self.expectOp(":")
            self.expectOp("(")
            sorts = []
            if not self.atOp(")"):
                sorts.append(sortOfType(self.parseType(tyvars, rvars)))
                while self.atOp(","):
                    self.next()
                    sorts.append(sortOfType(self.parseType(tyvars, rvars)))
            self.expectOp(")")
            self.expectOp("=>")
            ret = self.expect("ident")
            if ret.value != "bool":
                raise ParseError("refinement parameters must return bool", self.span(ret))
            self.expectOp(".")
            return AllRef(rname, tuple(sorts), self.parseType(tyvars, rvars | {rname}))
        return self.funType(tyvars, rvars)

    def funType(self, tyvars: set[str], rvars: set[str]) -> Type:
        # dependent parameter?  ident ':' starts one
        if self.at("ident") and self.peek(1).kind == "op" and self.peek(1).value == ":":
            pname = self.next().value
            self.next()
            dom = self.argType(tyvars, rvars)
            self.expectOp("=>")
            return Fun(pname, dom, self.funType(tyvars, rvars))
        dom = self.argType(tyvars, rvars)
        if self.atOp("=>"):
            self.next()
            return Fun(self.ctx.freshName("$a"), dom, self.funType(tyvars, rvars))
        return dom

    def argType(self, tyvars: set[str], rvars: set[str]) -> Type:
        t = self.peek()
        if self.atOp("("):
            if self.peek(1).kind == "op" and self.peek(1).value == ")":
                self.next()
                self.next()
                return self.refineBase(tUnit(), rvars)
            self.next()
            inner = self.parseType(tyvars, rvars)
            self.expectOp(")")
            return inner
        if self.atOp("["):
            binder, ref = self.refinement(rvars)
            if isinstance(ref, Hole):
                raise ParseError("a bare hole is not a type", self.span(t))
            if binder is not None:
                raise ParseError(
                    "a proposition type cannot name its value", self.span(t)
                )
            return Base(BTCon(UNIT_TYCON), self.ctx.freshName("$p"), ref)
        if t.kind == "tyvar":
            self.next()
            return self.refineBase(Base(BTyVar(t.value), "v", BoolLit(True)), rvars)
        if t.kind == "ident":
            name = self.next().value
            if name == "int":
                return self.refineBase(Base(BInt(), "v", BoolLit(True)), rvars)
            if name == "bool":
                return self.refineBase(Base(BBool(), "v", BoolLit(True)), rvars)
            if name in self.ctx.aliases:
                return self.aliasUse(name, t, tyvars, rvars)
            targs: list[Type] = []
            rargs: list[ConcRef] = []
            decl = self.ctx.datatypes.get(name)
            # an unknown constructor parses leniently (measures may precede
            # the type declaration); well-formedness checking rejects real
            # unknowns later
            n_ty = len(decl.tyvars) if decl else None
            n_rv = len(decl.rvars) if decl else 0
            if (n_ty is None or n_ty > 0) and self.atOp("("):
                self.next()
                targs.append(self.parseType(tyvars, rvars))
                while self.atOp(","):
                    self.next()
                    targs.append(self.parseType(tyvars, rvars))
                self.expectOp(")")
            if n_ty is not None and len(targs) != n_ty:
                raise ParseError(
                    f"{name} expects {n_ty} type argument(s), got {len(targs)}",
                    self.span(t),
                )
            for i in range(n_rv):
                if self.atOp("(" ):
                    rargs.append(self.concRef(decl, i, rvars))
                else:
                    arity = len(decl.rvars[i][1])
                    params = tuple(self.ctx.freshName("$h") for _ in range(arity))
                    rargs.append(ConcRef(params, HOLE))
            return self.refineBase(
                Base(BTCon(name, tuple(targs), tuple(rargs)), "v", BoolLit(True)),
                rvars,
            )
        raise ParseError(f"expected a type, found {t.value!r}", self.span(t))

    def concRef(self, decl: DataDecl, index: int, rvars: set[str]) -> ConcRef:
        self.expectOp("(")
        self.expectOp("(")
        params = [self.expect("ident").value]
        while self.atOp(","):
            self.next()
            params.append(self.expect("ident").value)
        self.expectOp(")")
        self.expectOp("=>")
        body = self.pred(rvars)
        self.expectOp(")")
        want = len(decl.rvars[index][1])
        if len(params) != want:
            raise ParseError(
                f"refinement argument takes {want} parameter(s), got {len(params)}",
                self.span(),
            )
        return ConcRef(tuple(params), body)

    def aliasUse(self, name: str, t0: Tok, tyvars: set[str], rvars: set[str]) -> Type:
        formals, body = self.ctx.aliases[name]
        actuals: list[Type] = []
        if formals and self.atOp("("):
            self.next()
            actuals.append(self.parseType(tyvars, rvars))
            while self.atOp(","):
                self.next()
                actuals.append(self.parseType(tyvars, rvars))
            self.expectOp(")")
        if len(actuals) != len(formals):
            raise ParseError(
                f"{name} expects {len(formals)} type argument(s), got {len(actuals)}",
                self.span(t0),
            )
        from .types import tvSubst

        expanded = body
        for a, inst in zip(formals, actuals):
            expanded = tvSubst(expanded, a, inst, self.span(t0))
        if not self.atOp("["):
            return expanded
        binder, ref = self.refinement(rvars)
        if not isinstance(expanded, Base):
            raise ParseError(f"{name} is not a base type and cannot be refined", self.span(t0))
        if isinstance(ref, Hole):
            return Base(expanded.base, expanded.binder, HOLE)
        if binder is None:
            raise ParseError("alias refinement needs a value binder", self.span(t0))
        prev = expanded.refinement
        merged = pAnd(substPred(prev, expanded.binder, Var(binder)), ref)
        return Base(expanded.base, binder, merged)

    def refineBase(self, base: Base, rvars: set[str]) -> Base:
        if not self.atOp("["):
            return base
        binder, ref = self.refinement(rvars)
        if isinstance(ref, Hole):
            return Base(base.base, base.binder, HOLE)
        if binder is None:
            raise ParseError("refinement needs a value binder", self.span())
        return Base(base.base, binder, ref)

    def refinement(self, rvars: set[str]) -> tuple[str | None, Pred | Hole]:
        """Parse `[?]`, `[v|p]`, or the proposition form `[p]`."""
        self.expectOp("[")
        if self.atOp("?"):
            self.next()
            self.expectOp("]")
            return None, HOLE
        if self.at("ident") and self.peek(1).kind == "op" and self.peek(1).value == "|":
            binder = self.next().value
            self.next()
            p = self.pred(rvars)
            self.expectOp("]")
            return binder, p
        p = self.pred(rvars)
        self.expectOp("]")
        return None, p

    # -- predicates (refinement language)

    def pred(self, rvars: set[str]) -> Pred:
        return self.predOr(rvars)

    def predOr(self, rvars: set[str]) -> Pred:
        p = self.predAnd(rvars)
        while self.atOp("||"):
            self.next()
            p = BinOp("||", p, self.predAnd(rvars))
        return p

    def predAnd(self, rvars: set[str]) -> Pred:
        p = self.predCmp(rvars)
        while self.atOp("&&"):
            self.next()
            p = BinOp("&&", p, self.predCmp(rvars))
        return p

    def predCmp(self, rvars: set[str]) -> Pred:
        p = self.predAdd(rvars)
        t = self.peek()
        if t.kind == "op" and t.value in _CMP_TOKENS:
            self.next()
            return BinOp(_CMP_TOKENS[t.value], p, self.predAdd(rvars))
        return p

    def predAdd(self, rvars: set[str]) -> Pred:
        p = self.predMul(rvars)
        while self.peek().kind == "op" and self.peek().value in ("+", "-"):
            op = self.next().value
            p = BinOp(op, p, self.predMul(rvars))
        return p

    def predMul(self, rvars: set[str]) -> Pred:
        p = self.predUnary(rvars)
        while self.atOp("*"):
            self.next()
            p = BinOp("*", p, self.predUnary(rvars))
        return p

    def predUnary(self, rvars: set[str]) -> Pred:
        if self.atOp("!"):
            self.next()
            return Not(self.predUnary(rvars))
        if self.atOp("-"):
            t = self.next()
            if self.at("int"):
                return IntLit(-int(self.next().value))
            return BinOp("-", IntLit(0), self.predUnary(rvars))
        return self.predAtom(rvars)

    def predAtom(self, rvars: set[str]) -> Pred:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return IntLit(int(t.value))
        if t.kind == "kw" and t.value in ("true", "false"):
            self.next()
            return BoolLit(t.value == "true")
        if self.atOp("("):
            self.next()
            p = self.pred(rvars)
            self.expectOp(")")
            return p
        if t.kind == "ident":
            name = self.next().value
            if self.atOp("("):
                self.next()
                args: list[Pred] = []
                if not self.atOp(")"):
                    args.append(self.pred(rvars))
                    while self.atOp(","):
                        self.next()
                        args.append(self.pred(rvars))
                self.expectOp(")")
                if name in rvars:
                    names = []
                    for a in args:
                        if not isinstance(a, Var):
                            raise ParseError(
                                f"refinement parameter {name} must be applied to "
                                "plain variables",
                                self.span(t),
                            )
                        names.append(a.name)
                    return KApp(name, tuple(names))
                return UApp(name, tuple(args))
            return Var(name)
        raise ParseError(f"expected a predicate, found {t.value!r}", self.span(t))

    def parseMetricExpr(self) -> Pred:
        return self.predAdd(set())

    # -- expressions

    def expr(self) -> Expr:
        return self.proofExpr()

    def proofExpr(self) -> Expr:
        e = self.orExpr()
        while self.atOp("===") or self.atOp("?"):
            t = self.next()
            rhs = self.orExpr()
            e = EApp(EApp(EVar(t.value, self.span(t)), e, self.span(t)), rhs, self.span(t))
        return e

    def orExpr(self) -> Expr:
        e = self.andExpr()
        while self.atOp("||"):
            t = self.next()
            e = self.binApp("||", e, self.andExpr(), t)
        return e

    def andExpr(self) -> Expr:
        e = self.cmpExpr()
        while self.atOp("&&"):
            t = self.next()
            e = self.binApp("&&", e, self.cmpExpr(), t)
        return e

    def cmpExpr(self) -> Expr:
        e = self.addExpr()
        t = self.peek()
        if t.kind == "op" and t.value in ("==", "!=", "<", "<=", ">", ">="):
            self.next()
            return self.binApp(t.value, e, self.addExpr(), t)
        return e

    def addExpr(self) -> Expr:
        e = self.mulExpr()
        while self.peek().kind == "op" and self.peek().value in ("+", "-"):
            t = self.next()
            e = self.binApp(t.value, e, self.mulExpr(), t)
        return e

    def mulExpr(self) -> Expr:
        e = self.unaryExpr()
        while self.atOp("*"):
            t = self.next()
            e = self.binApp("*", e, self.unaryExpr(), t)
        return e

    def binApp(self, op: str, lhs: Expr, rhs: Expr, t: Tok) -> Expr:
        sp = self.span(t)
        return EApp(EApp(EConst(op, sp), lhs, sp), rhs, sp)

    def unaryExpr(self) -> Expr:
        if self.atOp("!"):
            t = self.next()
            return EApp(EConst("!", self.span(t)), self.unaryExpr(), self.span(t))
        if self.atOp("-"):
            t = self.next()
            if self.at("int"):
                v = self.next()
                return EConst(-int(v.value), self.span(t))
            return self.binApp("-", EConst(0, self.span(t)), self.unaryExpr(), t)
        return self.appExpr()

    def appExpr(self) -> Expr:
        e = self.atomExpr()
        while self.atOp("("):
            t = self.peek()
            self.next()
            args: list[Expr] = []
            if not self.atOp(")"):
                args.append(self.expr())
                while self.atOp(","):
                    self.next()
                    args.append(self.expr())
            self.expectOp(")")
            if not args:
                args = [EConst((), self.span(t))]
            for a in args:
                e = EApp(e, a, self.span(t))
        return e

    def _lambdaAhead(self) -> bool:
        """At '(': does the matching close paren lead into '=>'?"""
        depth = 0
        i = self.pos
        while i < len(self.toks):
            t = self.toks[i]
            if t.kind == "op" and t.value in ("(", "[", "{"):
                depth += 1
            elif t.kind == "op" and t.value in (")", "]", "}"):
                depth -= 1
                if depth == 0:
                    nxt = self.toks[i + 1] if i + 1 < len(self.toks) else None
                    return nxt is not None and nxt.kind == "op" and nxt.value == "=>"
            i += 1
        return False

    def atomExpr(self) -> Expr:
        t = self.peek()
        sp = self.span(t)
        if t.kind == "int":
            self.next()
            return EConst(int(t.value), sp)
        if t.kind == "kw" and t.value in ("true", "false"):
            self.next()
            return EConst(t.value == "true", sp)
        if t.kind == "kw" and t.value == "if":
            return self.ifExpr()
        if t.kind == "kw" and t.value == "switch":
            return self.switchExpr()
        if t.kind == "ident":
            self.next()
            return EVar(t.value, sp)
        if self.atOp("{"):
            return self.block()
        if self.atOp("("):
            if self._lambdaAhead():
                return self.lamExpr()
            self.next()
            if self.atOp(")"):
                self.next()
                return EConst((), sp)
            inner = self.expr()
            self.expectOp(")")
            return inner
        raise ParseError(f"expected an expression, found {t.value!r}", self.span(t))

    def lamExpr(self) -> Expr:
        t0 = self.expectOp("(")
        params: list[str] = []
        if not self.atOp(")"):
            params.append(self.expect("ident").value)
            while self.atOp(","):
                self.next()
                params.append(self.expect("ident").value)
        self.expectOp(")")
        self.expectOp("=>")
        if not params:
            params = [self.ctx.freshName("$u")]
        body = self.blockOrExpr()
        return ELam(params, body, self.span(t0))

    def blockOrExpr(self) -> Expr:
        if self.atOp("{"):
            return self.block()
        return self.expr()

    def block(self) -> Expr:
        self.expectOp("{")
        # ("val", name, ty, metric, span) | ("let"|"def", rec, name, rhs, span)
        items: list[tuple] = []
        while True:
            if self.at("kw", "val"):
                sp = self.span()
                self.next()
                name = self.bindingName()
                self.expectOp(":")
                ty = self.parseType(set(), set())
                metric: tuple[Pred, ...] | None = None
                if self.atOp("/"):
                    self.next()
                    parts = [self.parseMetricExpr()]
                    while self.atOp(","):
                        self.next()
                        parts.append(self.parseMetricExpr())
                    metric = tuple(parts)
                self.expectOp(";")
                items.append(("val", name, ty, metric, sp))
                continue
            if self.at("kw", "let") or self.at("kw", "def"):
                sp = self.span()
                kw = self.next().value
                rec = False
                if kw == "let" and self.at("kw", "rec"):
                    self.next()
                    rec = True
                name = self.bindingName()
                self.expectOp("=")
                rhs = self.expr()
                self.expectOp(";")
                items.append(("def" if kw == "def" else "let", rec, name, rhs, sp))
                continue
            break
        result = self.expr()
        if self.atOp(";"):
            self.next()
        self.expectOp("}")
        # thread the trailing expression through the bindings, attaching any
        # inner val signature to its let as an annotation
        vals: dict[str, tuple[Type, tuple[Pred, ...] | None]] = {}
        body = result
        for it in reversed(items):
            if it[0] == "val":
                _, name, ty, metric, sp = it
                vals[name] = (ty, metric)
                continue
            kind, rec, name, rhs, sp = it
            annot, metric = vals.pop(name, (None, None))
            if kind == "def":
                body = EReflect(name, rhs, annot, metric, body, sp)
            elif rec:
                body = ELetRec(name, rhs, annot, metric, body, sp)
            else:
                if annot is not None:
                    rhs = EAnnot(rhs, annot, sp)
                body = ELet(name, rhs, body, sp)
        return body

    def ifExpr(self) -> Expr:
        t0 = self.expect("kw", "if")
        self.expectOp("(")
        cond = self.expr()
        self.expectOp(")")
        then = self.blockOrExpr()
        self.expect("kw", "else")
        if self.at("kw", "if"):
            els = self.ifExpr()
        else:
            els = self.blockOrExpr()
        return EIf(cond, then, els, self.span(t0))

    def switchExpr(self) -> Expr:
        t0 = self.expect("kw", "switch")
        self.expectOp("(")
        scrut = self.expr()
        self.expectOp(")")
        self.expectOp("{")
        raw_alts: list[tuple] = []
        if self.atOp("|"):
            self.next()
        while True:
            raw_alts.append(self.switchAlt())
            if self.atOp("|"):
                self.next()
                continue
            break
        self.expectOp("}")
        sp = self.span(t0)
        if any(kind == "lit" for kind, *_ in raw_alts):
            return self._desugarIntSwitch(scrut, raw_alts, sp)
        alts = [Alt(c, list(bs), body, asp) for kind, c, bs, body, asp in raw_alts]
        return ESwitch(scrut, alts, sp)

    def switchAlt(self) -> tuple:
        t = self.peek()
        sp = self.span(t)
        if t.kind == "int":
            self.next()
            self.expectOp("=>")
            return ("lit", int(t.value), (), self.blockOrExpr(), sp)
        name = self.expect("ident").value
        binders: list[str] = []
        is_pattern = name[0].isupper()
        if is_pattern and self.atOp("("):
            self.next()
            binders.append(self.expect("ident").value)
            while self.atOp(","):
                self.next()
                binders.append(self.expect("ident").value)
            self.expectOp(")")
        self.expectOp("=>")
        body = self.blockOrExpr()
        if is_pattern:
            return ("ctor", name, tuple(binders), body, sp)
        return ("default", name, (), body, sp)

    def _desugarIntSwitch(self, scrut: Expr, raw_alts: list[tuple], sp: Span) -> Expr:
        """Integer-literal alternatives become an if-chain; the trailing
        variable alternative binds the scrutinee."""
        s = self.ctx.freshName("$s")
        lits = [a for a in raw_alts if a[0] == "lit"]
        defaults = [a for a in raw_alts if a[0] == "default"]
        if len(defaults) != 1 or len(lits) + 1 != len(raw_alts):
            raise ParseError(
                "an integer switch needs literal alternatives plus one "
                "trailing variable alternative",
                sp,
            )
        _, dname, _, dbody, dsp = defaults[0]
        chain: Expr = ELet(dname, EVar(s, dsp), dbody, dsp)
        for _, value, _, body, asp in reversed(lits):
            cond = EApp(
                EApp(EConst("==", asp), EVar(s, asp), asp), EConst(value, asp), asp
            )
            chain = EIf(cond, body, chain, asp)
        return ELet(s, scrut, chain, sp)


def parse(text: str, path: str = "<string>", ctx: ParseContext | None = None) -> Program:
    p = Parser(text, path, ctx)
    return p.program()


# ---------------------------------------------------------------------------
# pretty printing (diagnostics and tests)


def showExpr(e: Expr) -> str:
    if isinstance(e, EConst):
        if e.value == ():
            return "()"
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        return str(e.value)
    if isinstance(e, EVar):
        return e.name
    if isinstance(e, ELam):
        return f"({', '.join(e.params)}) => {showExpr(e.body)}"
    if isinstance(e, EApp):
        parts = []
        cur: Expr = e
        while isinstance(cur, EApp):
            parts.append(showExpr(cur.arg))
            cur = cur.fn
        return f"{showExpr(cur)}({', '.join(reversed(parts))})"
    if isinstance(e, ELet):
        return f"let {e.name} = {showExpr(e.rhs)}; {showExpr(e.body)}"
    if isinstance(e, ELetRec):
        return f"let rec {e.name} = {showExpr(e.rhs)}; {showExpr(e.body)}"
    if isinstance(e, EReflect):
        return f"def {e.name} = {showExpr(e.rhs)}; {showExpr(e.body)}"
    if isinstance(e, EIf):
        return (
            f"if ({showExpr(e.cond)}) {{ {showExpr(e.then)} }} "
            f"else {{ {showExpr(e.els)} }}"
        )
    if isinstance(e, ESwitch):
        alts = " | ".join(
            f"{a.ctor}({', '.join(a.binders)}) => {showExpr(a.body)}"
            if a.binders
            else f"{a.ctor} => {showExpr(a.body)}"
            for a in e.alts
        )
        return f"switch ({showExpr(e.scrut)}) {{ {alts} }}"
    if isinstance(e, EAnnot):
        ty = showType(e.ty) if isinstance(e.ty, (Base, Fun, AllTy, AllRef)) else "_"
        return f"({showExpr(e.expr)} : {ty})"
    if isinstance(e, ETAbs):
        vs = " ".join(f"'{a}" for a, _ in e.tyvars)
        return f"/\\{vs}. {showExpr(e.body)}"
    if isinstance(e, ETApp):
        ty = showType(e.ty) if isinstance(e.ty, (Base, Fun, AllTy, AllRef)) else "_"
        return f"({showExpr(e.expr)}[{ty}])"
    if isinstance(e, ERApp):
        return f"({showExpr(e.expr)}[*])"
    raise AssertionError(e)


# ---------------------------------------------------------------------------
# ANF


class _AnfState:
    def __init__(self) -> None:
        self.temp = 0
        self.used: set[str] = set()

    def freshTemp(self) -> str:
        while True:
            name = f"$t{self.temp}"
            self.temp += 1
            if name not in self.used:
                self.used.add(name)
                return name

    def uniquify(self, name: str) -> str:
        if name not in self.used:
            self.used.add(name)
            return name
        n = 1
        while f"{name}${n}" in self.used:
            n += 1
        fresh = f"{name}${n}"
        self.used.add(fresh)
        return fresh


def _rename(e: Expr, ren: dict[str, str], st: _AnfState) -> Expr:
    """Make every binder unique, renaming uses accordingly."""
    if isinstance(e, EConst):
        return e
    if isinstance(e, EVar):
        return EVar(ren.get(e.name, e.name), e.span)
    if isinstance(e, ELam):
        ren2 = dict(ren)
        params = []
        for p in e.params:
            np = st.uniquify(p)
            ren2[p] = np
            params.append(np)
        return ELam(params, _rename(e.body, ren2, st), e.span)
    if isinstance(e, EApp):
        return EApp(_rename(e.fn, ren, st), _rename(e.arg, ren, st), e.span)
    if isinstance(e, ELet):
        rhs = _rename(e.rhs, ren, st)
        ren2 = dict(ren)
        name = st.uniquify(e.name)
        ren2[e.name] = name
        return ELet(name, rhs, _rename(e.body, ren2, st), e.span)
    if isinstance(e, (ELetRec, EReflect)):
        ren2 = dict(ren)
        name = st.uniquify(e.name)
        ren2[e.name] = name
        rhs = _rename(e.rhs, ren2, st)
        cls = ELetRec if isinstance(e, ELetRec) else EReflect
        return cls(name, rhs, e.annot, e.metric, _rename(e.body, ren2, st), e.span)
    if isinstance(e, EIf):
        return EIf(
            _rename(e.cond, ren, st),
            _rename(e.then, ren, st),
            _rename(e.els, ren, st),
            e.span,
        )
    if isinstance(e, ESwitch):
        alts = []
        for a in e.alts:
            ren2 = dict(ren)
            binders = []
            for b in a.binders:
                nb = st.uniquify(b)
                ren2[b] = nb
                binders.append(nb)
            alts.append(Alt(a.ctor, binders, _rename(a.body, ren2, st), a.span))
        return ESwitch(_rename(e.scrut, ren, st), alts, e.span)
    if isinstance(e, EAnnot):
        return EAnnot(_rename(e.expr, ren, st), e.ty, e.span)
    if isinstance(e, ETAbs):
        return ETAbs(e.tyvars, _rename(e.body, ren, st), e.span)
    if isinstance(e, ETApp):
        return ETApp(_rename(e.expr, ren, st), e.ty, e.span)
    if isinstance(e, ERApp):
        return ERApp(_rename(e.expr, ren, st), e.span)
    raise AssertionError(e)


def _splitLets(e: Expr) -> tuple[list, Expr]:
    """Peel the leading let spine off an expression."""
    binds: list = []
    while isinstance(e, (ELet, ELetRec, EReflect)):
        if isinstance(e, ELet):
            binds.append(("let", e.name, e.rhs, e.span))
        elif isinstance(e, ELetRec):
            binds.append(("rec", e.name, e.rhs, e.annot, e.metric, e.span))
        else:
            binds.append(("def", e.name, e.rhs, e.annot, e.metric, e.span))
        e = e.body
    return binds, e


def _wrap(binds: list, body: Expr) -> Expr:
    for b in reversed(binds):
        if b[0] == "let":
            _, name, rhs, sp = b
            body = ELet(name, rhs, body, sp)
        else:
            kind, name, rhs, annot, metric, sp = b
            cls = ELetRec if kind == "rec" else EReflect
            body = cls(name, rhs, annot, metric, body, sp)
    return body


def _norm(e: Expr, st: _AnfState) -> Expr:
    if isinstance(e, (EConst, EVar)):
        return e
    if isinstance(e, ELam):
        return ELam(e.params, _norm(e.body, st), e.span)
    if isinstance(e, EApp):
        binds: list = []
        fn = _normFn(e.fn, st, binds)
        arg = _atomize(e.arg, st, binds)
        return _wrap(binds, EApp(fn, arg, e.span))
    if isinstance(e, ELet):
        rhs = _norm(e.rhs, st)
        hoisted, core = _splitLets(rhs)
        return _wrap(hoisted, ELet(e.name, core, _norm(e.body, st), e.span))
    if isinstance(e, (ELetRec, EReflect)):
        cls = ELetRec if isinstance(e, ELetRec) else EReflect
        return cls(
            e.name, _norm(e.rhs, st), e.annot, e.metric, _norm(e.body, st), e.span
        )
    if isinstance(e, EIf):
        binds = []
        cond = _atomize(e.cond, st, binds)
        return _wrap(binds, EIf(cond, _norm(e.then, st), _norm(e.els, st), e.span))
    if isinstance(e, ESwitch):
        binds = []
        scrut = _atomize(e.scrut, st, binds)
        alts = [Alt(a.ctor, a.binders, _norm(a.body, st), a.span) for a in e.alts]
        return _wrap(binds, ESwitch(scrut, alts, e.span))
    if isinstance(e, EAnnot):
        return EAnnot(_norm(e.expr, st), e.ty, e.span)
    if isinstance(e, ETAbs):
        return ETAbs(e.tyvars, _norm(e.body, st), e.span)
    if isinstance(e, ETApp):
        return ETApp(_norm(e.expr, st), e.ty, e.span)
    if isinstance(e, ERApp):
        return ERApp(_norm(e.expr, st), e.span)
    raise AssertionError(e)


def _normFn(e: Expr, st: _AnfState, binds: list) -> Expr:
    """Function position: applications nest, anything else atomizes."""
    if isinstance(e, (EVar, EConst)):
        return e
    if isinstance(e, EApp):
        fn = _normFn(e.fn, st, binds)
        arg = _atomize(e.arg, st, binds)
        return EApp(fn, arg, e.span)
    if isinstance(e, (ETApp, ERApp, ETAbs)):
        inner = _normFn(e.expr if not isinstance(e, ETAbs) else e.body, st, binds)
        if isinstance(e, ETApp):
            return ETApp(inner, e.ty, e.span)
        if isinstance(e, ERApp):
            return ERApp(inner, e.span)
        return ETAbs(e.tyvars, inner, e.span)
    return _atomize(e, st, binds)


def _atomize(e: Expr, st: _AnfState, binds: list) -> Expr:
    if isinstance(e, EVar):
        return e
    normed = _norm(e, st)
    hoisted, core = _splitLets(normed)
    binds.extend(hoisted)
    if isinstance(core, EVar):
        return core
    name = st.freshTemp()
    binds.append(("let", name, core, core.span if hasattr(core, "span") else NO_SPAN))
    return EVar(name, getattr(core, "span", NO_SPAN))


def anf(e: Expr, st: _AnfState | None = None) -> Expr:
    """Normalize one expression: unique binders, variable-only arguments."""
    st = st if st is not None else _AnfState()
    return _norm(_rename(e, {}, st), st)


def anfProgram(prog: Program) -> Program:
    st = _AnfState()
    items: list[Item] = []
    for it in prog.items:
        if isinstance(it, LetItem):
            items.append(
                LetItem(it.name, anf(it.rhs, st), it.rec, it.reflected, it.span)
            )
        else:
            items.append(it)
    return Program(items, prog.directives, prog.path)


def anfViolations(e: Expr) -> list[str]:
    """Structural ANF check: names of offending positions, empty if normal."""
    bad: list[str] = []

    def go(e: Expr) -> None:
        if isinstance(e, EApp):
            if not isinstance(e.arg, EVar):
                bad.append(f"application argument is {type(e.arg).__name__}")
            go(e.fn)
            if not isinstance(e.arg, EVar):
                go(e.arg)
        elif isinstance(e, EIf):
            if not isinstance(e.cond, EVar):
                bad.append(f"if condition is {type(e.cond).__name__}")
            go(e.then)
            go(e.els)
        elif isinstance(e, ESwitch):
            if not isinstance(e.scrut, EVar):
                bad.append(f"switch scrutinee is {type(e.scrut).__name__}")
            for a in e.alts:
                go(a.body)
        elif isinstance(e, ELam):
            go(e.body)
        elif isinstance(e, (ELet, ELetRec, EReflect)):
            go(e.rhs)
            go(e.body)
        elif isinstance(e, (EAnnot, ETApp, ERApp)):
            go(e.expr)
        elif isinstance(e, ETAbs):
            go(e.body)

    go(e)
    return bad


# ---------------------------------------------------------------------------
# elaboration: Hindley-Milner over refinement-erased types


class _SVar:
    __slots__ = ("inst",)

    def __init__(self) -> None:
        self.inst: object | None = None


@dataclass(frozen=True)
class _SCon:
    name: str
    args: tuple = ()


def _find(s):
    while isinstance(s, _SVar) and s.inst is not None:
        s = s.inst
    return s


def _occurs(v: _SVar, s) -> bool:
    s = _find(s)
    if s is v:
        return True
    if isinstance(s, _SCon):
        return any(_occurs(v, a) for a in s.args)
    return False


def _unify(a, b, span: Span) -> None:
    a, b = _find(a), _find(b)
    if a is b:
        return
    if isinstance(a, _SVar):
        if _occurs(a, b):
            raise OccursCheck("cannot construct an infinite type", span)
        a.inst = b
        return
    if isinstance(b, _SVar):
        _unify(b, a, span)
        return
    if a.name != b.name or len(a.args) != len(b.args):
        raise UnificationFailure(
            f"cannot unify {_showShape(a)} with {_showShape(b)}", span
        )
    for x, y in zip(a.args, b.args):
        _unify(x, y, span)


def _unifyLenient(got, want, span: Span) -> None:
    """Check-direction unification: an expected unit shape accepts any
    result (propositions erase to unit; subsumption fills the gap)."""
    w = _find(want)
    if isinstance(w, _SCon) and w.name == "data:" + UNIT_TYCON:
        g = _find(got)
        if isinstance(g, _SVar):
            _unify(g, w, span)
        return
    _unify(got, want, span)


def _showShape(s) -> str:
    s = _find(s)
    if isinstance(s, _SVar):
        return "_"
    if s.name == "->":
        return f"({_showShape(s.args[0])} => {_showShape(s.args[1])})"
    if s.name.startswith("tv:"):
        return "'" + s.name[3:]
    if s.name.startswith("data:"):
        base = s.name[5:]
        if s.args:
            return base + "(" + ", ".join(_showShape(a) for a in s.args) + ")"
        return base
    return s.name


_SINT = _SCon("int")
_SBOOL = _SCon("bool")
_SUNIT = _SCon("data:" + UNIT_TYCON)


@dataclass
class _Scheme:
    vars: list[tuple[str, Kind]]
    n_rvars: int
    shape: object


@dataclass
class _ShapeTodo:
    """Zonk placeholder: a shape to turn into a (hole) type later."""

    shape: object
    trivial: bool
    kinds: dict[str, Kind]


def _erase(t: Type) -> object:
    if isinstance(t, Base):
        b = t.base
        if isinstance(b, BInt):
            return _SINT
        if isinstance(b, BBool):
            return _SBOOL
        if isinstance(b, BTyVar):
            return _SCon("tv:" + b.name)
        if isinstance(b, BTCon):
            return _SCon("data:" + b.tycon, tuple(_erase(a) for a in b.targs))
        raise AssertionError(b)
    if isinstance(t, Fun):
        return _SCon("->", (_erase(t.dom), _erase(t.cod)))
    if isinstance(t, (AllTy, AllRef)):
        return _erase(t.body)
    raise AssertionError(t)


def _schemeOf(t: Type) -> _Scheme:
    vars: list[tuple[str, Kind]] = []
    n_rvars = 0
    cur = t
    while isinstance(cur, (AllTy, AllRef)):
        if isinstance(cur, AllTy):
            vars.append((cur.tyvar, cur.kind))
        else:
            n_rvars += 1
        cur = cur.body
    return _Scheme(vars, n_rvars, _erase(cur))


def _instShape(s, mapping: dict[str, object]):
    s = _find(s)
    if isinstance(s, _SVar):
        return s
    if s.name.startswith("tv:") and s.name[3:] in mapping:
        return mapping[s.name[3:]]
    if s.args:
        return _SCon(s.name, tuple(_instShape(a, mapping) for a in s.args))
    return s


class _PrimSchemes:
    arith = _Scheme([], 0, _SCon("->", (_SINT, _SCon("->", (_SINT, _SINT)))))
    logic = _Scheme([], 0, _SCon("->", (_SBOOL, _SCon("->", (_SBOOL, _SBOOL)))))
    neg = _Scheme([], 0, _SCon("->", (_SBOOL, _SBOOL)))
    cmp = _Scheme(
        [("a", Kind.BASE)],
        0,
        _SCon("->", (_SCon("tv:a"), _SCon("->", (_SCon("tv:a"), _SBOOL)))),
    )


def _primScheme(op: str) -> _Scheme:
    if op in ("+", "-", "*"):
        return _PrimSchemes.arith
    if op in ("&&", "||"):
        return _PrimSchemes.logic
    if op == "!":
        return _PrimSchemes.neg
    if op in ("==", "!=", "<", "<=", ">", ">="):
        return _PrimSchemes.cmp
    raise AssertionError(op)


class Elaborator:
    """One pass over a program: decorate polymorphic uses with hole-typed
    applications, annotate binders that cannot synthesize a type."""

    def __init__(self) -> None:
        self.schemes: dict[str, _Scheme] = {}
        self.datadecls: dict[str, DataDecl] = {}
        self.ctors: dict[str, tuple[str, DataDecl, DataCtor]] = {}
        self.anon = 0
        self.kinds: dict[str, Kind] = {}

    def freshName(self, prefix: str) -> str:
        n = self.anon
        self.anon += 1
        return f"{prefix}{n}"

    # -- program entry

    def run(self, prog: Program) -> Program:
        self._registerData(DataDecl(UNIT_TYCON, (), (), (DataCtor("Unit", (), "v", BoolLit(True)),)))
        vals: dict[str, ValItem] = {}
        items: list[Item] = []
        for it in prog.items:
            if isinstance(it, DataItem):
                self._registerData(it.decl)
                items.append(it)
            elif isinstance(it, ValItem):
                self.schemes[it.name] = _schemeOf(it.ty)
                vals[it.name] = it
                items.append(it)
            elif isinstance(it, LetItem):
                val = vals.get(it.name)
                rhs = self._elabBinding(it, val)
                items.append(LetItem(it.name, rhs, it.rec, it.reflected, it.span))
            else:
                items.append(it)
        return Program(items, prog.directives, prog.path)

    def _registerData(self, decl: DataDecl) -> None:
        if decl.tycon in self.datadecls:
            return
        self.datadecls[decl.tycon] = decl
        for ctor in decl.ctors:
            shape: object = _SCon(
                "data:" + decl.tycon,
                tuple(_SCon("tv:" + a) for a, _ in decl.tyvars),
            )
            for _, fty in reversed(ctor.fields):
                shape = _SCon("->", (_erase(fty), shape))
            self.schemes[ctor.name] = _Scheme(list(decl.tyvars), 0, shape)
            self.ctors[ctor.name] = (decl.tycon, decl, ctor)

    # -- bindings

    def _elabBinding(self, it: LetItem, val: ValItem | None) -> Expr:
        self.kinds = {}
        env: dict[str, object] = {}
        if val is not None:
            sch = self.schemes[it.name]
            for a, k in sch.vars:
                self.kinds[a] = k
            new_rhs = self._down(it.rhs, sch.shape, env)
            if sch.vars and not isinstance(new_rhs, ETAbs):
                new_rhs = ETAbs(list(sch.vars), new_rhs, it.span)
        else:
            meta = _SVar()
            new_rhs = self._down(it.rhs, meta, env)
            self.schemes[it.name] = _Scheme([], 0, _find(meta))
        self._zonk(new_rhs)
        return new_rhs

    # -- checking / synthesis over shapes

    def _down(self, e: Expr, shape, env: dict[str, object]) -> Expr:
        if isinstance(e, ELam):
            env2 = dict(env)
            cur = shape
            for p in e.params:
                cur = _find(cur)
                if isinstance(cur, _SVar):
                    d, c = _SVar(), _SVar()
                    _unify(cur, _SCon("->", (d, c)), e.span)
                    cur = _SCon("->", (d, c))
                if not (isinstance(cur, _SCon) and cur.name == "->"):
                    raise UnificationFailure(
                        f"lambda with {len(e.params)} parameter(s) against "
                        f"non-function shape {_showShape(shape)}",
                        e.span,
                    )
                env2[p] = cur.args[0]
                cur = cur.args[1]
            e.body = self._down(e.body, cur, env2)
            return e
        if isinstance(e, ETAbs):
            e.body = self._down(e.body, shape, env)
            return e
        if isinstance(e, EIf):
            e.cond = self._checkVarish(e.cond, _SBOOL, env)
            e.then = self._down(e.then, shape, env)
            e.els = self._down(e.els, shape, env)
            return e
        if isinstance(e, ESwitch):
            e.scrut, scrut_shape = self._up(e.scrut, env)
            for alt in e.alts:
                self._elabAlt(alt, scrut_shape, shape, env)
            return e
        if isinstance(e, ELet):
            e.rhs, rhs_shape, _ = self._letRhs(e.rhs, env, e.span)
            env2 = dict(env)
            env2[e.name] = rhs_shape
            e.body = self._down(e.body, shape, env2)
            return e
        if isinstance(e, (ELetRec, EReflect)):
            env2 = dict(env)
            meta: object
            if e.annot is not None:
                meta = _erase(e.annot)
            else:
                meta = _SVar()
            env2[e.name] = meta
            e.rhs = self._down(e.rhs, meta, env2)
            if e.annot is None:
                e.annot = _ShapeTodo(meta, False, dict(self.kinds))
            e.body = self._down(e.body, shape, env2)
            return e
        if isinstance(e, EAnnot):
            if isinstance(e.ty, _ShapeTodo):
                e.expr = self._down(e.expr, e.ty.shape, env)
                _unifyLenient(e.ty.shape, shape, e.span)
                return e
            erased = _erase(e.ty)
            e.expr = self._down(e.expr, erased, env)
            _unifyLenient(erased, shape, e.span)
            return e
        new_e, got = self._up(e, env)
        _unifyLenient(got, shape, getattr(e, "span", NO_SPAN))
        return new_e

    def _letRhs(self, rhs: Expr, env: dict[str, object], sp: Span):
        """Elaborate a let right-hand side; annotate if it cannot synthesize."""
        if isinstance(rhs, EAnnot):
            new = self._down(rhs, _erase(rhs.ty) if not isinstance(rhs.ty, _ShapeTodo) else rhs.ty.shape, env)
            shape = _erase(rhs.ty) if not isinstance(rhs.ty, _ShapeTodo) else rhs.ty.shape
            return new, shape, True
        if isinstance(rhs, (ELam, EIf, ESwitch)):
            meta = _SVar()
            new = self._down(rhs, meta, env)
            wrapped = EAnnot(new, _ShapeTodo(meta, False, dict(self.kinds)), sp)
            return wrapped, meta, True
        new, shape = self._up(rhs, env)
        return new, shape, False

    def _elabAlt(self, alt: Alt, scrut_shape, result_shape, env: dict[str, object]) -> None:
        entry = self.ctors.get(alt.ctor)
        if entry is None:
            raise UnificationFailure(f"unknown constructor {alt.ctor!r}", alt.span)
        tycon, decl, ctor = entry
        mapping = {a: _SVar() for a, _ in decl.tyvars}
        _unify(
            scrut_shape,
            _SCon("data:" + tycon, tuple(mapping[a] for a, _ in decl.tyvars)),
            alt.span,
        )
        if len(alt.binders) != len(ctor.fields):
            raise UnificationFailure(
                f"constructor {alt.ctor} has {len(ctor.fields)} field(s), "
                f"pattern binds {len(alt.binders)}",
                alt.span,
            )
        env2 = dict(env)
        for b, (_, fty) in zip(alt.binders, ctor.fields):
            env2[b] = _instShape(_erase(fty), mapping)
        alt.body = self._down(alt.body, result_shape, env2)

    def _checkVarish(self, e: Expr, shape, env: dict[str, object]) -> Expr:
        new, got = self._up(e, env)
        _unifyLenient(got, shape, getattr(e, "span", NO_SPAN))
        return new

    def _up(self, e: Expr, env: dict[str, object]):
        if isinstance(e, EConst):
            if isinstance(e.value, bool):
                return e, _SBOOL
            if isinstance(e.value, int):
                return e, _SINT
            if e.value == ():
                return e, _SUNIT
            return self._headUse(e, _primScheme(e.value), trivial=True)
        if isinstance(e, EVar):
            if e.name in env:
                return e, env[e.name]
            sch = self.schemes.get(e.name)
            if sch is None:
                raise UnificationFailure(f"unbound name {e.name!r}", e.span)
            return self._headUse(e, sch, trivial=False)
        if isinstance(e, (ETApp, ERApp)):
            return self._existingHead(e, env)
        if isinstance(e, EApp):
            e.fn, fshape = self._up(e.fn, env)
            d, c = _SVar(), _SVar()
            _unify(fshape, _SCon("->", (d, c)), e.span)
            e.arg = self._checkVarish(e.arg, d, env)
            return e, c
        if isinstance(e, EAnnot):
            if isinstance(e.ty, _ShapeTodo):
                e.expr = self._down(e.expr, e.ty.shape, env)
                return e, e.ty.shape
            erased = _erase(e.ty)
            e.expr = self._down(e.expr, erased, env)
            return e, erased
        if isinstance(e, (ELet, ELetRec, EReflect)):
            # a let spine in value position synthesizes through its body
            if isinstance(e, ELet):
                e.rhs, rhs_shape, _ = self._letRhs(e.rhs, env, e.span)
                env2 = dict(env)
                env2[e.name] = rhs_shape
                new_body, shape = self._up(e.body, env2)
                e.body = new_body
                return e, shape
            env2 = dict(env)
            meta = _erase(e.annot) if e.annot is not None else _SVar()
            env2[e.name] = meta
            e.rhs = self._down(e.rhs, meta, env2)
            if e.annot is None:
                e.annot = _ShapeTodo(meta, False, dict(self.kinds))
            new_body, shape = self._up(e.body, env2)
            e.body = new_body
            return e, shape
        raise UnificationFailure(
            f"cannot infer a type for this {type(e).__name__}", getattr(e, "span", NO_SPAN)
        )

    def _headUse(self, e: Expr, sch: _Scheme, trivial: bool):
        """A use of a (possibly polymorphic) name: wrap with explicit
        instantiations whose types are filled in at zonk time."""
        mapping = {a: _SVar() for a, _ in sch.vars}
        shape = _instShape(sch.shape, mapping)
        out: Expr = e
        for a, k in sch.vars:
            out = ETApp(
                out,
                _ShapeTodo(mapping[a], trivial, dict(self.kinds)),
                getattr(e, "span", NO_SPAN),
            )
        for _ in range(sch.n_rvars):
            out = ERApp(out, getattr(e, "span", NO_SPAN))
        return out, shape

    def _existingHead(self, e: Expr, env: dict[str, object]):
        """Re-derive the shape of an already-wrapped head (idempotency)."""
        wraps: list[Expr] = []
        cur = e
        while isinstance(cur, (ETApp, ERApp)):
            wraps.append(cur)
            cur = cur.expr
        if isinstance(cur, EConst) and isinstance(cur.value, str):
            sch = _primScheme(cur.value)
        elif isinstance(cur, EVar):
            sch = self.schemes.get(cur.name)
            if sch is None:
                raise UnificationFailure(f"unbound name {cur.name!r}", cur.span)
        else:
            raise UnificationFailure("misplaced instantiation", getattr(e, "span", NO_SPAN))
        tapps = [w for w in reversed(wraps) if isinstance(w, ETApp)]
        if len(tapps) != len(sch.vars):
            raise UnificationFailure(
                "instantiation count does not match the name's quantifiers",
                getattr(e, "span", NO_SPAN),
            )
        mapping: dict[str, object] = {}
        for (a, _), w in zip(sch.vars, tapps):
            if isinstance(w.ty, _ShapeTodo):
                mapping[a] = w.ty.shape
            else:
                mapping[a] = self._eraseHoley(w.ty)
        return e, _instShape(sch.shape, mapping)

    def _eraseHoley(self, t: Type):
        """Erase a bare instantiation type; holes do not affect shapes."""
        return _erase(t)

    # -- zonking

    def _zonk(self, e: Expr) -> None:
        if isinstance(e, (EConst, EVar)):
            return
        if isinstance(e, ELam):
            self._zonk(e.body)
        elif isinstance(e, EApp):
            self._zonk(e.fn)
            self._zonk(e.arg)
        elif isinstance(e, ELet):
            self._zonk(e.rhs)
            self._zonk(e.body)
        elif isinstance(e, (ELetRec, EReflect)):
            if isinstance(e.annot, _ShapeTodo):
                e.annot = self._buildType(e.annot.shape, e.annot.trivial, e.annot.kinds)
            self._zonk(e.rhs)
            self._zonk(e.body)
        elif isinstance(e, EIf):
            self._zonk(e.cond)
            self._zonk(e.then)
            self._zonk(e.els)
        elif isinstance(e, ESwitch):
            self._zonk(e.scrut)
            for a in e.alts:
                self._zonk(a.body)
        elif isinstance(e, EAnnot):
            if isinstance(e.ty, _ShapeTodo):
                e.ty = self._buildType(e.ty.shape, e.ty.trivial, e.ty.kinds)
            self._zonk(e.expr)
        elif isinstance(e, ETAbs):
            self._zonk(e.body)
        elif isinstance(e, ETApp):
            if isinstance(e.ty, _ShapeTodo):
                e.ty = self._buildType(e.ty.shape, e.ty.trivial, e.ty.kinds)
            self._zonk(e.expr)
        elif isinstance(e, ERApp):
            self._zonk(e.expr)
        else:
            raise AssertionError(e)

    def _buildType(self, shape, trivial: bool, kinds: dict[str, Kind]) -> Type:
        s = _find(shape)
        hole: object = BoolLit(True) if trivial else HOLE
        if isinstance(s, _SVar):
            return Base(BInt(), "v", hole)  # unconstrained: default to int
        if s.name == "int":
            return Base(BInt(), "v", hole)
        if s.name == "bool":
            return Base(BBool(), "v", hole)
        if s.name == "->":
            dom = self._buildType(s.args[0], trivial, kinds)
            cod = self._buildType(s.args[1], trivial, kinds)
            return Fun(self.freshName("$x"), dom, cod)
        if s.name.startswith("tv:"):
            a = s.name[3:]
            ref = hole if kinds.get(a, Kind.BASE) is Kind.BASE else BoolLit(True)
            return Base(BTyVar(a), "v", ref)
        if s.name.startswith("data:"):
            tycon = s.name[5:]
            decl = self.datadecls.get(tycon)
            targs = tuple(self._buildType(a, trivial, kinds) for a in s.args)
            rargs = []
            if decl is not None:
                for _, sorts in decl.rvars:
                    params = tuple(self.freshName("$h") for _ in sorts)
                    rargs.append(ConcRef(params, HOLE if not trivial else BoolLit(True)))
            head = hole if tycon != UNIT_TYCON else BoolLit(True)
            return Base(BTCon(tycon, targs, tuple(rargs)), "v", head)
        raise AssertionError(s)


def elaborate(prog: Program) -> Program:
    return Elaborator().run(prog)
