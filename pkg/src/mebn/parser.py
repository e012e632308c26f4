"""Parser for the textual MTheory language, evidence files and query terms.

The grammar is block-structured and self-delimiting; files are written one
declaration per line but commas/newlines between items are interchangeable.

    theory StarTrek

    types { Starship, Zone, TimeStep }

    entities {
      Starship: !ST0 !ST1
      Zone: !Z0
    }

    mfrag Danger {
      vars { s: Starship, st: Starship, t: TimeStep }
      context {
        IsOwnStarship(s)
        Isa(Starship, st)
      }
      input { HarmPotential(st, t), OpSpec(st) }
      resident { DangerToSelf(s, t) : { Unacceptable, High, Medium, Low } }
      graph {
        HarmPotential(st, t) -> DangerToSelf(s, t)
        OpSpec(st) -> DangerToSelf(s, t)
      }
      local DangerToSelf {
        when count(HarmPotential = True & OpSpec = Klingon) >= 1 {
          Unacceptable: min(0.98, 0.20 + 0.20 * sat(HarmPotential = True & OpSpec = Klingon, 4))
          High: *
          Medium: 0.01
          Low: 0.01
        }
        default { Absurd: 1 }
      }
    }

Evidence files hold findings (``OpSpec(!ST1) = Klingon``), optional
``candidates`` gates for identifier-valued instances, and an optional
``entities`` block adding situation-specific entities.

Every malformed input yields diagnostics with source spans; the parser never
returns a partial theory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .errors import MebnError
from .model import (
    ABSURD,
    Arg,
    ConnectiveContext,
    ContextTerm,
    EqContext,
    Finding,
    LexEqContext,
    MFrag,
    MTheory,
    QuantifiedContext,
    ResidentDecl,
    RVInstance,
    RVTerm,
    StateSpace,
)
from .ldl import (
    Assignment,
    Clause,
    ConstTerm,
    CountCmp,
    Guard,
    GuardBool,
    GuardNot,
    LocalExpression,
    LogicLocal,
    Pattern,
    SatLinearTerm,
    UniformLocal,
)

KEYWORDS = {
    "theory", "types", "entities", "mfrag", "vars", "context", "input",
    "resident", "graph", "local", "logic", "when", "default", "count",
    "sat", "min", "bool", "ref", "candidates", "and", "or", "not",
    "implies", "iff", "forall", "exists", "uniform",
}

CONNECTIVE_KEYWORDS = ("and", "or", "not", "implies", "iff")
QUANTIFIER_KEYWORDS = ("forall", "exists")

RESERVED_RV_NAMES = {"Isa", "Identity", "Type", "Eq", "And", "Or", "Not",
                     "Implies", "Iff", "Prev"}


@dataclass(frozen=True)
class SourceText:
    content: str
    origin: str = "<string>"


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: str  # error | warning
    message: str
    line: int      # 1-based
    col: int       # 1-based
    end_col: int
    origin: str = "<string>"

    def render(self) -> str:
        return f"{self.origin}:{self.line}:{self.col}: {self.severity}: {self.message}"


class ParseError(MebnError):
    stage = "parse"

    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        head = self.diagnostics[0].render() if self.diagnostics else "parse error"
        more = f" (+{len(self.diagnostics) - 1} more)" if len(self.diagnostics) > 1 else ""
        super().__init__(head + more)


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<WS>[ \t\r]+)
  | (?P<COMMENT>\#[^\n]*)
  | (?P<NL>\n)
  | (?P<IDENT>![A-Z0-9]+)
  | (?P<NUMBER>\d+(?:\.\d+)?)
  | (?P<NAME>[A-Z][A-Za-z0-9]*)
  | (?P<VAR>[a-z][a-z0-9]*)
  | (?P<ARROW>->)
  | (?P<NEQ>!=)
  | (?P<LE><=)
  | (?P<GE>>=)
  | (?P<PUNCT>[(){}:,.=<>*&+\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    type: str
    text: str
    line: int
    col: int

    @property
    def end_col(self) -> int:
        return self.col + max(len(self.text), 1)


def tokenize(src: SourceText) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    content = src.content
    while pos < len(content):
        m = _TOKEN_RE.match(content, pos)
        if not m:
            raise ParseError([ParseDiagnostic(
                "error", f"unexpected character {content[pos]!r}",
                line, col, col + 1, src.origin)])
        kind = m.lastgroup
        text = m.group()
        if kind == "NL":
            line += 1
            col = 1
        elif kind in ("WS", "COMMENT"):
            col += len(text)
        else:
            ttype = "PUNCT" if kind in ("ARROW", "NEQ", "LE", "GE") else kind
            tokens.append(Token(ttype, text, line, col))
            col += len(text)
        pos = m.end()
    tokens.append(Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# logical terms (query targets and logic-defined residents)


@dataclass(frozen=True)
class LTApp:
    """An RV application whose arguments may nest further applications."""

    name: str
    args: tuple[Union[Arg, "LTApp"], ...] = ()

    @property
    def text(self) -> str:
        if not self.args:
            return self.name
        parts = [a.text for a in self.args]
        return f"{self.name}({','.join(parts)})"

    def free_vars(self) -> set[str]:
        out: set[str] = set()
        for a in self.args:
            if isinstance(a, LTApp):
                out |= a.free_vars()
            elif a.kind == "var":
                out.add(a.value)
        return out


@dataclass(frozen=True)
class LTAtom:
    app: LTApp

    @property
    def text(self) -> str:
        return self.app.text

    def free_vars(self) -> set[str]:
        return self.app.free_vars()


@dataclass(frozen=True)
class LTEq:
    app: LTApp
    value: Arg

    @property
    def text(self) -> str:
        return f"{self.app.text} = {self.value.text}"

    def free_vars(self) -> set[str]:
        out = self.app.free_vars()
        if self.value.kind == "var":
            out.add(self.value.value)
        return out


@dataclass(frozen=True)
class LTConn:
    op: str
    operands: tuple["LogicalTerm", ...]

    @property
    def text(self) -> str:
        return f"{self.op}({', '.join(o.text for o in self.operands)})"

    def free_vars(self) -> set[str]:
        out: set[str] = set()
        for o in self.operands:
            out |= o.free_vars()
        return out


@dataclass(frozen=True)
class LTQuant:
    quantifier: str
    var: str
    type_name: str
    body: "LogicalTerm"

    @property
    def text(self) -> str:
        return f"{self.quantifier} {self.var}: {self.type_name} . {self.body.text}"

    def free_vars(self) -> set[str]:
        return self.body.free_vars() - {self.var}


LogicalTerm = Union[LTAtom, LTEq, LTConn, LTQuant]


# ---------------------------------------------------------------------------
# evidence bundle


@dataclass(frozen=True)
class Evidence:
    """Everything an evidence file contributes to one scenario."""

    findings: tuple[Finding, ...] = ()
    candidates: tuple[tuple[str, tuple[str, ...]], ...] = ()  # (instance text, ids)
    entities: tuple[tuple[str, str], ...] = ()

    def candidate_map(self) -> dict[str, tuple[str, ...]]:
        return dict(self.candidates)


# ---------------------------------------------------------------------------
# parser core


class _Parser:
    def __init__(self, src: SourceText):
        self.src = src
        self.tokens = tokenize(src)
        self.pos = 0
        self.diags: list[ParseDiagnostic] = []

    # -- token helpers ------------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.type != "EOF":
            self.pos += 1
        return tok

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok.type == "PUNCT" and tok.text == text

    def at_word(self, text: str) -> bool:
        tok = self.peek()
        return tok.type in ("VAR", "NAME") and tok.text == text

    def eat_punct(self, text: str) -> Token:
        if not self.at_punct(text):
            self.fail(f"expected {text!r}", self.peek())
        return self.next()

    def eat_word(self, text: str) -> Token:
        if not self.at_word(text):
            self.fail(f"expected keyword {text!r}", self.peek())
        return self.next()

    def eat_type(self, ttype: str, what: str) -> Token:
        tok = self.peek()
        if tok.type != ttype:
            self.fail(f"expected {what}", tok)
        return self.next()

    def skip_commas(self) -> None:
        while self.at_punct(","):
            self.next()

    def fail(self, message: str, tok: Token):
        self.diags.append(ParseDiagnostic(
            "error", message, tok.line, tok.col, tok.end_col, self.src.origin))
        raise ParseError(self.diags)

    def error(self, message: str, tok: Token) -> None:
        """Record a resolution error without aborting the current pass."""
        self.diags.append(ParseDiagnostic(
            "error", message, tok.line, tok.col, tok.end_col, self.src.origin))

    # -- shared pieces ------------------------------------------------------

    def parse_arg(self) -> Arg:
        tok = self.peek()
        if tok.type == "IDENT":
            self.next()
            return Arg.ident(tok.text)
        if tok.type == "VAR":
            self.next()
            return Arg.var(tok.text)
        if tok.type == "NAME":
            if tok.text == "Prev":
                self.next()
                self.eat_punct("(")
                inner = self.eat_type("VAR", "a variable inside Prev()")
                self.eat_punct(")")
                return Arg.prev(inner.text)
            self.next()
            return Arg.name(tok.text)
        self.fail("expected an argument (identifier, variable or name)", tok)

    def parse_rv_term(self) -> RVTerm:
        name = self.eat_type("NAME", "an RV name")
        args: list[Arg] = []
        if self.at_punct("("):
            self.next()
            while not self.at_punct(")"):
                args.append(self.parse_arg())
                self.skip_commas()
            self.eat_punct(")")
        return RVTerm(name.text, tuple(args))

    def parse_pattern(self, closing: str = ")") -> Pattern:
        constraints: list[tuple[str, Arg]] = []
        while not self.at_punct(closing) and not self.at_punct(","):
            name = self.eat_type("NAME", "a parent RV name in a pattern")
            self.eat_punct("=")
            constraints.append((name.text, self.parse_arg()))
            if self.at_punct("&"):
                self.next()
                continue
            break
        return Pattern(tuple(constraints))

    def parse_number(self) -> tuple[float, str]:
        tok = self.eat_type("NUMBER", "a number")
        return float(tok.text), tok.text

    def parse_int(self, what: str) -> int:
        tok = self.eat_type("NUMBER", what)
        if "." in tok.text:
            self.fail(f"expected an integer for {what}", tok)
        return int(tok.text)

    def parse_entities(self) -> list[tuple[str, str]]:
        self.eat_word("entities")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            type_name = self.eat_type("NAME", "a type name").text
            self.eat_punct(":")
            if self.peek().type != "IDENT":
                self.fail("expected at least one identifier", self.peek())
            while self.peek().type == "IDENT":
                out.append((self.next().text, type_name))
                self.skip_commas()
        self.eat_punct("}")
        return out


# ---------------------------------------------------------------------------
# theory files


class _TheoryParser(_Parser):
    def parse(self) -> MTheory:
        self.eat_word("theory")
        name = self.eat_type("NAME", "a theory name").text
        types: list[str] = []
        entities: list[tuple[str, str]] = []
        mfrags: list[MFrag] = []
        while self.peek().type != "EOF":
            if self.at_word("types"):
                types.extend(self.parse_types())
            elif self.at_word("entities"):
                entities.extend(self.parse_entities())
            elif self.at_word("mfrag"):
                mfrags.append(self.parse_mfrag())
            else:
                self.fail("expected a types, entities or mfrag block", self.peek())
        theory = MTheory(name, tuple(types), tuple(entities), tuple(mfrags))
        self.resolve(theory)
        if self.diags:
            raise ParseError(self.diags)
        return theory

    def parse_types(self) -> list[str]:
        self.eat_word("types")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            out.append(self.eat_type("NAME", "a type name").text)
            self.skip_commas()
        self.eat_punct("}")
        return out

    # -- mfrag --------------------------------------------------------------

    def parse_mfrag(self) -> MFrag:
        self.eat_word("mfrag")
        name = self.eat_type("NAME", "an MFrag name").text
        self.eat_punct("{")
        vars_: list[tuple[str, str]] = []
        context: list[ContextTerm] = []
        inputs: list[RVTerm] = []
        residents: list[ResidentDecl] = []
        arcs: list[tuple[RVTerm, RVTerm]] = []
        locals_: dict[str, object] = {}
        while not self.at_punct("}"):
            if self.at_word("vars"):
                vars_.extend(self.parse_vars())
            elif self.at_word("context"):
                context.extend(self.parse_context_block())
            elif self.at_word("input"):
                inputs.extend(self.parse_input_block())
            elif self.at_word("resident"):
                residents.extend(self.parse_resident_block())
            elif self.at_word("graph"):
                arcs.extend(self.parse_graph_block())
            elif self.at_word("local"):
                rv, decl = self.parse_local_block()
                locals_[rv] = decl
            elif self.at_word("logic"):
                decl, local = self.parse_logic_decl()
                residents.append(decl)
                locals_[decl.term.name] = local
            else:
                self.fail("expected vars/context/input/resident/graph/local/logic",
                          self.peek())
        self.eat_punct("}")
        return MFrag(name, tuple(vars_), tuple(context), tuple(inputs),
                     tuple(residents), tuple(arcs), locals_)

    def parse_vars(self) -> list[tuple[str, str]]:
        self.eat_word("vars")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            var = self.eat_type("VAR", "a variable name")
            if var.text in KEYWORDS:
                self.fail(f"{var.text!r} is a reserved word", var)
            self.eat_punct(":")
            out.append((var.text, self.eat_type("NAME", "a type name").text))
            self.skip_commas()
        self.eat_punct("}")
        return out

    def parse_context_block(self) -> list[ContextTerm]:
        self.eat_word("context")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            out.append(self.parse_context_term())
            self.skip_commas()
        self.eat_punct("}")
        return out

    def parse_context_term(self) -> ContextTerm:
        tok = self.peek()
        if tok.type == "VAR" and tok.text in QUANTIFIER_KEYWORDS:
            self.next()
            var = self.eat_type("VAR", "a bound variable").text
            self.eat_punct(":")
            type_name = self.eat_type("NAME", "a type name").text
            self.eat_punct(".")
            return QuantifiedContext(tok.text, var, type_name, self.parse_context_term())
        if tok.type == "VAR" and tok.text in CONNECTIVE_KEYWORDS:
            self.next()
            self.eat_punct("(")
            operands = []
            while not self.at_punct(")"):
                operands.append(self.parse_context_term())
                self.skip_commas()
            self.eat_punct(")")
            if tok.text == "not" and len(operands) != 1:
                self.fail("not(...) takes exactly one operand", tok)
            return ConnectiveContext(tok.text, tuple(operands))
        if tok.type in ("VAR", "IDENT"):
            lhs = self.parse_arg()
            negated = self.at_punct("!=")
            if not negated and not self.at_punct("="):
                self.fail("expected = or != after a bare argument", self.peek())
            self.next()
            return LexEqContext(lhs, self.parse_arg(), negated)
        term = self.parse_rv_term()
        if self.at_punct("=") or self.at_punct("!="):
            negated = self.next().text == "!="
            return EqContext(term, self.parse_arg(), negated)
        return term

    def parse_input_block(self) -> list[RVTerm]:
        self.eat_word("input")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            out.append(self.parse_rv_term())
            self.skip_commas()
        self.eat_punct("}")
        return out

    def parse_resident_block(self) -> list[ResidentDecl]:
        self.eat_word("resident")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            term = self.parse_rv_term()
            self.eat_punct(":")
            out.append(ResidentDecl(term, self.parse_states()))
            self.skip_commas()
        self.eat_punct("}")
        return out

    def parse_states(self) -> StateSpace:
        if self.at_word("bool"):
            self.next()
            return StateSpace.boolean()
        if self.at_word("ref"):
            self.next()
            return StateSpace.ref(self.eat_type("NAME", "a type name").text)
        self.eat_punct("{")
        values = []
        while not self.at_punct("}"):
            tok = self.eat_type("NAME", "a state name")
            if tok.text == ABSURD:
                self.fail("Absurd is implicit and may not be declared", tok)
            values.append(tok.text)
            self.skip_commas()
        self.eat_punct("}")
        if not values:
            self.fail("state list may not be empty", self.peek())
        return StateSpace.enum(values)

    def parse_graph_block(self) -> list[tuple[RVTerm, RVTerm]]:
        self.eat_word("graph")
        self.eat_punct("{")
        out = []
        while not self.at_punct("}"):
            parent = self.parse_rv_term()
            self.eat_punct("->")
            out.append((parent, self.parse_rv_term()))
            self.skip_commas()
        self.eat_punct("}")
        return out

    # -- locals --------------------------------------------------------------

    def parse_local_block(self) -> tuple[str, object]:
        self.eat_word("local")
        rv = self.eat_type("NAME", "a resident RV name").text
        self.eat_punct("{")
        if self.at_word("uniform"):
            self.next()
            self.eat_punct("}")
            return rv, UniformLocal()
        clauses: list[Clause] = []
        default: Optional[tuple[Assignment, ...]] = None
        while not self.at_punct("}"):
            if self.at_word("when"):
                self.next()
                guard = self.parse_guard()
                clauses.append(Clause(guard, self.parse_assignment_block()))
            elif self.at_word("default"):
                tok = self.next()
                if default is not None:
                    self.fail("duplicate default clause", tok)
                default = self.parse_assignment_block()
            else:
                self.fail("expected 'when' or 'default'", self.peek())
        self.eat_punct("}")
        if default is None:
            self.fail(f"local {rv} is missing its default clause", self.peek())
        return rv, LocalExpression(tuple(clauses), default)

    def parse_guard(self) -> Guard:
        tok = self.peek()
        if tok.type == "VAR" and tok.text in ("and", "or"):
            self.next()
            self.eat_punct("(")
            operands = []
            while not self.at_punct(")"):
                operands.append(self.parse_guard())
                self.skip_commas()
            self.eat_punct(")")
            return GuardBool(tok.text, tuple(operands))
        if tok.type == "VAR" and tok.text == "not":
            self.next()
            self.eat_punct("(")
            inner = self.parse_guard()
            self.eat_punct(")")
            return GuardNot(inner)
        self.eat_word("count")
        self.eat_punct("(")
        pattern = Pattern() if self.at_punct(")") else self.parse_pattern()
        self.eat_punct(")")
        op_tok = self.peek()
        if op_tok.type == "PUNCT" and op_tok.text in ("=", "!=", "<", "<=", ">", ">="):
            self.next()
        else:
            self.fail("expected a comparison operator", op_tok)
        return CountCmp(pattern, op_tok.text, self.parse_int("a count threshold"))

    def parse_assignment_block(self) -> tuple[Assignment, ...]:
        self.eat_punct("{")
        out: list[Assignment] = []
        while not self.at_punct("}"):
            state = self.eat_type("NAME", "a state name").text
            self.eat_punct(":")
            out.append(Assignment(state, self.parse_prob_term()))
            self.skip_commas()
        self.eat_punct("}")
        if not out:
            self.fail("empty distribution", self.peek())
        return tuple(out)

    def parse_prob_term(self):
        if self.at_punct("*"):
            self.next()
            return None  # remainder marker
        if self.at_word("min"):
            self.next()
            self.eat_punct("(")
            cap, cap_lit = self.parse_number()
            self.eat_punct(",")
            base, base_lit = self.parse_number()
            sign = 1.0
            if self.at_punct("+"):
                self.next()
            elif self.at_punct("-"):
                self.next()
                sign = -1.0
            else:
                self.fail("expected + or - in a saturated term", self.peek())
            slope, slope_lit = self.parse_number()
            self.eat_punct("*")
            self.eat_word("sat")
            self.eat_punct("(")
            pattern = Pattern() if self.at_punct(",") else self.parse_pattern(closing=",")
            self.eat_punct(",")
            bound = self.parse_int("a saturation bound")
            self.eat_punct(")")
            self.eat_punct(")")
            lit = (cap_lit, base_lit, ("-" if sign < 0 else "") + slope_lit)
            return SatLinearTerm(cap, base, sign * slope, pattern, bound, lit)
        value, literal = self.parse_number()
        return ConstTerm(value, literal)

    def parse_logic_decl(self) -> tuple[ResidentDecl, LogicLocal]:
        self.eat_word("logic")
        term = self.parse_rv_term()
        self.eat_punct("=")
        body = self.parse_logical_term()
        return ResidentDecl(term, StateSpace.boolean()), LogicLocal(body)

    # -- logical terms -------------------------------------------------------

    def parse_logical_term(self) -> LogicalTerm:
        tok = self.peek()
        if tok.type == "VAR" and tok.text in QUANTIFIER_KEYWORDS:
            self.next()
            var = self.eat_type("VAR", "a bound variable").text
            self.eat_punct(":")
            type_name = self.eat_type("NAME", "a type name").text
            self.eat_punct(".")
            return LTQuant(tok.text, var, type_name, self.parse_logical_term())
        if tok.type == "VAR" and tok.text in CONNECTIVE_KEYWORDS:
            self.next()
            self.eat_punct("(")
            operands = []
            while not self.at_punct(")"):
                operands.append(self.parse_logical_term())
                self.skip_commas()
            self.eat_punct(")")
            if tok.text == "not" and len(operands) != 1:
                self.fail("not(...) takes exactly one operand", tok)
            if tok.text != "not" and len(operands) < 2:
                self.fail(f"{tok.text}(...) needs at least two operands", tok)
            return LTConn(tok.text, tuple(operands))
        app = self.parse_lt_app()
        if self.at_punct("="):
            self.next()
            return LTEq(app, self.parse_arg())
        return LTAtom(app)

    def parse_lt_app(self) -> LTApp:
        name = self.eat_type("NAME", "an RV name")
        args: list[Union[Arg, LTApp]] = []
        if self.at_punct("("):
            self.next()
            while not self.at_punct(")"):
                tok = self.peek()
                if tok.type == "NAME" and self.peek(1).type == "PUNCT" \
                        and self.peek(1).text == "(" and tok.text != "Prev":
                    args.append(self.parse_lt_app())
                else:
                    args.append(self.parse_arg())
                self.skip_commas()
            self.eat_punct(")")
        return LTApp(name.text, tuple(args))

    # -- name resolution ------------------------------------------------------

    def resolve(self, theory: MTheory) -> None:
        tok0 = self.tokens[0]
        if len(set(theory.types)) != len(theory.types):
            self.error("duplicate type declaration", tok0)
        seen_ids: set[str] = set()
        for ident, type_name in theory.entities:
            if ident in seen_ids:
                self.error(f"identifier {ident} registered twice", tok0)
            seen_ids.add(ident)
            if type_name not in theory.types:
                self.error(f"entity {ident} uses undeclared type {type_name}", tok0)
        names = [f.name for f in theory.mfrags]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            self.error(f"duplicate MFrag names: {', '.join(dupes)}", tok0)
        for frag in theory.mfrags:
            self.resolve_mfrag(theory, frag, tok0)

    def resolve_mfrag(self, theory: MTheory, frag: MFrag, tok0: Token) -> None:
        var_names = [v for v, _ in frag.vars]
        if len(set(var_names)) != len(var_names):
            self.error(f"mfrag {frag.name}: duplicate variable declaration", tok0)
        for _, t in frag.vars:
            if t not in theory.types:
                self.error(f"mfrag {frag.name}: undeclared type {t}", tok0)
        declared = set(var_names)

        def check_args(term: RVTerm, where: str):
            for a in term.args:
                if a.kind in ("var", "prev") and a.value not in declared:
                    self.error(
                        f"mfrag {frag.name}: {where} {term.text} uses undeclared "
                        f"variable {a.value}", tok0)

        local_terms = {t.text for t in frag.inputs}
        for decl in frag.residents:
            term = decl.term
            if term.name in RESERVED_RV_NAMES:
                self.error(f"mfrag {frag.name}: {term.name} is a builtin RV name", tok0)
            for a in term.args:
                if a.kind != "var":
                    self.error(
                        f"mfrag {frag.name}: resident {term.text} arguments must "
                        f"be plain variables", tok0)
            arg_vars = [a.value for a in term.args if a.kind == "var"]
            if len(set(arg_vars)) != len(arg_vars):
                self.error(
                    f"mfrag {frag.name}: resident {term.text} repeats a variable", tok0)
            check_args(term, "resident")
            local_terms.add(term.text)
        for term in frag.inputs:
            check_args(term, "input")

        def walk_context(ct: ContextTerm):
            if isinstance(ct, RVTerm):
                check_args(ct, "context")
            elif isinstance(ct, EqContext):
                check_args(ct.rv, "context")
                if ct.rhs.kind in ("var", "prev") and ct.rhs.value not in declared:
                    self.error(
                        f"mfrag {frag.name}: context {ct.text} uses undeclared "
                        f"variable {ct.rhs.value}", tok0)
            elif isinstance(ct, LexEqContext):
                for side in (ct.lhs, ct.rhs):
                    if side.kind in ("var", "prev") and side.value not in declared:
                        self.error(
                            f"mfrag {frag.name}: context {ct.text} uses undeclared "
                            f"variable {side.value}", tok0)
            elif isinstance(ct, ConnectiveContext):
                for o in ct.operands:
                    walk_context(o)
            elif isinstance(ct, QuantifiedContext):
                declared.add(ct.var)
                walk_context(ct.body)
                declared.discard(ct.var)

        for ct in frag.context:
            walk_context(ct)

        resident_names = set(frag.resident_names())
        for parent, child in frag.arcs:
            if parent.text not in local_terms:
                self.error(
                    f"mfrag {frag.name}: arc parent {parent.text} is not a "
                    f"declared input or resident term", tok0)
            if child.name not in resident_names:
                self.error(
                    f"mfrag {frag.name}: arc child {child.text} is not a "
                    f"resident of this fragment", tok0)
        for rv in frag.locals_:
            if rv not in resident_names:
                self.error(
                    f"mfrag {frag.name}: local for {rv}, which is not resident here",
                    tok0)
        for decl in frag.residents:
            if decl.term.name not in frag.locals_:
                self.error(
                    f"mfrag {frag.name}: resident {decl.term.name} has no local "
                    f"expression", tok0)


def parse_mtheory(src: Union[SourceText, str]) -> MTheory:
    """Parse a ``.mtheory`` file; raises ParseError carrying all diagnostics."""
    if isinstance(src, str):
        src = SourceText(src)
    return _TheoryParser(src).parse()


# ---------------------------------------------------------------------------
# evidence files


class _EvidenceParser(_Parser):
    def __init__(self, src: SourceText, theory: MTheory):
        super().__init__(src)
        self.theory = theory

    def parse(self) -> Evidence:
        findings: list[Finding] = []
        candidates: list[tuple[str, tuple[str, ...]]] = []
        entities: list[tuple[str, str]] = []
        while self.peek().type != "EOF":
            if self.at_word("entities"):
                entities.extend(self.parse_entities())
            elif self.at_word("candidates"):
                candidates.append(self.parse_candidates())
            else:
                findings.append(self.parse_finding())
        evidence = Evidence(tuple(findings), tuple(candidates), tuple(entities))
        self.check(evidence)
        if self.diags:
            raise ParseError(self.diags)
        return evidence

    def parse_ground_instance(self) -> tuple[RVInstance, Token]:
        name = self.eat_type("NAME", "an RV name")
        args: list[str] = []
        if self.at_punct("("):
            self.next()
            while not self.at_punct(")"):
                args.append(self.eat_type("IDENT", "a unique identifier").text)
                self.skip_commas()
            self.eat_punct(")")
        return RVInstance(name.text, tuple(args)), name

    def parse_candidates(self) -> tuple[str, tuple[str, ...]]:
        self.eat_word("candidates")
        inst, _ = self.parse_ground_instance()
        self.eat_punct(":")
        ids = []
        while self.peek().type == "IDENT":
            ids.append(self.next().text)
            self.skip_commas()
        if not ids:
            self.fail("candidates list may not be empty", self.peek())
        return inst.text, tuple(ids)

    def parse_finding(self) -> Finding:
        inst, _ = self.parse_ground_instance()
        self.eat_punct("=")
        tok = self.peek()
        if tok.type in ("NAME", "IDENT"):
            self.next()
        else:
            self.fail("expected a state or identifier value", tok)
        return Finding(inst, tok.text)

    def check(self, evidence: Evidence) -> None:
        tok0 = self.tokens[0]
        templates = self.theory.templates()
        try:
            registry = self.theory.registry(evidence.entities)
        except MebnError as e:
            self.error(str(e), tok0)
            return
        candidate_map = evidence.candidate_map()

        def check_instance(inst: RVInstance) -> Optional[StateSpace]:
            tpl = templates.get(inst.name)
            if tpl is None:
                self.error(f"unknown RV {inst.name}", tok0)
                return None
            if len(inst.args) != tpl.arity:
                self.error(f"{inst.text}: expected {tpl.arity} arguments", tok0)
                return None
            for ident, (_, ptype) in zip(inst.args, tpl.params):
                actual = registry.type_of(ident)
                if actual is None:
                    self.error(f"{inst.text}: unregistered identifier {ident}", tok0)
                elif ptype and actual != ptype:
                    self.error(
                        f"{inst.text}: {ident} is a {actual}, expected {ptype}", tok0)
            return tpl.states

        seen: dict[str, str] = {}
        for finding in evidence.findings:
            states = check_instance(finding.subject)
            if states is not None:
                allowed = states.with_absurd(
                    registry, candidates=candidate_map.get(finding.subject.text))
                if finding.value not in allowed:
                    self.error(
                        f"{finding.subject.text}: value {finding.value} is not "
                        f"one of {', '.join(allowed)}", tok0)
            prev = seen.get(finding.subject.text)
            if prev is not None and prev != finding.value:
                self.error(
                    f"conflicting findings for {finding.subject.text}: "
                    f"{prev} vs {finding.value}", tok0)
            seen[finding.subject.text] = finding.value
        for inst_text, ids in evidence.candidates:
            for ident in ids:
                if registry.type_of(ident) is None:
                    self.error(
                        f"candidates for {inst_text}: unregistered identifier {ident}",
                        tok0)


def parse_evidence(src: Union[SourceText, str], theory: MTheory) -> Evidence:
    """Parse a ``.mev`` evidence file against a theory's vocabulary."""
    if isinstance(src, str):
        src = SourceText(src)
    return _EvidenceParser(src, theory).parse()


# ---------------------------------------------------------------------------
# query target expressions


def parse_target(text: str, theory: Optional[MTheory] = None) -> LogicalTerm:
    """Parse one query target: a ground RV term or a logical combination."""
    src = SourceText(text, "<target>")
    p = _TheoryParser(src)
    term = p.parse_logical_term()
    tok = p.peek()
    if tok.type != "EOF":
        p.fail("trailing input after target expression", tok)
    free = term.free_vars()
    if free:
        p.fail(f"target has unbound variables: {', '.join(sorted(free))}", p.tokens[0])
    if theory is not None:
        templates = theory.templates()

        def walk_app(app: LTApp):
            if app.name not in templates and app.name not in RESERVED_RV_NAMES:
                p.error(f"unknown RV {app.name}", p.tokens[0])
            for a in app.args:
                if isinstance(a, LTApp):
                    walk_app(a)

        def walk(t: LogicalTerm):
            if isinstance(t, LTAtom):
                walk_app(t.app)
            elif isinstance(t, LTEq):
                walk_app(t.app)
            elif isinstance(t, LTConn):
                for o in t.operands:
                    walk(o)
            elif isinstance(t, LTQuant):
                if t.type_name not in theory.types:
                    p.error(f"unknown type {t.type_name}", p.tokens[0])
                walk(t.body)

        walk(term)
        if p.diags:
            raise ParseError(p.diags)
    return term
