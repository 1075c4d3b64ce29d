"""The code-formatted plan language.

A plan is a sequence of one-line typed assignments::

    Thought1: str = "An atomic question, no need to decompose. Search directly."
    Sub_Question_2: str = f"Who succeeded {Ans_1}?"
    Info_1: str = Search(query = Sub_Question_1, thought = Thought1)
    Final_Answer: str = Finish_The_Plan(Answer = Ans_1)

This is a closed fragment, not Python: the right-hand side is a string
literal, an f-string with bare ``{Var}`` references, or a call to one of six
builtins with keyword arguments. Lines starting with ``#`` are comments.
Prose before the first statement and anything after ``Finish_The_Plan`` is
skipped with a warning.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

BUILTINS: dict[str, tuple[str, ...]] = {
    "Search": ("query", "thought"),
    "Get_Answer": ("query", "info"),
    "Compare": ("Original_Query", "Subquestions", "Answers"),
    "Intersection": ("Answer1", "Answer2"),
    "Union": ("Answer1", "Answer2"),
    "Finish_The_Plan": ("Answer",),
}
LIST_KWARGS = {("Compare", "Subquestions"), ("Compare", "Answers")}
FINISH = "Finish_The_Plan"
# names bound by the surrounding prompt rather than by the plan itself
DEFAULT_INPUTS = ("Original_Question",)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_HEAD = re.compile(
    r"\s*(?P<var>[A-Za-z_][A-Za-z0-9_]*)\s*(?::\s*(?P<ann>[A-Za-z_][A-Za-z0-9_\[\], ]*?)\s*)?=(?!=)\s*"
)
_ESCAPES = {"\\": "\\", '"': '"', "'": "'", "n": "\n", "t": "\t"}


@dataclass(frozen=True)
class VarRef:
    name: str


Arg = Union[VarRef, str, tuple[VarRef, ...]]


@dataclass(frozen=True)
class AssignLiteral:
    var: str
    text: str
    line: int = field(default=0, compare=False)

    kind = "literal"

    def refs(self) -> list[str]:
        return []


@dataclass(frozen=True)
class AssignFString:
    var: str
    parts: tuple[Union[str, VarRef], ...]
    line: int = field(default=0, compare=False)

    kind = "fstring"

    def refs(self) -> list[str]:
        return [p.name for p in self.parts if isinstance(p, VarRef)]


@dataclass(frozen=True)
class AssignCall:
    var: str
    builtin: str
    kwargs: tuple[tuple[str, Arg], ...]
    line: int = field(default=0, compare=False)

    kind = "call"

    def arg(self, name: str) -> Arg:
        return dict(self.kwargs)[name]

    def refs(self) -> list[str]:
        out = []
        for _, value in self.kwargs:
            if isinstance(value, VarRef):
                out.append(value.name)
            elif isinstance(value, tuple):
                out.extend(v.name for v in value)
        return out


Statement = Union[AssignLiteral, AssignFString, AssignCall]


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    line: int | None = None
    column: int | None = None
    var: str | None = None

    def __str__(self) -> str:
        where = ""
        if self.line is not None:
            where = f"line {self.line}" + (f", col {self.column}" if self.column is not None else "") + ": "
        return f"{self.severity}: {where}{self.message}"


@dataclass(frozen=True)
class PlanProgram:
    statements: tuple[Statement, ...]
    warnings: tuple[Diagnostic, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.statements)

    @property
    def spans(self) -> dict[int, int]:
        """Statement index -> 1-based source line."""
        return {i: s.line for i, s in enumerate(self.statements)}

    def variables(self) -> list[str]:
        return [s.var for s in self.statements]


class PlanSyntaxError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]) -> None:
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class _LineError(Exception):
    def __init__(self, message: str, column: int) -> None:
        super().__init__(message)
        self.column = column


# -- scanning -----------------------------------------------------------------------


def _skip_ws(s: str, i: int) -> int:
    while i < len(s) and s[i] in " \t":
        i += 1
    return i


def _read_string(s: str, i: int) -> tuple[str, int]:
    """Read a quoted literal starting at ``s[i]``; return (raw text, index after)."""
    quote = s[i]
    out = []
    j = i + 1
    while j < len(s):
        c = s[j]
        if c == "\\" and j + 1 < len(s):
            out.append(_ESCAPES.get(s[j + 1], "\\" + s[j + 1]))
            j += 2
            continue
        if c == quote:
            return "".join(out), j + 1
        out.append(c)
        j += 1
    raise _LineError("unterminated string", i + 1)


def _fstring_parts(text: str, col: int) -> tuple[Union[str, VarRef], ...]:
    parts: list[Union[str, VarRef]] = []
    buf: list[str] = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "{" and text.startswith("{{", i):
            buf.append("{")
            i += 2
        elif c == "}" and text.startswith("}}", i):
            buf.append("}")
            i += 2
        elif c == "{":
            end = text.find("}", i)
            name = text[i + 1:end].strip() if end != -1 else ""
            if end == -1 or not _IDENT.fullmatch(name):
                raise _LineError("f-string placeholders must be simple {Var} references", col + i)
            if buf:
                parts.append("".join(buf))
                buf = []
            parts.append(VarRef(name))
            i = end + 1
        elif c == "}":
            raise _LineError("single '}' in f-string", col + i)
        else:
            buf.append(c)
            i += 1
    if buf:
        parts.append("".join(buf))
    return tuple(parts)


def _expect_end(s: str, i: int) -> None:
    i = _skip_ws(s, i)
    if i < len(s) and s[i] != "#":
        raise _LineError(f"unexpected text {s[i:i + 20]!r}", i + 1)


def _read_arg(s: str, i: int) -> tuple[Arg, int]:
    if i >= len(s):
        raise _LineError("missing argument", i + 1)
    if s[i] in "\"'":
        return _read_string(s, i)
    if s[i] == "[":
        items: list[VarRef] = []
        j = _skip_ws(s, i + 1)
        while True:
            if j < len(s) and s[j] == "]":
                return tuple(items), j + 1
            m = _IDENT.match(s, j)
            if not m:
                raise _LineError("list items must be variable names", j + 1)
            items.append(VarRef(m.group()))
            j = _skip_ws(s, m.end())
            if j < len(s) and s[j] == ",":
                j = _skip_ws(s, j + 1)
            elif not (j < len(s) and s[j] == "]"):
                raise _LineError("expected ',' or ']'", j + 1)
    m = _IDENT.match(s, i)
    if not m:
        raise _LineError("expected a variable, string or list", i + 1)
    return VarRef(m.group()), m.end()


def _parse_call(var: str, name: str, s: str, i: int, lineno: int) -> AssignCall:
    if name not in BUILTINS:
        raise _LineError(f"unknown builtin {name!r}", i + 1 - len(name))
    sig = BUILTINS[name]
    j = _skip_ws(s, i + 1)  # past '('
    kwargs: list[tuple[str, Arg]] = []
    while True:
        if j < len(s) and s[j] == ")":
            j += 1
            break
        m = _IDENT.match(s, j)
        if not m:
            raise _LineError("expected keyword argument", j + 1)
        kw, kw_col = m.group(), j + 1
        j = _skip_ws(s, m.end())
        if j >= len(s) or s[j] != "=":
            raise _LineError(f"{name} takes keyword arguments only", kw_col)
        j = _skip_ws(s, j + 1)
        arg, j = _read_arg(s, j)
        if kw not in sig:
            raise _LineError(f"bad keyword {kw!r} for {name}; expected {', '.join(sig)}", kw_col)
        if any(k == kw for k, _ in kwargs):
            raise _LineError(f"duplicate keyword {kw!r}", kw_col)
        is_list = isinstance(arg, tuple)
        if is_list != ((name, kw) in LIST_KWARGS):
            what = "a list of variables" if not is_list else "not a list"
            raise _LineError(f"{name}({kw}=...) must be {what}", kw_col)
        kwargs.append((kw, arg))
        j = _skip_ws(s, j)
        if j < len(s) and s[j] == ",":
            j = _skip_ws(s, j + 1)
        elif not (j < len(s) and s[j] == ")"):
            raise _LineError("expected ',' or ')'" if j < len(s) else "unclosed call", j + 1)
    missing = [k for k in sig if k not in dict(kwargs)]
    if missing:
        raise _LineError(f"{name} missing keyword(s) {', '.join(missing)}", i + 1)
    _expect_end(s, j)
    return AssignCall(var, name, tuple(kwargs), lineno)


def _parse_line(s: str, lineno: int) -> Statement:
    m = _HEAD.match(s)
    if not m:
        raise _LineError("expected 'Name: str = ...'", 1)
    var = m.group("var")
    i = m.end()
    if i >= len(s):
        raise _LineError("missing right-hand side", i + 1)
    if s[i] in "fF" and i + 1 < len(s) and s[i + 1] in "\"'":
        raw, end = _read_string(s, i + 1)
        _expect_end(s, end)
        return AssignFString(var, _fstring_parts(raw, i + 3), lineno)
    if s[i] in "\"'":
        text, end = _read_string(s, i)
        _expect_end(s, end)
        return AssignLiteral(var, text, lineno)
    cm = _IDENT.match(s, i)
    if cm:
        j = _skip_ws(s, cm.end())
        if j < len(s) and s[j] == "(":
            return _parse_call(var, cm.group(), s, j, lineno)
    raise _LineError("right-hand side must be a string, f-string or builtin call", i + 1)


def parse_plan(text: str) -> PlanProgram:
    """Parse plan text; raise :class:`PlanSyntaxError` listing every bad line."""
    statements: list[Statement] = []
    errors: list[Diagnostic] = []
    warnings: list[Diagnostic] = []
    skipped_prose = 0
    finished_at: int | None = None

    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if finished_at is not None:
            warnings.append(Diagnostic("warning", "ignored text after Finish_The_Plan", lineno))
            break
        try:
            stmt = _parse_line(line, lineno)
        except _LineError as exc:
            if not statements:
                skipped_prose += 1
                continue
            errors.append(Diagnostic("error", str(exc), lineno, exc.column))
            continue
        statements.append(stmt)
        if isinstance(stmt, AssignCall) and stmt.builtin == FINISH:
            finished_at = lineno

    if skipped_prose:
        warnings.insert(0, Diagnostic("warning", f"skipped {skipped_prose} line(s) of leading prose"))
    if errors:
        raise PlanSyntaxError(errors)
    if not statements:
        raise PlanSyntaxError([Diagnostic("error", "empty plan")])
    return PlanProgram(tuple(statements), tuple(warnings))


# -- static checks ---------------------------------------------------------------------


def validate(program: PlanProgram, inputs: Iterable[str] = DEFAULT_INPUTS) -> list[Diagnostic]:
    """Errors and warnings for a parsed program; an empty error list means runnable."""
    diags: list[Diagnostic] = []
    defined: dict[str, Statement] = {name: None for name in inputs}  # type: ignore[misc]
    used: set[str] = set()
    search_queries: dict[str, int] = {}
    stmts = program.statements

    for stmt in stmts:
        for ref in stmt.refs():
            if ref not in defined:
                diags.append(Diagnostic("error", f"{ref} used before assignment", stmt.line, var=ref))
            used.add(ref)
        if isinstance(stmt, AssignCall):
            if stmt.builtin == "Get_Answer":
                info = stmt.arg("info")
                src = defined.get(info.name) if isinstance(info, VarRef) else None
                if isinstance(info, VarRef) and info.name in defined and not (
                    isinstance(src, AssignCall) and src.builtin == "Search"
                ):
                    diags.append(Diagnostic(
                        "error", f"Get_Answer info {info.name} is not a Search result",
                        stmt.line, var=info.name,
                    ))
            if stmt.builtin in ("Intersection", "Union", FINISH, "Compare"):
                for ref in stmt.refs():
                    src = defined.get(ref)
                    if isinstance(src, AssignCall) and src.builtin == "Search":
                        diags.append(Diagnostic(
                            "error", f"{stmt.builtin} operand {ref} is retrieved information, not an answer",
                            stmt.line, var=ref,
                        ))
            if stmt.builtin == "Search":
                q = stmt.arg("query")
                key = q.name if isinstance(q, VarRef) else repr(q)
                search_queries[key] = search_queries.get(key, 0) + 1
                if search_queries[key] == 2:
                    diags.append(Diagnostic("warning", f"repeated Search for {key}", stmt.line, var=stmt.var))
        defined[stmt.var] = stmt

    finishes = [s for s in stmts if isinstance(s, AssignCall) and s.builtin == FINISH]
    if not finishes:
        diags.append(Diagnostic("error", "missing Finish_The_Plan"))
    elif len(finishes) > 1:
        diags.append(Diagnostic("error", "duplicated Finish_The_Plan", finishes[1].line))
    elif stmts[-1] is not finishes[0]:
        diags.append(Diagnostic("error", "Finish_The_Plan must be the last statement", finishes[0].line))

    finish_vars = {s.var for s in finishes}
    for stmt in stmts:
        if stmt.var in used or stmt.var in finish_vars:
            continue
        if isinstance(stmt, AssignCall) and stmt.builtin == "Search":
            diags.append(Diagnostic("warning", f"Search result {stmt.var} feeds nothing", stmt.line, var=stmt.var))
        else:
            diags.append(Diagnostic("warning", f"{stmt.var} is never used", stmt.line, var=stmt.var))
    return diags


def errors(diagnostics: Iterable[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diagnostics if d.severity == "error"]


def dependencies(program: PlanProgram) -> dict[str, set[str]]:
    """Map each assigned variable to the assigned variables its statement reads."""
    assigned = {s.var for s in program.statements}
    deps: dict[str, set[str]] = {}
    for stmt in program.statements:
        deps.setdefault(stmt.var, set()).update(r for r in stmt.refs() if r in assigned)
    return deps


# -- serialization ------------------------------------------------------------------------


def _arg_json(arg: Arg):
    if isinstance(arg, VarRef):
        return {"var": arg.name}
    if isinstance(arg, tuple):
        return [{"var": v.name} for v in arg]
    return {"literal": arg}


def program_to_dict(program: PlanProgram) -> dict:
    rows = []
    for s in program.statements:
        row: dict = {"var": s.var, "kind": s.kind, "line": s.line}
        if isinstance(s, AssignLiteral):
            row["text"] = s.text
        elif isinstance(s, AssignFString):
            row["parts"] = [{"var": p.name} if isinstance(p, VarRef) else {"literal": p} for p in s.parts]
        else:
            row["builtin"] = s.builtin
            row["kwargs"] = {k: _arg_json(v) for k, v in s.kwargs}
        rows.append(row)
    return {"statements": rows}


def quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _arg_source(arg: Arg) -> str:
    if isinstance(arg, VarRef):
        return arg.name
    if isinstance(arg, tuple):
        return "[" + ", ".join(v.name for v in arg) + "]"
    return quote(arg)


def statement_source(s: Statement) -> str:
    if isinstance(s, AssignLiteral):
        return f"{s.var}: str = {quote(s.text)}"
    if isinstance(s, AssignFString):
        body = "".join(
            "{" + p.name + "}" if isinstance(p, VarRef) else p.replace("{", "{{").replace("}", "}}")
            for p in s.parts
        )
        return f"{s.var}: str = f{quote(body)}"
    args = ", ".join(f"{k} = {_arg_source(v)}" for k, v in s.kwargs)
    return f"{s.var}: str = {s.builtin}({args})"


def to_source(program: PlanProgram) -> str:
    return "\n".join(statement_source(s) for s in program.statements) + "\n"
