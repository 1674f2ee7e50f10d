"""minemiter: the ordered-pass template engine that compiles IR to a script.

Templates are plain text with `{{ ... }}` directives and live one per file,
named `<letter><two digits><name>.template` (S70network.template runs in
pass S at order 70).  Emission walks pass letters A to Z; within a pass
every endpoint sees that pass's templates in ascending order until one
declares the node handled, so specific templates placed early shadow
generic fallbacks placed late.

The language is deliberately tiny: interpolation of `$n`/`$e`/`$c`
accessors, `if` on key presence, `range` over the node's edges, and the
`handled` directive.  Anything smarter belongs in the IR, where check can
validate it.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import ir
from .ir import Diagnostic, Experiment, IRError, Severity

TEMPLATE_NAME_RE = re.compile(r"^([A-Z])([0-9]{2})([A-Za-z0-9_-]+)\.template$")
SPECIAL_NAMES = ("_header.template", "_footer.template")

DIRECTIVE_RE = re.compile(r"\{\{(.*?)\}\}", re.DOTALL)


class TemplateError(IRError):
    """Template failed to load: bad file name or bad syntax."""


class RenderError(IRError):
    """Template body referenced something the context cannot supply."""


# --- AST ----------------------------------------------------------------------

@dataclass
class _Text:
    value: str


@dataclass
class _Interp:
    expr: str
    line: int


@dataclass
class _If:
    expr: str
    line: int
    children: list = field(default_factory=list)


@dataclass
class _Range:
    line: int
    children: list = field(default_factory=list)


@dataclass
class _Handled:
    pass


def _compile(body: str, origin: str) -> list:
    """Parse a template body; raises TemplateError naming origin and line."""
    root: list = []
    stack: list = [root]
    line = 1
    pos = 0
    for m in DIRECTIVE_RE.finditer(body):
        text = body[pos:m.start()]
        if text:
            stack[-1].append(_Text(text))
        line += text.count("\n")
        token = m.group(1).strip()
        where = f"{origin} line {line}"
        if token == "end":
            if len(stack) == 1:
                raise TemplateError(f"{where}: 'end' with no open block")
            stack.pop()
        elif token == "handled":
            stack[-1].append(_Handled())
        elif token.startswith("if"):
            expr = token[2:].strip()
            if not expr or not token.startswith("if "):
                raise TemplateError(f"{where}: 'if' needs an expression")
            node = _If(expr, line)
            stack[-1].append(node)
            stack.append(node.children)
        elif token.startswith("range"):
            var = token[5:].strip()
            if var != "$e":
                raise TemplateError(f"{where}: 'range' binds $e only, got {var!r}")
            node = _Range(line)
            stack[-1].append(node)
            stack.append(node.children)
        elif not token:
            raise TemplateError(f"{where}: empty directive")
        else:
            stack[-1].append(_Interp(token, line))
        line += m.group(0).count("\n")
        pos = m.end()
    if len(stack) != 1:
        raise TemplateError(f"{origin}: unclosed block at end of file")
    tail = body[pos:]
    if tail:
        root.append(_Text(tail))
    return root


# --- templates -----------------------------------------------------------------

@dataclass
class Template:
    pass_letter: str
    order: int
    name: str
    body: str
    filename: str
    ast: list = field(default_factory=list, repr=False)

    @classmethod
    def from_file(cls, filename: str, body: str) -> "Template":
        m = TEMPLATE_NAME_RE.match(filename)
        if not m:
            raise TemplateError(
                f"{filename}: template names must look like S70network.template "
                "(pass letter, two-digit order, name)"
            )
        letter, order, name = m.groups()
        return cls(letter, int(order), name, body, filename, _compile(body, filename))

    @property
    def sort_key(self):
        return (self.pass_letter, self.order, self.name)


@dataclass
class TemplateSet:
    """All templates of one directory: the ordered passes plus the
    once-rendered header/footer specials."""

    templates: list[Template] = field(default_factory=list)
    header: Template | None = None
    footer: Template | None = None

    def passes(self) -> list[str]:
        return sorted({t.pass_letter for t in self.templates})

    def for_pass(self, letter: str) -> list[Template]:
        return sorted((t for t in self.templates if t.pass_letter == letter),
                      key=lambda t: t.sort_key)


def _special(filename: str, body: str) -> Template:
    return Template("_", 0, filename.removesuffix(".template"), body, filename,
                    _compile(body, filename))


def load_templates(directory: str | Path) -> TemplateSet:
    """Load a template directory; misnamed .template files are fatal so a
    typoed pass prefix cannot silently drop a pass."""
    directory = Path(directory)
    ts = TemplateSet()
    for path in sorted(directory.iterdir()):
        if path.name == "_header.template":
            ts.header = _special(path.name, path.read_text("utf-8"))
        elif path.name == "_footer.template":
            ts.footer = _special(path.name, path.read_text("utf-8"))
        elif path.suffix == ".template":
            ts.templates.append(Template.from_file(path.name, path.read_text("utf-8")))
    ts.templates.sort(key=lambda t: t.sort_key)
    return ts


def load_default_templates() -> TemplateSet:
    """The bundled minimega-flavored container template set."""
    ts = TemplateSet()
    base = resources.files("netcarta").joinpath("templates")
    for entry in sorted(base.iterdir(), key=lambda e: e.name):
        if entry.name == "_header.template":
            ts.header = _special(entry.name, entry.read_text("utf-8"))
        elif entry.name == "_footer.template":
            ts.footer = _special(entry.name, entry.read_text("utf-8"))
        elif entry.name.endswith(".template"):
            ts.templates.append(Template.from_file(entry.name, entry.read_text("utf-8")))
    ts.templates.sort(key=lambda t: t.sort_key)
    return ts


# --- rendering -------------------------------------------------------------------

@dataclass
class RenderContext:
    """Read-only view a template evaluates against.  node is None when
    rendering the header/footer specials."""

    node: ir.Endpoint | None = None
    networks: dict[int, ir.NetworkNode] = field(default_factory=dict)
    config: dict[str, str] = field(default_factory=dict)


@dataclass
class RenderResult:
    text: str
    handled: bool = False


def _eval(expr: str, ctx: RenderContext, edge: ir.Edge | None, where: str) -> str:
    parts = expr.split(".")
    root = parts[0]
    if root == "$n":
        if ctx.node is None:
            raise RenderError(f"{where}: $n is not bound here")
        if parts[1:] == ["NID"]:
            return str(ctx.node.nid)
        if len(parts) == 3 and parts[1] == "D":
            return ctx.node.d.get(parts[2], "")
        raise RenderError(f"{where}: $n supports NID and D.<key>, got {expr!r}")
    if root == "$e":
        if edge is None:
            raise RenderError(f"{where}: $e outside a range block")
        if parts[1:] == ["N"]:
            return str(edge.n)
        if len(parts) == 3 and parts[1] == "D":
            return edge.d.get(parts[2], "")
        raise RenderError(f"{where}: $e supports N and D.<key>, got {expr!r}")
    if root == "$c":
        if len(parts) == 2:
            return ctx.config.get(parts[1], "")
        raise RenderError(f"{where}: $c takes a single key, got {expr!r}")
    raise RenderError(f"{where}: unknown accessor root {root!r} in {expr!r}")


class _Run:
    def __init__(self, template: Template, ctx: RenderContext):
        self.template = template
        self.ctx = ctx
        self.handled = False
        self.pieces: list[str] = []

    def walk(self, nodes: list, edge: ir.Edge | None) -> None:
        for node in nodes:
            if isinstance(node, _Text):
                self.pieces.append(node.value)
            elif isinstance(node, _Interp):
                self.pieces.append(self._eval(node.expr, edge, node.line))
            elif isinstance(node, _Handled):
                self.handled = True
            elif isinstance(node, _If):
                if self._eval(node.expr, edge, node.line) != "":
                    self.walk(node.children, edge)
            elif isinstance(node, _Range):
                if self.ctx.node is None:
                    raise RenderError(
                        f"{self.template.filename} line {node.line}: "
                        "range needs a node context")
                for e in self.ctx.node.edges:
                    self.walk(node.children, e)

    def _eval(self, expr: str, edge: ir.Edge | None, line: int) -> str:
        return _eval(expr, self.ctx, edge, f"{self.template.filename} line {line}")


def render(template: Template, ctx: RenderContext) -> RenderResult:
    """Evaluate one template; blank-only lines of the output are dropped."""
    run = _Run(template, ctx)
    run.walk(template.ast, None)
    raw = "".join(run.pieces)
    lines = [line for line in raw.split("\n") if line.strip()]
    return RenderResult(text="\n".join(lines), handled=run.handled)


# --- dedup ----------------------------------------------------------------------

def dedup(exp: Experiment, mode: str = "off") -> tuple[Experiment, list[Diagnostic]]:
    """Resolve duplicate addresses/hostnames on a working copy.

    drop    keep the lowest-nid endpoint of every duplicate group
    suffix  duplicate addresses still drop (two holders of one lease can't
            both be modeled), duplicate hostnames get -1, -2, ... suffixes
    off     identity (still a copy, so callers can mutate safely)
    """
    if mode not in ("drop", "suffix", "off"):
        raise ValueError(f"unknown dedup mode {mode!r}")
    work = copy.deepcopy(exp)
    diags: list[Diagnostic] = []
    if mode == "off":
        return work, diags

    ip_groups: dict[str, list[int]] = {}
    for ep in work.endpoints:
        seen: set[str] = set()
        for edge in ep.edges:
            value = edge.d.get(ir.KEY_IP)
            if value:
                seen.add(ir.ip_part(value))
        for addr in seen:
            ip_groups.setdefault(addr, []).append(ep.nid)

    doomed: set[int] = set()
    for addr in sorted(ip_groups):
        nids = sorted(ip_groups[addr])
        for nid in nids[1:]:
            if nid not in doomed:
                diags.append(Diagnostic(Severity.WARNING, "D-IP",
                                        f"endpoint shares address {addr} with "
                                        f"endpoint {nids[0]}, dropped", [nid]))
            doomed.add(nid)

    if mode == "drop":
        host_groups: dict[str, list[int]] = {}
        for ep in work.endpoints:
            name = ep.d.get(ir.KEY_HOSTNAME)
            if name:
                host_groups.setdefault(name, []).append(ep.nid)
        for name in sorted(host_groups):
            nids = sorted(host_groups[name])
            for nid in nids[1:]:
                if nid not in doomed:
                    diags.append(Diagnostic(Severity.WARNING, "D-HOST",
                                            f"endpoint shares hostname {name} with "
                                            f"endpoint {nids[0]}, dropped", [nid]))
                doomed.add(nid)
        work.endpoints = [ep for ep in work.endpoints if ep.nid not in doomed]
        return work, diags

    # suffix mode: apply the address drops, then rename hostname clashes.
    work.endpoints = [ep for ep in work.endpoints if ep.nid not in doomed]
    host_groups = {}
    for ep in work.endpoints:
        name = ep.d.get(ir.KEY_HOSTNAME)
        if name:
            host_groups.setdefault(name, []).append(ep)
    for name in sorted(host_groups):
        group = sorted(host_groups[name], key=lambda ep: ep.nid)
        for i, ep in enumerate(group[1:], start=1):
            new_name = f"{name}-{i}"
            ep.d[ir.KEY_HOSTNAME] = new_name
            diags.append(Diagnostic(Severity.WARNING, "D-HOST",
                                    f"hostname {name} renamed to {new_name}",
                                    [ep.nid]))
    return work, diags


# --- emission ---------------------------------------------------------------------

def emit(exp: Experiment, templates: TemplateSet, dedup_mode: str = "off"
         ) -> tuple[str, list[Diagnostic]]:
    """Compile the experiment into a script.

    The stored experiment is never modified: dedup runs on a copy, and a
    different dedup_mode or template set is how the operator tunes the
    generated model without touching the map.
    """
    work, diags = dedup(exp, dedup_mode)
    networks = {net.nid: net for net in work.networks}
    pieces: list[str] = []

    def run(template: Template, node: ir.Endpoint | None) -> RenderResult:
        ctx = RenderContext(node=node, networks=networks, config=work.config)
        try:
            return render(template, ctx)
        except RenderError as exc:
            if node is not None:
                raise RenderError(f"emit aborted on endpoint {node.nid}: {exc}") from exc
            raise

    if templates.header is not None:
        result = run(templates.header, None)
        if result.text:
            pieces.append(result.text)

    endpoints = sorted(work.endpoints, key=lambda ep: ep.nid)
    for letter in templates.passes():
        ordered = templates.for_pass(letter)
        for ep in endpoints:
            for template in ordered:
                result = run(template, ep)
                if result.text:
                    pieces.append(result.text)
                if result.handled:
                    break

    if templates.footer is not None:
        result = run(templates.footer, None)
        if result.text:
            pieces.append(result.text)

    if not pieces:
        return "", diags
    return "\n".join(pieces) + "\n", diags
