"""HTML documents as immutable node trees.

Pages are assembled as trees of :class:`Element` / :class:`Text` / :class:`Raw`
nodes and serialized in a single pass.  All user-visible data enters the tree
as ``Text`` (or as attribute values) and is escaped on output.  ``Raw`` exists
solely for static-asset references and pre-rendered snippets embedded by the
server itself; nothing user-supplied may ever flow through it.

Output is HTML5, UTF-8, one document type declaration per page.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .errors import HdbError

VOID_ELEMENTS = frozenset({
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "source", "track", "wbr",
})

_TAG_RE = re.compile(r"^[a-zA-Z][a-zA-Z0-9-]*$")


class DocTreeError(HdbError):
    pass


class InvalidTag(DocTreeError):
    pass


class VoidElementWithChildren(DocTreeError):
    pass


class DuplicateAttribute(DocTreeError):
    pass


def escape_text(s: str) -> str:
    """Escape text content: ``&``, ``<`` and ``>`` only."""
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def escape_attr(s: str) -> str:
    """Escape attribute values: as :func:`escape_text` plus ``"``.

    Single quotes are left alone because serialization always uses
    double-quoted attributes.
    """
    return escape_text(s).replace('"', "&quot;")


@dataclass(frozen=True)
class Text:
    content: str


@dataclass(frozen=True)
class Raw:
    """Verbatim markup.  Audit every constructor call site."""

    content: str


@dataclass(frozen=True)
class Element:
    tag: str
    attrs: tuple[tuple[str, str], ...] = ()
    children: tuple["DocNode", ...] = ()

    def __post_init__(self):
        if not _TAG_RE.match(self.tag):
            raise InvalidTag(f"invalid element tag {self.tag!r}")
        object.__setattr__(self, "attrs", tuple((str(k), str(v)) for k, v in self.attrs))
        seen = set()
        for name, _ in self.attrs:
            if name in seen:
                raise DuplicateAttribute(f"duplicate attribute {name!r} on <{self.tag}>")
            seen.add(name)
        children = tuple(Text(c) if isinstance(c, str) else c for c in self.children)
        object.__setattr__(self, "children", children)
        if self.tag.lower() in VOID_ELEMENTS and children:
            raise VoidElementWithChildren(f"<{self.tag}> is a void element and cannot have children")


DocNode = Union[Element, Text, Raw]


def el(tag: str, *children, **attrs) -> Element:
    """Convenience constructor.

    String children become Text nodes, ``None`` children are dropped, and
    keyword attribute names map underscores to dashes (``data_x`` becomes
    ``data-x``) with a single trailing underscore stripped (``class_``).
    """
    pairs = []
    for name, value in attrs.items():
        if value is None:
            continue
        name = name.rstrip("_").replace("_", "-")
        pairs.append((name, str(value)))
    kids = tuple(c for c in children if c is not None)
    return Element(tag, tuple(pairs), kids)


def render(node: DocNode) -> str:
    """Serialize one node tree to HTML text."""
    out: list[str] = []
    _render_into(node, out)
    return "".join(out)


def _render_into(node: DocNode, out: list[str]) -> None:
    if isinstance(node, Text):
        out.append(escape_text(node.content))
    elif isinstance(node, Raw):
        out.append(node.content)
    elif isinstance(node, Element):
        out.append(f"<{node.tag}")
        for name, value in node.attrs:
            out.append(f' {name}="{escape_attr(value)}"')
        out.append(">")
        if node.tag.lower() in VOID_ELEMENTS:
            return
        for child in node.children:
            _render_into(child, out)
        out.append(f"</{node.tag}>")
    else:
        raise DocTreeError(f"not a document node: {node!r}")


@dataclass(frozen=True)
class Page:
    title: str
    head_extra: tuple[DocNode, ...] = ()
    body: tuple[DocNode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "head_extra", tuple(self.head_extra))
        object.__setattr__(self, "body", tuple(self.body))


def render_page(page: Page) -> str:
    """Serialize a complete HTML5 document: one doctype, html, head, body."""
    head = el("head", el("meta", charset="utf-8"), el("title", page.title), *page.head_extra)
    doc = el("html", head, el("body", *page.body))
    return "<!DOCTYPE html>" + render(doc)
