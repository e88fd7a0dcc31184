"""Generation planning: part extraction into occlusion-ordered blocks.

A plan groups an object's parts into blocks so that anything occluded is
generated before whatever occludes it: occlusion edges (inner, outer) form a
DAG, and a part's block index is the length of the longest occlusion chain
ending at it. Parts in the same block never occlude one another, so a block
can be generated in one pass from its attribute-free initial text before the
parts are refined one by one.

Plans come from a JSON file or from a chat-completion model; model replies
are validated and their block indices recomputed locally from the returned
edges, which removes ordering mistakes without touching the model's part
extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PartSpec",
    "Block",
    "Plan",
    "Violation",
    "PlanError",
    "layer",
    "validate",
    "synthesize_plan",
    "plan_from_dict",
    "plan_to_dict",
    "load_plan",
    "inversions",
    "PLANNER_SYSTEM_PROMPT",
]


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PartSpec:
    name: str
    attribute_text: str
    alias: str | None = None


@dataclass
class Block:
    index: int
    parts: list[PartSpec]
    initial_text: str


@dataclass
class Plan:
    source_prompt: str
    blocks: list[Block]
    occlusion_edges: list[tuple[str, str]] = field(default_factory=list)

    def part_names(self) -> list[str]:
        return [p.name for b in self.blocks for p in b.parts]

    def block_of(self, part: str) -> int:
        for b in self.blocks:
            if any(p.name == part for p in b.parts):
                return b.index
        raise KeyError(part)


@dataclass(frozen=True)
class Violation:
    kind: str
    parts: tuple[str, ...]
    message: str

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(self.parts)}): {self.message}"


def _find_cycle(parts: list[str], edges: list[tuple[str, str]]) -> list[str] | None:
    adjacency: dict[str, list[str]] = {p: [] for p in parts}
    for inner, outer in edges:
        if inner in adjacency and outer in adjacency:
            adjacency[inner].append(outer)
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 1
        stack.append(node)
        for nxt in adjacency[node]:
            if state.get(nxt) == 1:
                return stack[stack.index(nxt) :] + [nxt]
            if state.get(nxt) is None:
                cycle = visit(nxt)
                if cycle:
                    return cycle
        stack.pop()
        state[node] = 2
        return None

    for p in parts:
        if state.get(p) is None:
            cycle = visit(p)
            if cycle:
                return cycle
    return None


def layer(parts: list[PartSpec], occlusion_edges: list[tuple[str, str]], source_prompt: str = "") -> Plan:
    """Group parts into blocks by longest occlusion chain.

    block(p) = length of the longest edge path ending at p, so the most
    occluded parts land in block 0 and anything with an edge (inner, outer)
    has block(inner) < block(outer). Part order inside a block follows the
    input order. Raises PlanError naming one cycle if the edges are cyclic.
    """
    names = [p.name for p in parts]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise PlanError(f"duplicate part names: {', '.join(dupes)}")
    unknown = [n for e in occlusion_edges for n in e if n not in names]
    if unknown:
        raise PlanError(f"occlusion edges mention unknown parts: {', '.join(sorted(set(unknown)))}")
    cycle = _find_cycle(names, list(occlusion_edges))
    if cycle:
        raise PlanError("occlusion edges contain a cycle: " + " -> ".join(cycle))

    depth: dict[str, int] = {}

    def depth_of(name: str) -> int:
        if name not in depth:
            preds = [inner for inner, outer in occlusion_edges if outer == name]
            depth[name] = 1 + max((depth_of(p) for p in preds), default=-1)
        return depth[name]

    for name in names:
        depth_of(name)

    blocks = []
    for level in range(max(depth.values()) + 1):
        members = [p for p in parts if depth[p.name] == level]
        blocks.append(Block(index=level, parts=members, initial_text=_default_initial_text(members)))
    return Plan(source_prompt=source_prompt, blocks=blocks, occlusion_edges=list(occlusion_edges))


def _default_initial_text(parts: list[PartSpec]) -> str:
    names = [p.name for p in parts]
    if not names:
        return ""
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def validate(plan: Plan) -> list[Violation]:
    """Check every plan invariant; violations are data, not exceptions."""
    violations: list[Violation] = []
    seen: dict[str, int] = {}
    for block in plan.blocks:
        if not block.parts:
            violations.append(Violation("empty-block", (), f"block {block.index} has no parts"))
        for part in block.parts:
            if not part.name:
                violations.append(Violation("unnamed-part", (), "part with empty name"))
                continue
            if part.name in seen:
                violations.append(
                    Violation("duplicate-part", (part.name,), f"appears in blocks {seen[part.name]} and {block.index}")
                )
            seen[part.name] = block.index
            needle = (part.alias or part.name).lower()
            if needle not in part.attribute_text.lower():
                violations.append(
                    Violation(
                        "attribute-text-mismatch",
                        (part.name,),
                        f"attribute text {part.attribute_text!r} does not mention {needle!r}",
                    )
                )
            if part.name.lower() not in block.initial_text.lower() and (
                part.alias is None or part.alias.lower() not in block.initial_text.lower()
            ):
                violations.append(
                    Violation(
                        "initial-text-missing-part",
                        (part.name,),
                        f"block {block.index} initial text {block.initial_text!r} does not mention it",
                    )
                )

    names = list(seen)
    for inner, outer in plan.occlusion_edges:
        if inner not in seen or outer not in seen:
            missing = tuple(n for n in (inner, outer) if n not in seen)
            violations.append(Violation("unknown-part-in-edge", missing, "edge references unknown part"))
            continue
        if seen[inner] == seen[outer]:
            violations.append(
                Violation(
                    "same-block-occlusion",
                    (inner, outer),
                    f"both in block {seen[inner]} but {outer!r} occludes {inner!r}",
                )
            )
        elif seen[inner] > seen[outer]:
            violations.append(
                Violation(
                    "order-violation",
                    (inner, outer),
                    f"{inner!r} (block {seen[inner]}) must precede {outer!r} (block {seen[outer]})",
                )
            )
    cycle = _find_cycle(names, plan.occlusion_edges)
    if cycle:
        violations.append(Violation("cycle", tuple(cycle[:-1]), " -> ".join(cycle)))
    return violations


def plan_to_dict(plan: Plan) -> dict:
    return {
        "source_prompt": plan.source_prompt,
        "blocks": [
            {
                "index": b.index,
                "initial_text": b.initial_text,
                "parts": [
                    {"name": p.name, "attribute_text": p.attribute_text}
                    | ({"alias": p.alias} if p.alias else {})
                    for p in b.parts
                ],
            }
            for b in plan.blocks
        ],
        "occlusion_edges": [[inner, outer] for inner, outer in plan.occlusion_edges],
    }


def plan_from_dict(data: dict) -> Plan:
    try:
        blocks = [
            Block(
                index=int(b["index"]),
                initial_text=str(b["initial_text"]),
                parts=[
                    PartSpec(
                        name=str(p["name"]),
                        attribute_text=str(p["attribute_text"]),
                        alias=p.get("alias"),
                    )
                    for p in b["parts"]
                ],
            )
            for b in data["blocks"]
        ]
        edges = [(str(e[0]), str(e[1])) for e in data.get("occlusion_edges", [])]
        plan = Plan(source_prompt=str(data.get("source_prompt", "")), blocks=blocks, occlusion_edges=edges)
    except (KeyError, TypeError, IndexError) as exc:
        raise PlanError(f"malformed plan JSON: {exc}") from exc
    plan.blocks.sort(key=lambda b: b.index)
    return plan


def load_plan(path) -> Plan:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlanError(f"plan file is not valid JSON: {exc}") from exc
    plan = plan_from_dict(data)
    violations = validate(plan)
    if violations:
        raise PlanError("invalid plan: " + "; ".join(str(v) for v in violations))
    return plan


PLANNER_SYSTEM_PROMPT = """\
You decompose a long object description into an ordered sequence of short
generation texts. Extract every object part and its attributes, then order
the parts inside-out: a part that is covered by another must be generated in
an earlier block than the part covering it. Parts that do not cover one
another share a block. For every block give an initial text that mentions
exactly its parts without attributes, and for every part an attribute text
binding its attributes.

Example input: "A man in a yellow shirt, pink trousers, blue leather shoes
and a black coat is waving". The coat covers the shirt and the trousers, so:

{"source_prompt": "A man in a yellow shirt, pink trousers, blue leather shoes and a black coat is waving",
 "blocks": [
   {"index": 0, "initial_text": "A man in a shirt, shoes and trousers is waving",
    "parts": [{"name": "shirt", "attribute_text": "yellow shirt"},
              {"name": "trousers", "attribute_text": "pink trousers"},
              {"name": "shoes", "attribute_text": "blue leather shoes"}]},
   {"index": 1, "initial_text": "A man in a coat is waving",
    "parts": [{"name": "coat", "attribute_text": "black coat"}]}
 ],
 "occlusion_edges": [["shirt", "coat"], ["trousers", "coat"]]}

Reply with exactly one JSON object in this schema and nothing else.
"""


def synthesize_plan(prompt: str, llm_client=None, plan_file=None) -> Plan:
    """Produce a validated plan from a chat model or an offline file.

    The model's occlusion edges are trusted; its block indices are not:
    blocks are re-derived by longest-chain layering over the returned edges,
    keeping the model's texts wherever the grouping survives. File-sourced
    plans are validated as-is.
    """
    if (llm_client is None) == (plan_file is None):
        raise PlanError("exactly one of llm_client or plan_file must be given")
    if plan_file is not None:
        return load_plan(plan_file)

    reply = llm_client.complete(
        [
            {"role": "system", "content": PLANNER_SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ]
    )
    try:
        data = json.loads(reply)
    except json.JSONDecodeError as exc:
        excerpt = reply[:200].replace("\n", " ")
        raise PlanError(f"model reply is not valid JSON ({exc}); reply began: {excerpt!r}") from exc
    raw = plan_from_dict(data)

    parts = [p for b in raw.blocks for p in b.parts]
    plan = layer(parts, raw.occlusion_edges, source_prompt=prompt)
    # keep the model's initial texts for blocks whose membership survived
    raw_texts = {frozenset(p.name for p in b.parts): b.initial_text for b in raw.blocks}
    for block in plan.blocks:
        key = frozenset(p.name for p in block.parts)
        if key in raw_texts:
            block.initial_text = raw_texts[key]

    violations = validate(plan)
    if violations:
        raise PlanError("plan invalid after repair: " + "; ".join(str(v) for v in violations))
    return plan


def inversions(candidate: Plan, reference: Plan) -> int:
    """Ordered part pairs the candidate places in the opposite block order
    from the reference."""
    cand_parts = set(candidate.part_names())
    ref_parts = set(reference.part_names())
    if cand_parts != ref_parts:
        raise PlanError(
            "part sets differ: "
            f"only in candidate {sorted(cand_parts - ref_parts)}, only in reference {sorted(ref_parts - cand_parts)}"
        )
    names = sorted(cand_parts)
    count = 0
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ref_order = np.sign(reference.block_of(a) - reference.block_of(b))
            cand_order = np.sign(candidate.block_of(a) - candidate.block_of(b))
            if ref_order != 0 and cand_order != 0 and ref_order != cand_order:
                count += 1
    return count
