"""Synthesize model outputs in the training-time answer formats.

These renderers produce the text the parsers are specified to invert:
answer-marker lines, `[DOC i]` ID lists with the `[DOC -1]` sentinel,
"Relevant documents:" content blocks, and numbered Quote lines.
"""

from __future__ import annotations


def ids_line(ids: set[int]) -> str:
    if not ids:
        return "[DOC -1]"
    return ", ".join(f"[DOC {i}]" for i in sorted(ids))


def render_ao(answer: str) -> str:
    return f"Answer: {answer}"


def render_id(ids: set[int], answer: str) -> str:
    return f"{ids_line(ids)}\nThe answer is: {answer}"


def render_id_c(contents: dict[int, str], answer: str) -> str:
    blocks = []
    for i in sorted(contents):
        blocks.append(f"[DOC {i}]\n{contents[i]}")
    body = "\n\n".join(blocks)
    return f"Relevant documents:\n{body}\n\nThe answer is: {answer}"


def render_id_q(quotes: list[str], ids: set[int], answer: str) -> str:
    lines = [f'Quote {n}: "{q}"' for n, q in enumerate(quotes, start=1)]
    lines.append(f"Relevant Document IDs: {ids_line(ids)}")
    lines.append(f"The answer is: {answer}")
    return "\n".join(lines)


def render_reasoning(citations: set[int], answer: str) -> str:
    steps = ["**Step 1: Question Analysis**", "Identify what is being asked."]
    steps.append("**Step 3: Reasoning**")
    if citations:
        for i in sorted(citations):
            steps.append(f"According to [DOC {i}], the fact holds.")
    else:
        steps.append("No document supports a conclusion.")
    steps.append("**Step 4: Answer**")
    steps.append(f"The answer is: {answer}")
    return "\n".join(steps)


def render_verdict(c1: int, c2: int, c3: int) -> str:
    return (
        "Reasoning Quality Justification: because.\n"
        f"\\boxed{{Criterion 1: {c1}}}\n"
        "Document Grounding Justification: because.\n"
        f"\\boxed{{Criterion 2: {c2}}}\n"
        "Answer Correctness Justification: because.\n"
        f"\\boxed{{Criterion 3: {c3}}}"
    )
