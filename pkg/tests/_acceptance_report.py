"""Shared sink for per-criterion pass/fail lines printed at session end."""

lines: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    lines.append(f"[{status}] {criterion}: {detail}")
