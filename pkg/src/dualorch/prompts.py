"""Prompt bundles. Both orchestration modes use the same bundle verbatim."""

from __future__ import annotations

from dataclasses import dataclass

from .core import ConfigError


@dataclass(frozen=True)
class PromptBundle:
    id: str
    system: str
    task: str
    wrong_kind: str
    repair: str
    edit_failed: str

    def task_message(self, program_id: str, source_path: str, target_path: str,
                     source: str) -> str:
        return self.task.format(program_id=program_id, source_path=source_path,
                                target_path=target_path, source=source)


_SYSTEM = """\
You modernize legacy COBOL programs into Python 3.
Reply with exactly one JSON object per turn, in one of these forms:
  {"kind": "CODE_EDIT", "edits": [{"path": "...", "content": "..."}]}
  {"kind": "CODE_EDIT", "edits": [{"path": "...", "search": "...", "replace": "..."}]}
  {"kind": "TOOL_ACTION", "tool": "<TOOL>", "args": {...}}
  {"kind": "FINISH", "status": "..."}
Tools: READ_FILE {path}, WRITE_FILE {path, content}, LIST_FILES {glob},
WEB_SCRAPE {url}, RUN_COMMAND {argv, stdin?, cwd?}, GIT {args}.
Paths are relative to the workspace root. The translated program reads the
same standard input and writes the same standard output and files as the
original program, byte for byte."""

_TASK = """\
Translate COBOL program {program_id} ({source_path}) to Python and write the
result to {target_path}.

--- {source_path} ---
{source}"""

DEFAULT = PromptBundle(
    id="default-v1",
    system=_SYSTEM,
    task=_TASK,
    wrong_kind="Tool actions are not available at this step. Respond with a CODE_EDIT.",
    repair="{stage} failed. Respond with a CODE_EDIT that fixes it.\n{details}",
    edit_failed="The edit could not be applied. Respond with a CODE_EDIT containing the full file.",
)

BUNDLES = {DEFAULT.id: DEFAULT}


def get_bundle(bundle_id: str) -> PromptBundle:
    try:
        return BUNDLES[bundle_id]
    except KeyError:
        raise ConfigError(f"unknown prompt bundle {bundle_id!r}") from None
