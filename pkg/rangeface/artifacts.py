"""
Writing pipeline artifacts to disk.

🔍 EXPLANATION:
Artifacts are first written to ``<name>.partial`` and renamed into place
once complete. When a stage fails half-way the ``.partial`` file stays on
disk, so a broken artifact can never be mistaken for a finished one.
"""
import logging
import os
import re
from contextlib import contextmanager
from pathlib import Path

logger = logging.getLogger(__name__)

PARTIAL_SUFFIX = '.partial'
CONFIG_TAG = re.compile(r'config=([0-9a-f]+)')
# Every format puts its config tag in the first few lines
CONFIG_TAG_LINES = 3


@contextmanager
def open_artifact(path, mode='w'):
    """Open ``path`` for writing through a ``.partial`` staging file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + PARTIAL_SUFFIX)
    newline = '' if 'b' not in mode else None
    with open(partial, mode, newline=newline) as handle:
        yield handle
    os.replace(partial, path)
    logger.debug('wrote %s', path)


def write_artifact(path, text):
    with open_artifact(path) as handle:
        handle.write(text)
    return Path(path)


def config_comment(config_hash):
    """The comment line every text artifact carries (empty when no hash)."""
    if not config_hash:
        return ''
    return f'# config={config_hash}\n'


def strip_comments(lines):
    """Yield ``(line_number, text)`` for the non-comment lines (1-based)."""
    for number, text in enumerate(lines, start=1):
        if text.startswith('#'):
            continue
        yield number, text


def read_config_hash(path):
    """The config hash an artifact was written with, or None if it carries none."""
    with open(path) as handle:
        for _, line in zip(range(CONFIG_TAG_LINES), handle):
            match = CONFIG_TAG.search(line)
            if match:
                return match.group(1)
    return None
