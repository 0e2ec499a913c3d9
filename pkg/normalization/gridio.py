"""
Range grid text format.

    rangeface-grid v1
    resolution R
    d <scale>
    subject_id <id>
    pose gallery|probe
    channels 1|3
    R depth rows, R luminance rows, [R rgb rows when channels = 3], R mask rows

Rows are whitespace-separated decimals (mask rows use 0/1).
"""
import numpy as np

from normalization.normalize import RangeGrid
from rangeface.artifacts import strip_comments, write_artifact
from rangeface.errors import ArtifactError
from scans.mesh import PoseTag, format_float

GRID_HEADER = 'rangeface-grid v1'


def _rows(array):
    return [' '.join(format_float(value) for value in row) for row in array.tolist()]


def serialize_grid(grid, config_hash=None, include_rgb=False):
    n = grid.resolution
    include_rgb = include_rgb and grid.color is not None
    out = [GRID_HEADER]
    if config_hash:
        out.append(f'# config={config_hash}')
    out += [
        f'resolution {n}',
        f'd {format_float(grid.d)}',
        f'subject_id {grid.subject_id}',
        f'pose {grid.pose_tag.value}',
        f'channels {3 if include_rgb else 1}',
    ]
    out += _rows(grid.depth)
    out += _rows(grid.luminance)
    if include_rgb:
        out += _rows(grid.color.reshape(n, n * 3))
    out += [' '.join('1' if flag else '0' for flag in row) for row in grid.void_mask.tolist()]
    return '\n'.join(out) + '\n'


def parse_grid(text):
    lines = [line for _, line in strip_comments(text.splitlines()) if line.strip()]
    try:
        if lines[0].strip() != GRID_HEADER:
            raise ArtifactError('not a range grid file')
        header = dict(line.split(None, 1) for line in lines[1:6])
        n = int(header['resolution'])
        channels = int(header['channels'])
        body = lines[6:]
        expected = n * (3 if channels == 1 else 4)
        if len(body) != expected:
            raise ArtifactError(f'grid file has {len(body)} data rows, expected {expected}')
        depth = np.array([[float(v) for v in row.split()] for row in body[:n]])
        lum = np.array([[float(v) for v in row.split()] for row in body[n:2 * n]])
        color = None
        if channels == 3:
            color = np.array([[float(v) for v in row.split()] for row in body[2 * n:3 * n]]).reshape(n, n, 3)
        mask = np.array([[v == '1' for v in row.split()] for row in body[-n:]], dtype=bool)
        return RangeGrid(
            depth=depth,
            luminance=lum,
            void_mask=mask,
            d=float(header['d']),
            subject_id=header['subject_id'].strip(),
            pose_tag=PoseTag(header['pose'].strip()),
            color=color,
        )
    except ArtifactError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise ArtifactError(f'malformed grid file: {exc}') from exc


def write_grid(path, grid, config_hash=None, include_rgb=False):
    return write_artifact(path, serialize_grid(grid, config_hash, include_rgb))


def read_grid(path):
    with open(path) as handle:
        return parse_grid(handle.read())
