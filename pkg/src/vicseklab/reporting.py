"""Artifact writers: JSON reports, flat CSV tables, two-column series files.

Every artifact embeds the config hash and package version on its first
line (CSV/dat) or under a ``meta`` key (JSON), so any file can be traced
back to the exact configuration that produced it.  Writers are
deterministic: keys are sorted, floats rendered with repr-faithful
precision, and no timestamps are emitted (the run summary is the single,
documented exception).
"""

import json
import os

from . import __version__


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _meta(cfg_hash, config=None):
    meta = {"config_hash": cfg_hash, "version": __version__}
    if config is not None:
        meta["config"] = _jsonable(config)
    return meta


def _jsonable(obj):
    """Round-trip arbitrary report structures into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    if isinstance(obj, float):
        return obj
    if hasattr(obj, "item"):  # numpy scalars
        return _jsonable(obj.item())
    if hasattr(obj, "tolist"):  # numpy arrays
        return _jsonable(obj.tolist())
    return str(obj)


def write_json(path, report, cfg_hash, config=None):
    """Write a report dict as canonical JSON with an embedded meta block.

    When ``config`` is given the resolved configuration is stored verbatim
    under ``meta.config`` so the artifact is self-describing.
    """
    doc = {"meta": _meta(cfg_hash, config), "report": _jsonable(report)}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cell(value):
    """Render one CSV cell: '.' decimal point, no embedded separators."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    text = str(value)
    if "," in text:
        raise ValueError("CSV cell may not contain the separator: %r" % text)
    return text


def write_csv(path, header, rows, cfg_hash):
    """Flat CSV: meta comment line, fixed header row, one line per row."""
    with open(path, "w") as fh:
        fh.write("# config_hash=%s version=%s\n" % (cfg_hash, __version__))
        fh.write(",".join(header) + "\n")
        for row in rows:
            if len(row) != len(header):
                raise ValueError("row width %d != header width %d" % (len(row), len(header)))
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def write_dat(path, xs, ys, cfg_hash, label="x y"):
    """Plot-ready two-column series with a meta comment header."""
    if len(xs) != len(ys):
        raise ValueError("series lengths differ")
    with open(path, "w") as fh:
        fh.write("# config_hash=%s version=%s\n" % (cfg_hash, __version__))
        fh.write("# %s\n" % label)
        for x, y in zip(xs, ys):
            fh.write("%s %s\n" % (repr(float(x)), repr(float(y))))
    return path
