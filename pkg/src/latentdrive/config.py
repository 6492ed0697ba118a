"""Plain-text key/value configuration files.

Format (UTF-8): one ``key = value`` pair per line, ``#`` starts a comment,
blank lines ignored.  Keys are dotted lowercase (``env.n_hv``); values are
parsed on demand as int, float, bool, string or comma-separated list.
Every tunable default in the package can be overridden from such a file;
the README documents the full key set.
"""

from dataclasses import fields, is_dataclass

from .errors import InvalidParamsError


def load_kv(path) -> dict:
    """Parse a key/value config file into a flat {str: str} mapping."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidParamsError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def dump_kv(mapping: dict, path) -> None:
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidParamsError(f"not a boolean: {s!r}")


def as_list(s: str) -> list:
    return [item.strip() for item in s.split(",") if item.strip()]


def apply_overrides(obj, kv: dict, prefix: str):
    """Overwrite dataclass fields from keys ``prefix.<field>`` in kv.

    Field types drive the coercion: int, float, bool, str, and tuples of
    those (comma-separated).  Unknown keys under the prefix raise.
    """
    if not is_dataclass(obj):
        raise TypeError(f"apply_overrides needs a dataclass, got {type(obj)}")
    by_name = {f.name: f for f in fields(obj)}
    for key, raw in kv.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in by_name:
            raise InvalidParamsError(f"unknown config key {key!r}")
        current = getattr(obj, name)
        if isinstance(current, bool):
            val = as_bool(raw)
        elif isinstance(current, int):
            val = int(raw)
        elif isinstance(current, float):
            val = float(raw)
        elif isinstance(current, tuple):
            elem = type(current[0]) if current else float
            val = tuple(elem(x) for x in as_list(raw))
        else:
            val = raw
        setattr(obj, name, val)
    return obj
