"""``key=value`` config files (one pair per line, ``#`` comments)."""
from ._io import read_bytes
from .errors import ParseError


def parse_kv(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"line {lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key in out:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_kv(path):
    return parse_kv(read_bytes(path).decode("utf-8"))


def format_kv(mapping):
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def parse_bool(raw):
    v = str(raw).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"not a boolean: {raw!r}")


def parse_int_list(raw):
    raw = str(raw).strip()
    return [int(x) for x in raw.split(",") if x.strip()] if raw else []


def parse_float_list(raw):
    raw = str(raw).strip()
    return [float(x) for x in raw.split(",") if x.strip()] if raw else []
