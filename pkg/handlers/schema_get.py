# handlers/schema_get.py - return (data, error, meta)
from bsdesvc.errors import failure
from schema import build_spec


def handle(args):
    try:
        return build_spec(), None, None
    except Exception as e:
        return failure("schema", e)
