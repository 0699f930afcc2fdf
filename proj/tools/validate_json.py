#!/usr/bin/env python3
"""validate_json.py SCHEMA DOC [DOC ...] -- exit 1 on the first invalid document."""
import json
import sys

import jsonschema


def main(argv: list[str]) -> int:
    if len(argv) < 3:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    with open(argv[1]) as fh:
        schema = json.load(fh)
    validator = jsonschema.Draft202012Validator(schema)
    for path in argv[2:]:
        with open(path) as fh:
            doc = json.load(fh)
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
        if errors:
            for e in errors[:5]:
                print(f"{path}: {'/'.join(map(str, e.path))}: {e.message}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
