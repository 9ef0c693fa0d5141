"""``figures --spec spec.json``: batch figure generation.

The spec file is a JSON list (or ``{"figures": [...]}``) of entries::

    {"kind": "weight-trajectories", "input": "replicator_meanweights.csv",
     "output": "weights.svg", "labels": ["0.2", "0.5", "0.9"], "title": "..."}

Relative input/output paths resolve against the spec file's directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from metamoran_figures.csvio import SchemaError
from metamoran_figures.plots import FigureSpec, render


def load_spec(path) -> list[FigureSpec]:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("figures")
    if not isinstance(data, list) or not data:
        raise ValueError(f"{path}: spec must be a nonempty list of figure entries")
    specs = []
    for i, entry in enumerate(data):
        try:
            spec = FigureSpec(
                kind=entry["kind"],
                input=str(path.parent / entry["input"]),
                output=str(path.parent / entry["output"]),
                labels=entry.get("labels"),
                title=entry.get("title", ""),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ValueError(f"{path}: entry {i}: {err}") from None
        specs.append(spec)
    return specs


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="figures", description=__doc__.splitlines()[0])
    parser.add_argument("--spec", required=True, help="JSON figure spec file")
    args = parser.parse_args(argv)
    try:
        specs = load_spec(args.spec)
    except (OSError, ValueError, json.JSONDecodeError) as err:
        print(f"spec error: {err}", file=sys.stderr)
        return 2
    status = 0
    for spec in specs:
        try:
            render(spec)
            print(f"wrote {spec.output}")
        except (SchemaError, OSError, ValueError) as err:
            print(f"error: {spec.input}: {err}", file=sys.stderr)
            status = 1
    return status


if __name__ == "__main__":
    raise SystemExit(main())
