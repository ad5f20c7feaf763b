"""Turn a dataclass of defaults into command-line overrides."""

import argparse
import dataclasses


def parse(cls):
    p = argparse.ArgumentParser(description=cls.__doc__)
    for f in dataclasses.fields(cls):
        kind = type(f.default)
        if kind is tuple:
            p.add_argument(f"--{f.name}", type=int, nargs="+", default=f.default)
        elif kind is bool:
            p.add_argument(f"--{f.name}", type=lambda s: s.lower() in ("1", "true", "yes"), default=f.default)
        else:
            p.add_argument(f"--{f.name}", type=kind, default=f.default)
    ns = p.parse_args()
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in vars(ns).items()})
