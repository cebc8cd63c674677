"""Named float64 tensor collections shared by every weight-space operation."""

import numpy as np


class DimensionError(ValueError):
    pass


class ParameterSet(dict):
    """Ordered mapping ``name -> float64 ndarray``.

    Insertion order is the canonical order; it is preserved by every helper
    here and by serialization. Two sets are shape-compatible when they have
    the same names in the same order with the same per-name shapes.
    """

    def __init__(self, entries=()):
        super().__init__()
        items = entries.items() if isinstance(entries, dict) else entries
        for name, value in items:
            self[name] = value

    def __setitem__(self, name, value):
        if not isinstance(name, str):
            raise TypeError(f"parameter names must be str, got {type(name).__name__}")
        arr = np.asarray(value, dtype=np.float64)
        super().__setitem__(name, arr)

    def copy(self):
        return ParameterSet((k, v.copy()) for k, v in self.items())

    @property
    def names(self):
        return list(self.keys())

    def shapes(self):
        return [(k, v.shape) for k, v in self.items()]

    def is_compatible(self, other):
        return self.shapes() == other.shapes()

    def check_compatible(self, other, what="parameter sets"):
        if not self.is_compatible(other):
            mine, theirs = self.shapes(), other.shapes()
            for a, b in zip(mine, theirs):
                if a != b:
                    raise DimensionError(f"{what} differ at {a[0]!r}: {a[1]} vs {b[0]!r} {b[1]}")
            raise DimensionError(f"{what} differ in length: {len(mine)} vs {len(theirs)}")

    def subset(self, names):
        missing = [n for n in names if n not in self]
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        return ParameterSet((n, self[n]) for n in names)

    def flatten(self):
        if not self:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.values()])

    def size(self):
        return sum(v.size for v in self.values())

    def zeros_like(self):
        return ParameterSet((k, np.zeros_like(v)) for k, v in self.items())

    def __repr__(self):
        body = ", ".join(f"{k}{list(v.shape)}" for k, v in self.items())
        return f"ParameterSet({body})"
