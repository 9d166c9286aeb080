"""Global instrumented operation counter.

Kernels report the sizes of their batched array operations; the driver
snapshots the counter per iteration so linear-complexity claims are
checkable without wall-clock noise.
"""

_count = 0


def add(n):
    global _count
    _count += int(n)


def snapshot():
    return _count


def reset():
    global _count
    _count = 0
