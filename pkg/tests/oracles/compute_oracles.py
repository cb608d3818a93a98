"""Independent oracle values, computed without importing the package.

Run once; the printed numbers are frozen into the tests.
"""
import hashlib
import math

pl = 40 + 10 * 3.5 * math.log10(250 / 1)
print("path_loss 250m n=3.5:", pl)
print("rx 23 dBm over that:", 23 - pl)
mw = sum(10 ** (l / 10) for l in (-90, -93, -96))
print("aggregate [-90,-93,-96]:", 10 * math.log10(mw))
print("equal (-80,4):", -80 - 10 * math.log10(4))
print("proportional (1,2,3) @-80 mW:", [w / 6 * 1e-8 for w in (1, 2, 3)])
print("sha256('abc'):", hashlib.sha256(b"abc").hexdigest())


def best_q(p, v, step=1e-4, qmax=50):
    best, arg = -1e18, 0.0
    for i in range(int(qmax / step) + 1):
        q = i * step
        u = v * math.log1p(q) - p * q
        if u > best:
            best, arg = u, q
    return arg


print("grid q(v=10,p=5):", best_q(5, 10), "q(v=20,p=5):", best_q(5, 20))


def revenue(p, vs, cap):
    return p * min(cap, sum(max(0.0, v / p - 1) for v in vs))


delta = 0.001
grid = [i * delta for i in range(1, int(20 / delta) + 1)]
best = max(grid, key=lambda p: (revenue(p, (10, 20), 4), -p))
print("leader v=(10,20) Q=4:", best, revenue(best, (10, 20), 4))
q = (1.0, 3.0)
qp = tuple(x * 2 / 4 for x in q)
print("rationing Q=2 p=5:", qp, tuple(0.5 * 5 * (a - b) for a, b in zip(q, qp)))

slack, need, out = [5, 3, 2], 6, []
for s in sorted(slack, reverse=True):
    if need == 0:
        break
    take = min(s, need)
    out.append(take)
    need -= take
print("greedy (5,3,2) need 6:", out)
