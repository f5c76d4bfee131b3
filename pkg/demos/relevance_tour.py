"""A walking tour of the relevance score, from single pairs to full volumes.

Everything here runs on hand-sized synthetic attention maps so the numbers
can be checked by eye: identity maps kill every cross-frame path, uniform
maps spread relevance evenly, and the neighborhood sum concentrates it.
"""

import numpy as np

from strmatch import Neighborhood, cost_report, str_score, str_score_bruteforce
from strmatch.model import AttentionBlockMaps, AttentionRecord
from strmatch.relevance import bidirectional_relevance, directional_relevance
from strmatch.tensor import tensor


def stochastic(rng, shape):
    m = rng.uniform(0.05, 1.0, size=shape)
    return m / m.sum(axis=-1, keepdims=True)


def make_record(self_map, temporal_map):
    return AttentionRecord([AttentionBlockMaps(
        block=0, level=1, self_map=tensor(self_map),
        temporal_map=tensor(temporal_map))])


def main():
    f, n, h = 4, 4, 1
    rng = np.random.default_rng(0)

    print("== one directional relevance value ==")
    rec = make_record(stochastic(rng, (f, h, n, n)), stochastic(rng, (n, h, f, f)))
    g = directional_relevance(rec, block=0, head=0, i=0, p=1, j=2, q=3)
    print(f"g(frame0 px1 -> frame2 px3) = {g:.6f}")
    both = bidirectional_relevance(rec, block=0, head=0, i=0, p=1, j=2, q=3)
    print(f"symmetrized (adds the reverse direction) = {both:.6f}\n")

    print("== identity maps: attention never leaves a token ==")
    eye_s = np.broadcast_to(np.eye(n), (f, h, n, n)).copy()
    eye_t = np.broadcast_to(np.eye(f), (n, h, f, f)).copy()
    omega = str_score(make_record(eye_s, eye_t), Neighborhood(radius=1))
    print(f"max |Omega| = {np.abs(omega[0].data).max()}  (neighbors exclude self)\n")

    print("== uniform maps: closed form 0.5 interior / 0.25 boundary ==")
    uni_s = np.full((f, h, n, n), 1.0 / n)
    uni_t = np.full((n, h, f, f), 1.0 / f)
    omega = str_score(make_record(uni_s, uni_t), Neighborhood(radius=1))
    vol = omega[0].data[0]
    print(f"frame 0 (one neighbor):   {vol[0, 0, 0]:.4f}")
    print(f"frame 1 (two neighbors):  "
          f"{str_score(make_record(uni_s, uni_t), Neighborhood(1))[0].data[0, 1, 0, 0]:.4f}\n")

    print("== vectorized kernel vs scalar transcription ==")
    rec = make_record(stochastic(rng, (f, h, n, n)), stochastic(rng, (n, h, f, f)))
    nb = Neighborhood(radius=2)
    fast = str_score(rec, nb)[0].data
    slow = str_score_bruteforce(rec, nb)[0].data
    print(f"max |fast - slow| = {np.abs(fast - slow).max():.3e}\n")

    print("== why factorize: memory of the joint 3D map ==")
    for ff, nn in ((8, 256), (16, 1024)):
        rep = cost_report(ff, nn, h=1, nbhd=Neighborhood(radius=1))
        print(f"f={ff:3d} n={nn:5d}: factorized {rep['factorized_mem']:>12,} elems, "
              f"joint {rep['full3d_mem']:>15,} elems, ratio {rep['mem_ratio']:.2f}")


if __name__ == "__main__":
    main()
