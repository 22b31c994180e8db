"""
How the smoothed rank similarity behaves.

Prints smoothed ranks for a few sharpness values, then the rank similarity
of every reordering of a three-object map against the original, and finally
the gradient the similarity sends back to the predicted map.

    python3 demos/rank_similarity.py
"""

import itertools

import numpy as np

from attnagree import numerics as nx
from attnagree.align import approx_ranks, hard_ranks, sim_dot, sim_rank
from attnagree.numerics import Tensor


def main():
    c = np.array([0.5, 0.3, 0.2])
    print("weights", c, "hard ranks", hard_ranks(c).ranks.data)
    for alpha in (1.0, 10.0, 100.0, 1000.0):
        r = approx_ranks(c, alpha).ranks.data
        print(f"  alpha {alpha:7.1f}  smoothed ranks {np.round(r, 4)}  sum {r.sum():.12f}")

    print("\nrank and dot similarity of reordered predictions against", c)
    for perm in itertools.permutations(range(3)):
        p = c[list(perm)]
        print(f"  {p}  rank {sim_rank(p, c, 10.0).item():.4f}  dot {sim_dot(p, c).item():.4f}")

    pred = Tensor(np.array([0.2, 0.3, 0.5]), requires_grad=True)
    nx.backward(sim_rank(pred, c, 10.0))
    print("\ngradient w.r.t. a reversed prediction:", np.round(pred.grad, 4))
    print("(pushes weight toward the first object, away from the last)")


if __name__ == "__main__":
    main()
