"""Discrete against continuum rectangle boundary kernels.

Prints the scaled error constant max |H - c h| n^5 / (d d') on n x n squares
for the two normalisations c = 1/4 and c = 4.
"""

import argparse

from lerwgreen.spinor import rectangle_error_constant


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="*", default=[8, 16, 32, 64])
    args = p.parse_args()
    print(f"{'n':>4} {'C(1/4)':>12} {'C(4)':>14}")
    for n in args.sizes:
        print(f"{n:4d} {rectangle_error_constant(n, n, 0.25):12.4f} {rectangle_error_constant(n, n, 4.0):14.4e}")


if __name__ == "__main__":
    main()
