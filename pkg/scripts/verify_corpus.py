"""Exact checks over the corpus of small domains.

Sweeps the edge-probability identity over every admissible domain in a box
(compiled path), then the partition and Fomin identities over the smaller
box handled by the pure enumeration.
"""

import argparse
import time

from lerwgreen import lerw


def main():
    p = argparse.ArgumentParser(description="exact identity sweep")
    p.add_argument("--box", type=int, default=5)
    p.add_argument("--sub-box", type=int, default=4)
    args = p.parse_args()

    rep = lerw.sweep_corpus(args.box)
    print(
        f"identity  box={args.box} domains={rep.verified}/{rep.total} pairs={rep.pairs} "
        f"max_rel_error={rep.max_rel_error:.3e} failures={rep.failures} {rep.elapsed:.0f}s ok={rep.ok}"
    )
    t = time.perf_counter()
    part = fomin = 0.0
    count = 0
    for A in lerw.iter_corpus(args.sub_box):
        part = max(part, lerw.verify_domain(A).max_partition_error)
        fomin = max(fomin, lerw.FominTable(A).max_error())
        count += 1
    print(
        f"partition/fomin box={args.sub_box} domains={count} partition={part:.3e} "
        f"fomin={fomin:.3e} {time.perf_counter() - t:.0f}s"
    )


if __name__ == "__main__":
    main()
