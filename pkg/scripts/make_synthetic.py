"""Regenerate the bundled demo datasets under data/.

    python3 scripts/make_synthetic.py [--out data]

Output is a pure function of the seeds below, so rerunning reproduces the
committed files byte for byte.
"""

import argparse
from pathlib import Path

from oodbench.synthetic import make_image_dataset, make_replay_dataset

SEGMENTATION_SEED = 11
REPLAY_SEED = 5


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    args = parser.parse_args(argv)
    seg = make_image_dataset(args.out / "synthetic", n=16, seed=SEGMENTATION_SEED, size=16, channels=3, class_count=3)
    replay = make_replay_dataset(args.out / "replay", n_in=8, n_ood=8, seed=REPLAY_SEED)
    print(seg)
    for path in replay.values():
        print(path)


if __name__ == "__main__":
    main()
