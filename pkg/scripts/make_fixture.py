"""Write the synthetic blob segmentation dataset used by the example configs.

    python3 scripts/make_fixture.py --out data/blobs
"""

import argparse

from rasterforge.fixtures import HLS_BANDS, make_blob_segmentation


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data/blobs")
    ap.add_argument("--n-images", type=int, default=200)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    info = make_blob_segmentation(args.out, n_images=args.n_images, size=args.size, bands=HLS_BANDS, seed=args.seed)
    counts = ", ".join(f"{k} {len(v)}" for k, v in info["splits"].items())
    print(f"wrote {args.n_images} images to {info['root']} ({counts})")


if __name__ == "__main__":
    main()
