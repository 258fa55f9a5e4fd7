import sys

from facehop.synthetic import write_dataset


def make_dataset(directory, n=400, seed=0, minority_fraction=0.5):
    manifest = write_dataset(directory, n=n, seed=seed, minority_fraction=minority_fraction)
    print(f"Manifest: {manifest}")
    print(f"Images:   {n} (class_b fraction {minority_fraction})")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("Usage: python make_synthetic_dataset.py <output_dir> [n_images] [seed] [class_b_fraction]")
    else:
        args = sys.argv[2:]
        make_dataset(
            sys.argv[1],
            n=int(args[0]) if len(args) > 0 else 400,
            seed=int(args[1]) if len(args) > 1 else 0,
            minority_fraction=float(args[2]) if len(args) > 2 else 0.5,
        )
