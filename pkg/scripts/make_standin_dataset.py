"""
Write a synthetic stand-in dataset for the real-data experiments
Skewed marginals, small correlations, continuous output column 'y'
"""
import argparse
import sys
from pathlib import Path

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from modules.config import DATA_DIR
from modules.datasets import write_standin_csv


def main():
    """Generate the stand-in CSV and print how to use it"""
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--out', default=str(Path(DATA_DIR) / 'standin.csv'))
    parser.add_argument('--inputs', type=int, default=8)
    parser.add_argument('--records', type=int, default=2000)
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()

    print("=" * 60)
    print("CorrLeak stand-in dataset")
    print("=" * 60)
    print()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = write_standin_csv(out, args.inputs, args.records, args.seed)
    print(f"✅ Wrote {len(frame)} records x {args.inputs} inputs to {out.absolute()}")
    print()
    print("Use it with the generic loader:")
    print(f'  {{"dataset": "csv", "dataset_path": "{out}", "label_column": "y"}}')
    print()


if __name__ == "__main__":
    try:
        main()
    except Exception as e:
        print(f"\n❌ Error: {str(e)}")
        sys.exit(1)
