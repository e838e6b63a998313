"""Recompute SELD from the four published metrics of every development-set row.

    python scripts/table_closure.py
"""

from seldkit.metrics import PUBLISHED_RESULTS, seld_score


def main():
    print(f"{'visual':>12} {'fusion':>8} {'printed':>8} {'recomputed':>10} {'diff':>7}")
    worst = 0.0
    for visual, fusion, er, f1, le, lr, printed in PUBLISHED_RESULTS:
        value = seld_score(er, f1 / 100, le, lr / 100)
        worst = max(worst, abs(value - printed))
        print(f"{visual:>12} {fusion:>8} {printed:8.2f} {value:10.4f} {value - printed:+7.4f}")
    print(f"worst |diff| = {worst:.4f}")


if __name__ == "__main__":
    main()
