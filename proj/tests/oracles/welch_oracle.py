"""Freezes Welch t-test reference values computed with scipy."""
import json

from scipy import stats

CASES = [
    ([1, 2, 3, 4], [2, 3, 4, 5]),
    ([0.5, 1.5, 2.0, 7.25, 3.0], [10.0, 11.5, 9.75]),
    ([2.2, 2.4, 2.1, 2.3, 2.2, 2.6, 2.5], [1.1, 3.9, 0.4, 5.2, 2.2]),
    ([-3, -1, 0, 2, 8, 13], [4, 4.5, 5, 5.5]),
]


def welch_df(a, b):
    va, vb = stats.tvar(a) / len(a), stats.tvar(b) / len(b)
    return (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))


def main():
    out = []
    for a, b in CASES:
        r = stats.ttest_ind(a, b, equal_var=False)
        out.append({"a": a, "b": b, "t": float(r.statistic), "p": float(r.pvalue),
                    "df": float(welch_df(a, b))})
    with open("welch_expected.json", "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
