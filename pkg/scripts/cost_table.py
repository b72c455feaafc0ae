"""Print parameter and FLOP counts for every preset next to the published figures."""

from sodavit.model import PRESET_NAMES, REPORTED_COSTS, count_flops, count_params, preset


def main():
    print(f"{'model':<10}{'params':>12}{'published':>11}{'diff':>8}{'MACs':>14}{'published':>11}{'diff':>8}")
    for name in PRESET_NAMES:
        cfg = preset(name)
        p, f = count_params(cfg), count_flops(cfg)
        rp, rf = REPORTED_COSTS[name]
        print(
            f"{name:<10}{p:>12,}{rp:>10.2f}M{(p / 1e6 - rp) / rp:>+8.2%}"
            f"{f:>14,}{rf:>10.2f}M{(f / 1e6 - rf) / rf:>+8.2%}"
        )


if __name__ == "__main__":
    main()
