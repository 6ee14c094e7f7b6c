"""Quick check that the compiled extension imports and runs end to end."""

import btcrs


def main():
    assert btcrs.checksum(b"") == "5df6e0e2"

    reports = btcrs.run("paperlike.scn", [1, 2], {"run_blocks": "20"})
    assert [r["seed"] for r in reports] == [1, 2]
    assert sum(reports[0]["blocks_mined"].values()) == 20
    assert 0.0 <= reports[0]["orphan_rate"] <= 1.0

    plan = btcrs.plan_partition("paperlike.scn", ["M", "N", "S"])
    assert plan["feasible"] and plan["prefixes_to_hijack"]

    parts = btcrs.power_partitions("paperlike.scn", 0.45, 0.55)
    assert all(0.45 <= p["mining_power"] <= 0.55 for p in parts)

    healed = btcrs.heal(1, ases=10, per_as=10)
    assert healed["recovery"][0][0] == 0.0

    try:
        btcrs.run("paperlike.scn", [1], {"no_such_param": "1"})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown override accepted")

    print(f"btcrs {btcrs.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
