"""Smoke test for the maintseg Python bindings.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml && pip install target/wheels/maintseg-*.whl
then run
    python python/smoke_test.py
"""

import math

import maintseg


def main():
    z = maintseg.znormalize([1.0, 2.0, 3.0, 4.0])
    assert abs(sum(z)) < 1e-12
    assert abs(sum(v * v for v in z) / len(z) - 1.0) < 1e-12

    assert maintseg.prefix_ends(10, 4) == [4, 8, 10]

    step = [[0.0]] * 30 + [[5.0]] * 30
    bkps, cost = maintseg.pelt(step, penalty=1.0, cost="l2", min_size=2)
    assert bkps == [30], bkps
    assert math.isclose(cost, 1.0)
    for fn in (maintseg.binseg, maintseg.bottomup):
        assert fn(step, 1.0)[0] == [30]
    assert maintseg.kcpd(step, 1.0)[0] == [30]

    series = [math.sin(i / 3.0) for i in range(80)]
    profile, index = maintseg.matrix_profile(series, 8)
    assert len(profile) == len(index) == 73
    cac = maintseg.fluss_cac(index, 8)
    assert len(cac) == 73 and all(0.0 <= v <= 1.0 for v in cac)

    assert maintseg.classify(None, 100, 14, 1) == "FN"
    assert maintseg.classify(90, 100, 14, 1) == "TP"
    assert maintseg.classify(99.5, 100, 14, 1) == "FP"
    assert maintseg.e_score(None, 100, 14, 1) == 0.0
    assert maintseg.e_score(90, 100, 14, 1) == 1.0

    cid = maintseg.parse_config("pelt/l2/80/3/-/z/-")
    assert cid == "pelt/l2/80/3/-/z/-"
    try:
        maintseg.parse_config("pelt/zz")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed id accepted")

    d = maintseg.detect(step, "pelt/l2/10/2/-/raw/-")
    assert d["change_point"] == 30 and d["breakpoints"] == 1

    cycles = maintseg.synth_generate(seed=7, n_cycles=6)
    assert len(cycles) == 6
    assert [len(c) for c in cycles] == [len(c) for c in maintseg.synth_generate(seed=7, n_cycles=6)]
    alert = maintseg.run_streaming(cycles[0], cid, step=7)
    assert alert is not None and alert["a"] <= len(cycles[0])

    records = maintseg.sweep(cycles, [cid, "pelt/l2/1e12/3/-/z/-"], workers=2)
    assert len(records) == 12
    never = [r for r in records if r["config_id"].startswith("pelt/l2/1000000000000")]
    assert never and all(r["verdict"] == "FN" and r["e_score"] == 0.0 for r in never)

    own = maintseg.LifeCycle("atm-x", 0, [[0.1, 0.0]] * 20, ended_in_failure=False)
    assert own.feature_names == ["f0", "f1"] and not own.ended_in_failure

    print(f"maintseg {maintseg.__version__}: python smoke test passed")


if __name__ == "__main__":
    main()
