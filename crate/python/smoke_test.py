"""Smoke test for the swgsim Python extension.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/swgsim-*.whl
"""

import math

import swgsim


def main():
    h = swgsim.hwp_matrix(math.pi / 8)
    plus = [h[0][0], h[1][0]]
    assert abs(plus[0] - plus[1]) < 1e-12 and abs(abs(plus[0]) ** 2 - 0.5) < 1e-12

    params, clock = swgsim.DetectorParams.from_table("swg", 1)
    assert params.pde == 0.757 and clock.gate_freq_hz == 152e6
    assert abs(params.dark_prob_per_gate(clock) - 410 / 152e6) < 1e-15
    assert len(swgsim.detector_names()) == 12

    ideal = swgsim.DetectorParams("ideal", 1.0)
    events = swgsim.simulate_detector(ideal, swgsim.GateClock.spcm(), [(3, 1), (10, 2)], 20, seed=1)
    assert events == [(3, "photon"), (10, "photon")], events

    probs = swgsim.ghz_pattern_probabilities(1.0)
    assert abs(probs["++++"] + probs["+--+"] - 1.0) < 1e-12
    v, se = swgsim.visibility({"++++": 90, "+--+": 80, "+-++": 10, "++-+": 20})
    assert abs(v - 0.7) < 1e-12 and se > 0

    r = swgsim.eq1_estimate(76e6, 0.05, 5, 0.5 * 1.05) / swgsim.eq1_estimate(76e6, 0.05, 5, 0.5)
    assert abs(r - 1.05**10) < 1e-12

    rep = swgsim.characterize(params, clock, seed=3, n_pulses=1_000_000, dark_run_gates=20_000_000)
    assert rep["max_z"] < 4.0, rep

    summary = swgsim.run("ghz4", "[ghz4]\npulses = 2_000_000\n", seed=5, workers=1, compare="spcm:swg")
    m = summary["metrics"]
    assert abs(m["analytic_ratio.++++"] - 1.30527) < 1e-4
    assert summary["seed"] == 5 and len(summary["config_hash"]) == 64

    try:
        swgsim.run("ghz4", "[ghz4]\npulsez = 1\n", seed=1)
    except ValueError as e:
        assert "ghz4.pulsez" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("swgsim python smoke test: ok")


if __name__ == "__main__":
    main()
