#!/usr/bin/env python3
"""Closed-form reference values evaluated with the math module only.

Run from the repository root to regenerate tests/oracles/hand_values.json.
"""
import json
import math
import pathlib


def kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


def softmax(z, t=1.0):
    e = [math.exp(v / t) for v in z]
    s = sum(e)
    return [v / s for v in e]


def info_nce_single_negative(cos_pos, cos_neg, tau):
    pos = math.exp(cos_pos / tau)
    return -math.log(pos / (pos + math.exp(cos_neg / tau)))


def rectified_single_voxel(target, view, reference):
    d = kl(reference, view)
    lp = -sum(t * math.log(v) for t, v in zip(target, view))
    return math.exp(-d) * lp + d


def main():
    values = {
        "kl_09_01_vs_05_05": kl([0.9, 0.1], [0.5, 0.5]),
        "sharpen_1_0_T05": softmax([1.0, 0.0], 0.5),
        "info_nce_pos1_neg0_tau01": info_nce_single_negative(1.0, 0.0, 0.1),
        "rectified_single_voxel": rectified_single_voxel([0.9, 0.1], [0.5, 0.5], [0.9, 0.1]),
    }
    out = pathlib.Path(__file__).with_name("hand_values.json")
    out.write_text(json.dumps(values, indent=2) + "\n")
    for k, v in values.items():
        print(f"{k}: {v}")


if __name__ == "__main__":
    main()
