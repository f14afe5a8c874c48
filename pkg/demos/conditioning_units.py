"""The four conditioning layouts and their flat encodings.

Each task wires a prompt embedding, context frames, and 0/1 masks into one
conditioning unit (mask 1 = generate this frame, 0 = frame given as
context). The flat encoding of that unit is what the generator consumes.
"""

import numpy as np

from otdlab import gen_model as gmod


def describe(name, vcu):
    cond = gmod.encode_condition(vcu)
    given = int(np.sum(vcu.masks == 0.0))
    print(f"{name:>5}: {vcu.n_frames} frames ({given} given as context), "
          f"prompt len {len(vcu.prompt)}, masks {vcu.masks.astype(int)}, "
          f"encoding length {cond.size}")


def main():
    n, d = 4, 2
    rng = np.random.default_rng(0)
    prompt = np.full(4, 0.1)

    describe("t2v", gmod.build_vcu("t2v", prompt, n, d))
    describe("r2v", gmod.build_vcu("r2v", prompt, n, d,
                                   ref_frames=rng.normal(0, 1, (2, d))))
    describe("v2v", gmod.build_vcu("v2v", prompt, n, d,
                                   frames=rng.normal(0, 1, (n, d))))
    describe("mv2v", gmod.build_vcu("mv2v", prompt, n, d,
                                    frames=rng.normal(0, 1, (n, d)),
                                    masks=[1.0, 0.0, 0.0, 1.0]))

    # generated frames are zeroed out of the encoding, so two units that
    # differ only in to-be-generated content encode identically
    a = gmod.build_vcu("mv2v", prompt, n, d,
                       frames=[[9.0, 9.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
                       masks=[1.0, 0.0, 0.0, 1.0])
    b = gmod.build_vcu("mv2v", prompt, n, d,
                       frames=[[7.0, 7.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
                       masks=[1.0, 0.0, 0.0, 1.0])
    same = np.array_equal(gmod.encode_condition(a), gmod.encode_condition(b))
    print(f"\nencodings ignore to-be-generated slots: {same}")
    # but flipping a mask changes the encoding even with identical frames
    c = gmod.build_vcu("mv2v", prompt, n, d, frames=b.frames,
                       masks=[1.0, 1.0, 0.0, 1.0])
    flipped = np.array_equal(gmod.encode_condition(b), gmod.encode_condition(c))
    print(f"mask flips are visible to the generator: {not flipped}")


if __name__ == "__main__":
    main()
