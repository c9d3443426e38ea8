"""Build each decoder block on its own and watch its defining behavior.

The decoder is three ideas composed: windowed attention refined at half
width (LCRM), gated fusion of a deep and a shallow map (CFFM), and a
spatial-detail injection that starts as an exact identity (SISM). Each
section constructs one block with a live parameter store, pushes a random
map through, and checks the property that makes the block what it is.
"""

import numpy as np

from lightformer.blocks import (
    CFFM, LCRM, SISM, BlockConfig, GateWeights, channel_shuffle,
)
from lightformer.params import ParamStore
from lightformer.rng import stream
from lightformer.tensor import Tensor


def fresh(ctor, *args, seed=0, **kwargs):
    store = ParamStore()
    block = ctor(store, *args, **kwargs)
    store.init(seed=seed)
    return store, block


def main():
    cfg = BlockConfig(channels=16, window_size=2, heads=2)
    x = Tensor(stream(0, "tour").standard_normal((1, 16, 8, 8)).astype(np.float32))

    # LCRM: half the channels take the window-attention path, half the
    # convolutional path; fusion, shuffle, and a channel gate put the width
    # back together.
    _, lcrm = fresh(LCRM, "lcrm", cfg)
    y = lcrm.forward(x)
    print(f"LCRM: {x.shape} -> {y.shape} (width preserved)")

    # Channel shuffle interleaves the two halves; with the complementary
    # group count it is its own inverse.
    z = channel_shuffle(channel_shuffle(x, 2), 8)
    print(f"shuffle twice restores the input: {np.array_equal(z.data, x.data)}")

    # CFFM: the deep map is upsampled exactly 2x, a softmax pair weighs the
    # two sources, and the weights always sum to one.
    store, cffm = fresh(CFFM, "cffm", cfg, in_channels=24)
    deep = Tensor(stream(1, "deep").standard_normal((1, 16, 4, 4)).astype(np.float32))
    skip = Tensor(stream(2, "skip").standard_normal((1, 24, 8, 8)).astype(np.float32))
    fused = cffm.forward(deep, skip)
    a, b = cffm.gate.normalized()
    print(f"CFFM: deep {deep.shape} + skip {skip.shape} -> {fused.shape}, "
          f"gates {float(a.data):.3f} + {float(b.data):.3f} = 1")

    # Fresh gate weights start at zero, so both sources weigh 1/2 until
    # training moves them.
    gstore = ParamStore()
    gate = GateWeights(gstore, "g")
    gstore.init(seed=0)
    ga, gb = gate.normalized()
    print(f"untrained gate pair: {float(ga.data):.3f}, {float(gb.data):.3f}")

    # SISM: the two blend gates initialize to zero, so an untrained block is
    # a bit-exact identity no matter what its convs contain.
    sstore, sism = fresh(SISM, "sism", cfg, seed=3)
    for name, t in sstore.trainable():
        if not name.endswith(("gates.alpha", "gates.beta")):
            t.data = stream(4, "fill", name).standard_normal(t.shape).astype(np.float32)
    out = sism.forward(x)
    print(f"SISM at init is the identity: {np.array_equal(out.data, x.data)}")

    # Nudge the gates and the detail path wakes up.
    sstore["sism.gates.alpha"].data[...] = 0.5
    sstore["sism.gates.beta"].data[...] = 0.5
    moved = sism.forward(x)
    print(f"SISM with opened gates changes the map: "
          f"{not np.array_equal(moved.data, x.data)}")


if __name__ == "__main__":
    main()
