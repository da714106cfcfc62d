"""Independent closed-form oracles, written from the counting rules alone
(they never touch the graph or cost-model code)."""

from fractions import Fraction


def resnet20_traffic(bits, batch=1, traffic="fused"):
    """(flops, bytes) of CIFAR ResNet-20 on 3x32x32 inputs.

    ``bits`` holds 20 weight bit-widths in layer order (stem, 18 block
    convs, classifier).  Convolutions are 3x3/pad 1 without bias; the
    classifier is Linear(64 -> 10) with bias.  Shape-changing blocks use the
    parameter-free shortcut.
    """
    it = iter(bits)
    flops = 0
    nbytes = Fraction(0)

    def conv(cin, cout, h_in, h_out):
        nonlocal flops, nbytes
        b = next(it)
        flops += 2 * 9 * cin * cout * h_out * h_out * batch
        nbytes += Fraction(9 * cin * cout * b, 8).__ceil__()
        nbytes += 4 * batch * (cin * h_in * h_in + cout * h_out * h_out)

    def elementwise(n_out, per_elem, reads=1):
        nonlocal flops, nbytes
        flops += per_elem * n_out * batch
        if traffic == "unfused":
            nbytes += 4 * batch * n_out * (reads + 1)

    conv(3, 16, 32, 32)
    elementwise(16 * 32 * 32, 2)  # bn
    elementwise(16 * 32 * 32, 1)  # relu
    c, h = 16, 32
    for width in (16, 32, 64):
        for k in range(3):
            h_out = h // 2 if (width != 16 and k == 0) else h
            n = width * h_out * h_out
            conv(c, width, h, h_out)
            elementwise(n, 2)
            elementwise(n, 1)
            conv(width, width, h_out, h_out)
            elementwise(n, 2)
            elementwise(n, 1, reads=2)  # add
            elementwise(n, 1)
            c, h = width, h_out
    # global average pool: one FLOP per input element, (64,8,8) -> (64,1,1)
    flops += 64 * 8 * 8 * batch
    if traffic == "unfused":
        nbytes += 4 * batch * (64 * 8 * 8 + 64)
    b = next(it)
    flops += 2 * 64 * 10 * batch
    nbytes += Fraction(64 * 10 * b, 8).__ceil__() + 4 * 10 + 4 * batch * (64 + 10)
    return flops, int(nbytes)
