"""Write the saved-activation chain of one transformer layer for a given token count."""

import argparse

from ditsched.mlac import ActGraph, ActNode, write_graph


def layer_chain(s: int, d: int, ffn_mult: float = 4.0, elem: int = 2) -> ActGraph:
    act = s * d * elem
    f = int(ffn_mult * d)
    return ActGraph(
        (
            ActNode("norm1_in", 5 * s * d, act, False, True),
            ActNode("qkv", 6 * s * d * d, 3 * act, True, False),
            ActNode("attn_out", 4 * s * s * d, act, True, False),
            ActNode("proj", 2 * s * d * d, act, True, False),
            ActNode("norm2_in", 5 * s * d, act, False, True),
            ActNode("ffn_up", 2 * s * d * f, s * f * elem, True, False),
            ActNode("gelu", 8 * s * f, s * f * elem, False, False),
            ActNode("ffn_down", 2 * s * d * f, act, True, False),
        )
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tokens", type=int, default=32768)
    ap.add_argument("--hidden", type=int, default=3584)
    ap.add_argument("--out", default="configs/act_graph.csv")
    args = ap.parse_args()
    write_graph(layer_chain(args.tokens, args.hidden), args.out)


if __name__ == "__main__":
    main()
