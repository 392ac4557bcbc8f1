"""Opcode table shared by the tape builder and both evaluator backends.

The Cython evaluator hardcodes the same integer values; keep the two in
sync when adding primitives.
"""

OP_LEAF = 0
OP_CONST = 1
OP_ADD = 2
OP_MUL = 3
OP_MATMUL = 4
OP_EXP = 5
OP_LOG = 6
OP_NEG = 7
OP_SUM = 8
OP_MEAN = 9
OP_ELU = 10
OP_RELU = 11
OP_XENT = 12
OP_SQNORM = 13
OP_L1NORM = 14
OP_SCALE = 15

OP_NAMES = {
    OP_LEAF: "leaf",
    OP_CONST: "const",
    OP_ADD: "add",
    OP_MUL: "mul",
    OP_MATMUL: "matmul",
    OP_EXP: "exp",
    OP_LOG: "log",
    OP_NEG: "neg",
    OP_SUM: "sum",
    OP_MEAN: "mean",
    OP_ELU: "elu",
    OP_RELU: "relu",
    OP_XENT: "softmax-cross-entropy",
    OP_SQNORM: "squared-norm",
    OP_L1NORM: "l1-norm",
    OP_SCALE: "scale",
}
