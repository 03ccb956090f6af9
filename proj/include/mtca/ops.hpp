#pragma once

#include <span>
#include <vector>

#include "mtca/rng.hpp"
#include "mtca/tensor.hpp"

// Differentiable operations over Tape variables. Matrices are [rows, cols];
// sequence operations treat rows as positions and columns as channels.
namespace mtca::ops {

// Per-row validity flags; an empty mask means every row is valid.
using RowMask = std::vector<bool>;

Var matmul(Var a, Var b);
// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// Adds a [1, cols] row to every row of a.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);

Var softmax(Var x, int axis = -1);

// Row-wise attention weights. Rows flagged in `selected` get a softmax over
// valid keys; other valid query rows get uniform weight over valid keys (so
// weights · V is the mean of valid values); invalid query rows are zero.
// Only selected rows carry gradient.
Var attention_weights(Var scores, const RowMask& key_valid, const RowMask& query_valid,
                      const std::vector<bool>& selected);

// x: [n, c_in]; kernel: [width, c_in, c_out]; zero padding on both ends.
Var conv1d(Var x, Var kernel, std::size_t padding);

struct PoolResult {
    Var out;
    RowMask valid;
};
// Stride-2, width-2 max pool over rows; ties route to the lower index and
// invalid rows never win.
PoolResult maxpool1d(Var x, const RowMask& valid = {});

// x if x > 0 else a·x with a learnable [1,1] slope.
Var pelu(Var x, Var slope);

// Inverted dropout; identity when !training or rate == 0.
Var dropout(Var x, double rate, Rng& rng, bool training);

Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);

// Zeroes invalid rows.
Var mask_rows(Var x, const RowMask& valid);
// Mean over valid rows -> [1, cols].
Var mean_rows(Var x, const RowMask& valid = {});

inline constexpr double kProbabilityFloor = 1e-12;

// -sum_c target(c) * log(max(q(c), floor)).
Var cross_entropy(Var q, std::span<const double> target);
// sum_c p(c) * (log p(c) - log q(c)), both arguments clamped at the floor.
Var kl_divergence(Var p, Var q);

}  // namespace mtca::ops
