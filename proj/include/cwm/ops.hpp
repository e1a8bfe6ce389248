#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cwm/tape.hpp"

// Differentiable operator set. All ops validate shapes (GraphError) and record
// onto the tape of their first input.
namespace cwm::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var relu(Var x);
/// max(0, x); same op as relu, named for loss code.
inline Var hinge(Var x) { return relu(x); }
Var leaky_relu(Var x, double slope = 0.01);
Var sigmoid(Var x);
Var tanh(Var x);

/// x [N, in], w [out, in], b [out] -> [N, out]
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);
/// x [N, C, H, W], w [O, C, k, k], b [O] -> [N, O, H', W']
Var conv2d(Var x, Var w, std::optional<Var> b, int stride, int pad);
/// Normalizes over the last axis; gain/bias have that axis' length.
Var layer_norm(Var x, std::optional<Var> gain = std::nullopt, std::optional<Var> bias = std::nullopt,
               double eps = 1e-5);

/// Concatenates along the last axis; leading dims must agree.
Var concat(std::span<const Var> parts);
inline Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var sum(Var x);
Var mean(Var x);
/// [..., D] -> [...]
Var row_sum(Var x);
/// Row-wise squared Euclidean distance over the last axis: [..., D] -> [...]
Var squared_distance(Var a, Var b);

Var reshape(Var x, Shape shape);
/// Selects rows along axis 0 (repeats allowed); backward scatter-adds.
Var gather_rows(Var x, std::vector<int> rows);
/// out[segment[i]] += x[i] over axis 0; segments with no rows are zero.
Var segment_sum(Var x, std::vector<int> segment, int segments);

/// One GRU step, gate rows ordered (reset, update, new):
///   r = s(W_ir x + b_ir + W_hr h + b_hr), z = s(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn)),  h' = (1 - z) * n + z * h
Var gru_cell(Var x, Var h, Var w_ih, Var w_hh, Var b_ih, Var b_hh);

/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::vector<int> labels);

/// Name-based dispatch for unary ops and reductions ("relu", "sum", ...).
/// Unknown names raise GraphError.
Var apply(std::string_view op, Var x);
/// Name-based dispatch for same-shape binary ops ("add", "sub", "mul", "squared_distance").
Var apply(std::string_view op, Var a, Var b);

}  // namespace cwm::ad
