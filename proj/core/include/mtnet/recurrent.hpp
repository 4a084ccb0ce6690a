// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mtnet/tensor.hpp"

namespace mtn {

class ParamStore;

enum class CellKind { rnn, lstm, lstm_peephole, gru };

std::string_view to_string(CellKind kind);
CellKind parse_cell_kind(std::string_view name);

/// Gate names in parameter order: gru {z, r, h}; lstm {i, f, o, g}; rnn {h}.
const std::vector<std::string>& gate_names(CellKind kind);

/// One affine map over the concatenation [state, input].
struct GateParams {
  Tensor weight;  // hidden x (hidden + input)
  Tensor bias;    // hidden
};

struct CellParams {
  CellKind kind = CellKind::gru;
  std::size_t hidden = 0;
  std::size_t input = 0;
  std::vector<GateParams> gates;  // ordered as gate_names(kind)
  std::vector<Tensor> peepholes;  // lstm_peephole only: diagonal weights for i, f, o

  /// Throws DimensionError when any gate disagrees with (hidden, input).
  void validate() const;
  std::size_t param_count() const;
};

/// Uniform(-1/sqrt(hidden + input), +1/sqrt(hidden + input)) init for every
/// weight, bias and peephole; registered in `store` under `prefix`.{gate}.weight etc.
CellParams make_cell_params(CellKind kind, std::size_t hidden, std::size_t input, std::mt19937_64& rng,
                            ParamStore& store, const std::string& prefix);
/// Same layout with every value zero and no registration.
CellParams zero_cell_params(CellKind kind, std::size_t hidden, std::size_t input);

struct CellState {
  Tensor hidden;  // [hidden] or [N x hidden]
  Tensor cell;    // LSTM kinds only
};

CellState zero_state(const CellParams& params, std::size_t batch, bool batched);

/// One recurrence step. GRU:
///   z = sigmoid(W_z [h, x] + b_z)
///   r = sigmoid(W_r [h, x] + b_r)
///   h~ = tanh(W_h [r * h, x] + b_h)
///   h' = z * h + (1 - z) * h~
CellState cell_step(const Tensor& x, const CellState& state, const CellParams& params);

/// Two stacked cells over a sequence [C x T] (or [N x C x T]) from zero
/// states; returns the second layer's hidden states stacked over T.
Tensor run_dual_layer(const Tensor& seq, const CellParams& first, const CellParams& second);

}  // namespace mtn
