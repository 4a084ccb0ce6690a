// SPDX-License-Identifier: Apache-2.0
#include "mtnet/recurrent.hpp"

#include <cmath>

#include "mtnet/ops.hpp"
#include "mtnet/param_store.hpp"

namespace mtn {

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
    case CellKind::lstm_peephole: return "lstm_peephole";
    case CellKind::gru: return "gru";
  }
  return "gru";
}

CellKind parse_cell_kind(std::string_view name) {
  if (name == "rnn") return CellKind::rnn;
  if (name == "lstm") return CellKind::lstm;
  if (name == "lstm_peephole") return CellKind::lstm_peephole;
  if (name == "gru") return CellKind::gru;
  throw ConfigError("unknown recurrent cell kind '" + std::string(name) + "'");
}

const std::vector<std::string>& gate_names(CellKind kind) {
  static const std::vector<std::string> gru{"z", "r", "h"};
  static const std::vector<std::string> lstm{"i", "f", "o", "g"};
  static const std::vector<std::string> rnn{"h"};
  switch (kind) {
    case CellKind::rnn: return rnn;
    case CellKind::lstm:
    case CellKind::lstm_peephole: return lstm;
    case CellKind::gru: return gru;
  }
  return gru;
}

void CellParams::validate() const {
  if (gates.size() != gate_names(kind).size()) {
    throw DimensionError(std::string(to_string(kind)) + " cell needs " + std::to_string(gate_names(kind).size()) +
                         " gates, got " + std::to_string(gates.size()));
  }
  for (std::size_t g = 0; g < gates.size(); ++g) {
    const Shape ws{hidden, hidden + input};
    if (gates[g].weight.shape() != ws || gates[g].bias.shape() != Shape{hidden}) {
      throw DimensionError("gate '" + gate_names(kind)[g] + "' expects weight " + shape_str(ws) + " and bias [" +
                           std::to_string(hidden) + "]");
    }
  }
  const std::size_t peeps = kind == CellKind::lstm_peephole ? 3 : 0;
  if (peepholes.size() != peeps) throw DimensionError("peephole count mismatch");
  for (const auto& p : peepholes) {
    if (p.shape() != Shape{hidden}) throw DimensionError("peephole weights must be [hidden]");
  }
}

std::size_t CellParams::param_count() const {
  std::size_t n = 0;
  for (const auto& g : gates) n += g.weight.numel() + g.bias.numel();
  for (const auto& p : peepholes) n += p.numel();
  return n;
}

namespace {

CellParams make_layout(CellKind kind, std::size_t hidden, std::size_t input,
                       const std::function<Tensor(const std::string&, Shape)>& make) {
  CellParams p;
  p.kind = kind;
  p.hidden = hidden;
  p.input = input;
  for (const auto& name : gate_names(kind)) {
    GateParams g;
    g.weight = make(name + ".weight", {hidden, hidden + input});
    g.bias = make(name + ".bias", {hidden});
    p.gates.push_back(std::move(g));
  }
  if (kind == CellKind::lstm_peephole) {
    for (const char* name : {"peep_i", "peep_f", "peep_o"}) p.peepholes.push_back(make(name, {hidden}));
  }
  return p;
}

}  // namespace

CellParams make_cell_params(CellKind kind, std::size_t hidden, std::size_t input, std::mt19937_64& rng,
                            ParamStore& store, const std::string& prefix) {
  if (hidden == 0) throw ConfigError("recurrent hidden size must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden + input));
  std::uniform_real_distribution<double> dist(-bound, bound);
  return make_layout(kind, hidden, input, [&](const std::string& name, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return store.add(prefix + "." + name, Tensor(std::move(shape), std::move(v)));
  });
}

CellParams zero_cell_params(CellKind kind, std::size_t hidden, std::size_t input) {
  return make_layout(kind, hidden, input, [](const std::string&, Shape shape) { return Tensor::zeros(std::move(shape)); });
}

CellState zero_state(const CellParams& params, std::size_t batch, bool batched) {
  const Shape s = batched ? Shape{batch, params.hidden} : Shape{params.hidden};
  CellState st;
  st.hidden = Tensor::zeros(s);
  if (params.kind == CellKind::lstm || params.kind == CellKind::lstm_peephole) st.cell = Tensor::zeros(s);
  return st;
}

CellState cell_step(const Tensor& x, const CellState& state, const CellParams& params) {
  params.validate();
  if (x.rank() < 1 || x.shape().back() != params.input) {
    throw DimensionError("cell_step: input feature axis must have " + std::to_string(params.input) + " entries, got " +
                         shape_str(x.shape()));
  }
  if (state.hidden.shape().back() != params.hidden || state.hidden.rank() != x.rank()) {
    throw DimensionError("cell_step: state shape " + shape_str(state.hidden.shape()) + " does not match hidden size " +
                         std::to_string(params.hidden));
  }
  const auto gate = [&](std::size_t g, const Tensor& state_part) {
    return linear(concat_features(state_part, x), params.gates[g].weight, params.gates[g].bias);
  };
  const Tensor& h = state.hidden;
  switch (params.kind) {
    case CellKind::rnn:
      return {tanh(gate(0, h)), {}};
    case CellKind::gru: {
      const Tensor z = sigmoid(gate(0, h));
      const Tensor r = sigmoid(gate(1, h));
      const Tensor candidate = tanh(gate(2, mul(r, h)));
      return {add(mul(z, h), mul(affine(z, -1.0, 1.0), candidate)), {}};
    }
    case CellKind::lstm:
    case CellKind::lstm_peephole: {
      if (!state.cell.defined() || state.cell.shape() != h.shape()) {
        throw DimensionError("cell_step: LSTM state needs a cell vector shaped like the hidden state");
      }
      const bool peep = params.kind == CellKind::lstm_peephole;
      const Tensor& c = state.cell;
      Tensor pre_i = gate(0, h), pre_f = gate(1, h);
      if (peep) {
        pre_i = add(pre_i, mul_rowwise(c, params.peepholes[0]));
        pre_f = add(pre_f, mul_rowwise(c, params.peepholes[1]));
      }
      const Tensor i = sigmoid(pre_i);
      const Tensor f = sigmoid(pre_f);
      const Tensor g = tanh(gate(3, h));
      const Tensor c_next = add(mul(f, c), mul(i, g));
      Tensor pre_o = gate(2, h);
      if (peep) pre_o = add(pre_o, mul_rowwise(c_next, params.peepholes[2]));
      const Tensor o = sigmoid(pre_o);
      return {mul(o, tanh(c_next)), c_next};
    }
  }
  throw ConfigError("unhandled cell kind");
}

Tensor run_dual_layer(const Tensor& seq, const CellParams& first, const CellParams& second) {
  if (seq.rank() != 2 && seq.rank() != 3) throw DimensionError("run_dual_layer: sequence must be C x T or N x C x T");
  const bool batched = seq.rank() == 3;
  const std::size_t batch = batched ? seq.dim(0) : 1;
  const std::size_t channels = seq.dim(batched ? 1 : 0);
  const std::size_t steps = seq.dim(batched ? 2 : 1);
  if (first.input != channels) {
    throw DimensionError("run_dual_layer: first layer expects " + std::to_string(first.input) +
                         " input features, sequence has " + std::to_string(channels) + " channels");
  }
  if (first.hidden != second.input) throw DimensionError("run_dual_layer: layer-1 hidden size must equal layer-2 input size");
  if (steps == 0) throw DimensionError("run_dual_layer: empty sequence on T axis");
  CellState s1 = zero_state(first, batch, batched);
  CellState s2 = zero_state(second, batch, batched);
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    s1 = cell_step(time_step(seq, t), s1, first);
    s2 = cell_step(s1.hidden, s2, second);
    outputs.push_back(s2.hidden);
  }
  return stack_steps(outputs);
}

}  // namespace mtn
