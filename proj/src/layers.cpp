#include "ubp/layers.hpp"

#include <cmath>

#include "ubp/error.hpp"

namespace ubp::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Shape infer_one(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const DenseLayer& d) -> Shape {
            if (in.size() != 1 || in[0] != d.in) {
              throw config_error("dense(" + std::to_string(d.in) + ") cannot take " + to_string(in));
            }
            return {d.out};
          },
          [&](const Conv1dLayer& c) -> Shape {
            if (in.size() != 2 || in[0] != c.in_channels || in[1] + 2 * c.padding < c.kernel) {
              throw config_error("conv1d(" + std::to_string(c.in_channels) + " ch, k=" +
                                 std::to_string(c.kernel) + ") cannot take " + to_string(in));
            }
            return {c.out_channels, in[1] + 2 * c.padding - c.kernel + 1};
          },
          [&](const ActivationLayer&) -> Shape { return in; },
          [&](const DropoutLayer& d) -> Shape {
            if (d.p < 0.0 || d.p >= 1.0) throw config_error("dropout probability must lie in [0, 1)");
            return in;
          },
          [&](const PoolLayer& p) -> Shape {
            if (in.size() != 2 || p.size == 0 || in[1] < p.size) {
              throw config_error("pool(" + std::to_string(p.size) + ") cannot take " + to_string(in));
            }
            return {in[0], in[1] / p.size};
          },
          [&](const FlattenLayer&) -> Shape { return {numel(in)}; },
      },
      layer);
}

using ParamBinder = std::function<Var(std::size_t)>;

Var apply_stack(const std::vector<Layer>& layers, Var x, const ParamBinder& bind,
                std::size_t& next_param, bool dropout_active, Rng& rng) {
  for (const auto& layer : layers) {
    x = std::visit(
        Overloaded{
            [&](const DenseLayer&) {
              Var w = bind(next_param++);
              Var b = bind(next_param++);
              return dense(x, w, b);
            },
            [&](const Conv1dLayer& c) {
              Var w = bind(next_param++);
              Var b = bind(next_param++);
              return conv1d(x, w, b, c.padding);
            },
            [&](const ActivationLayer& a) {
              return a.kind == ActivationKind::kRelu ? relu(x) : nn::tanh(x);
            },
            [&](const DropoutLayer& d) { return dropout(x, d.p, dropout_active, rng); },
            [&](const PoolLayer& p) { return avg_pool1d(x, p.size); },
            [&](const FlattenLayer&) { return flatten(x); },
        },
        layer);
  }
  return x;
}

ForwardPass forward_impl(Tape& tape, const NetworkSpec& spec, const ParamBinder& bind,
                         Var input, bool dropout_active, std::uint64_t seed) {
  Shape expected = spec.input_shape;
  const auto& got = input.shape();
  if (got.size() != expected.size() + 1 ||
      !std::equal(expected.begin(), expected.end(), got.begin() + 1)) {
    throw config_error("network '" + spec.name + "' expects per-sample input " +
                       to_string(expected) + ", got batch " + to_string(got));
  }
  Rng rng(seed);
  std::size_t next = 0;
  ForwardPass pass;
  Var features;
  if (spec.is_pulse_network()) {
    Var ppg = apply_stack(spec.reconstruction, input, bind, next, dropout_active, rng);
    Var vpg = diff(ppg);
    Var apg = diff(vpg);
    pass.pulse = flatten(ppg);
    std::array<Var, 3> parts;
    const std::array<Var, 3> signals{ppg, vpg, apg};
    for (std::size_t k = 0; k < 3; ++k) {
      parts[k] = flatten(apply_stack(spec.branches[k], signals[k], bind, next, dropout_active, rng));
    }
    features = concat(parts);
  } else {
    features = input;
  }
  pass.head = clamp_log_variance(apply_stack(spec.head, features, bind, next, dropout_active, rng));
  (void)tape;
  return pass;
}

void add_layer_params(const std::vector<Layer>& layers, const std::string& prefix,
                      ParameterSet& params) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string tag = prefix + "." + std::to_string(i);
    if (const auto* d = std::get_if<DenseLayer>(&layers[i])) {
      params.emplace_back(tag + ".weight", Shape{d->out, d->in});
      params.emplace_back(tag + ".bias", Shape{d->out});
    } else if (const auto* c = std::get_if<Conv1dLayer>(&layers[i])) {
      params.emplace_back(tag + ".weight", Shape{c->out_channels, c->in_channels, c->kernel});
      params.emplace_back(tag + ".bias", Shape{c->out_channels});
    }
  }
}

nlohmann::json layer_to_json(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const DenseLayer& d) {
            return nlohmann::json{{"type", "dense"}, {"in", d.in}, {"out", d.out}};
          },
          [](const Conv1dLayer& c) {
            return nlohmann::json{{"type", "conv1d"},
                                  {"in_channels", c.in_channels},
                                  {"out_channels", c.out_channels},
                                  {"kernel", c.kernel},
                                  {"padding", c.padding}};
          },
          [](const ActivationLayer& a) {
            return nlohmann::json{{"type", "activation"},
                                  {"kind", a.kind == ActivationKind::kRelu ? "relu" : "tanh"}};
          },
          [](const DropoutLayer& d) { return nlohmann::json{{"type", "dropout"}, {"p", d.p}}; },
          [](const PoolLayer& p) { return nlohmann::json{{"type", "pool"}, {"size", p.size}}; },
          [](const FlattenLayer&) { return nlohmann::json{{"type", "flatten"}}; },
      },
      layer);
}

Layer layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dense") return DenseLayer{j.at("in"), j.at("out")};
  if (type == "conv1d") {
    return Conv1dLayer{j.at("in_channels"), j.at("out_channels"), j.at("kernel"), j.at("padding")};
  }
  if (type == "activation") {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "relu") return ActivationLayer{ActivationKind::kRelu};
    if (kind == "tanh") return ActivationLayer{ActivationKind::kTanh};
    throw config_error("unknown activation '" + kind + "'");
  }
  if (type == "dropout") return DropoutLayer{j.at("p")};
  if (type == "pool") return PoolLayer{j.at("size")};
  if (type == "flatten") return FlattenLayer{};
  throw config_error("unknown layer type '" + type + "'");
}

nlohmann::json stack_to_json(const std::vector<Layer>& layers) {
  auto arr = nlohmann::json::array();
  for (const auto& l : layers) arr.push_back(layer_to_json(l));
  return arr;
}

std::vector<Layer> stack_from_json(const nlohmann::json& j) {
  std::vector<Layer> layers;
  for (const auto& item : j) layers.push_back(layer_from_json(item));
  return layers;
}

}  // namespace

Shape NetworkSpec::infer(const std::vector<Layer>& layers, Shape input) {
  for (const auto& l : layers) input = infer_one(l, input);
  return input;
}

void NetworkSpec::validate() const {
  if (head.empty() || !std::holds_alternative<DenseLayer>(head.back()) ||
      std::get<DenseLayer>(head.back()).out != 4) {
    throw config_error("network '" + name + "' head must end in a 4-output dense layer");
  }
  Shape features = input_shape;
  if (is_pulse_network()) {
    const Shape pulse = infer(reconstruction, input_shape);
    if (pulse.size() != 2 || pulse[0] != 1 || pulse[1] < 3) {
      throw config_error("reconstruction must produce a [1, L] pulse with L >= 3, got " +
                         to_string(pulse));
    }
    std::size_t total = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      total += numel(infer(branches[k], {1, pulse[1] - k}));
    }
    features = {total};
  }
  const Shape out = infer(head, features);
  if (out != Shape{4}) throw config_error("head output must be [4], got " + to_string(out));
}

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["input_shape"] = spec.input_shape;
  j["reconstruction"] = stack_to_json(spec.reconstruction);
  j["branches"] = nlohmann::json::array();
  for (const auto& b : spec.branches) j["branches"].push_back(stack_to_json(b));
  j["head"] = stack_to_json(spec.head);
  return j;
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.reconstruction = stack_from_json(j.at("reconstruction"));
  const auto& branches = j.at("branches");
  if (branches.size() != 3) throw config_error("network spec needs exactly 3 branches");
  for (std::size_t k = 0; k < 3; ++k) spec.branches[k] = stack_from_json(branches[k]);
  spec.head = stack_from_json(j.at("head"));
  spec.validate();
  return spec;
}

ParameterSet init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParameterSet params;
  add_layer_params(spec.reconstruction, "reconstruction", params);
  for (std::size_t k = 0; k < 3; ++k) {
    add_layer_params(spec.branches[k], "branch" + std::to_string(k), params);
  }
  add_layer_params(spec.head, "head", params);
  Rng rng(seed);
  for (auto& p : params) {
    if (p.shape.size() == 1) continue;  // biases start at zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < p.shape.size(); ++d) fan_in *= p.shape[d];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = rng.uniform(-bound, bound);
  }
  return params;
}

ForwardPass forward(Tape& tape, const NetworkSpec& spec, ParameterSet& params, Var input,
                    bool dropout_active, std::uint64_t seed) {
  auto bind = [&](std::size_t i) -> Var {
    if (i >= params.size()) throw config_error("parameter set smaller than network spec");
    return tape.parameter(params[i]);
  };
  return forward_impl(tape, spec, bind, input, dropout_active, seed);
}

Prediction predict(const NetworkSpec& spec, const ParameterSet& params,
                   std::span<const double> input, std::size_t batch, bool dropout_active,
                   std::uint64_t seed) {
  Tape tape;
  Shape shape{batch};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  Var x = tape.constant(shape, {input.begin(), input.end()});
  auto bind = [&](std::size_t i) -> Var {
    if (i >= params.size()) throw config_error("parameter set smaller than network spec");
    return tape.constant(params[i].shape, params[i].value);
  };
  const ForwardPass pass = forward_impl(tape, spec, bind, x, dropout_active, seed);
  Prediction out;
  const auto& h = pass.head.value();
  out.outputs.resize(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    out.outputs[n] = {h[4 * n], h[4 * n + 1], h[4 * n + 2], h[4 * n + 3]};
  }
  if (pass.pulse) {
    out.pulse = pass.pulse->value();
    out.pulse_length = pass.pulse->shape()[1];
  }
  return out;
}

NetworkSpec rppg_network(std::size_t rois, std::size_t frames, double p) {
  NetworkSpec spec;
  spec.name = "rppg";
  spec.input_shape = {rois, frames};
  const std::size_t l1 = frames / 3;
  const std::size_t l2 = l1 / 2;
  spec.head = {
      Conv1dLayer{rois, 8, 7, 3}, ActivationLayer{}, PoolLayer{3}, DropoutLayer{p},
      Conv1dLayer{8, 8, 5, 2},    ActivationLayer{}, PoolLayer{2}, DropoutLayer{p},
      FlattenLayer{},             DenseLayer{8 * l2, 16}, ActivationLayer{}, DropoutLayer{p},
      DenseLayer{16, 4},
  };
  spec.validate();
  return spec;
}

NetworkSpec ppg_network(std::size_t blocks, std::size_t frames, double p) {
  NetworkSpec spec;
  spec.name = "ppg";
  spec.input_shape = {3 * blocks, frames};
  spec.reconstruction = {
      Conv1dLayer{3 * blocks, 4, 1, 0}, ActivationLayer{ActivationKind::kTanh},
      Conv1dLayer{4, 8, 5, 2},          ActivationLayer{},
      Conv1dLayer{8, 1, 5, 2},
  };
  std::size_t features = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    spec.branches[k] = {Conv1dLayer{1, 4, 5, 2}, ActivationLayer{}, PoolLayer{3}, FlattenLayer{}};
    features += 4 * ((frames - k) / 3);
  }
  spec.head = {DenseLayer{features, 16}, ActivationLayer{}, DropoutLayer{p}, DenseLayer{16, 4}};
  spec.validate();
  return spec;
}

NetworkSpec image_network(std::size_t appearance_dim, double p) {
  NetworkSpec spec;
  spec.name = "img";
  spec.input_shape = {appearance_dim};
  spec.head = {
      DenseLayer{appearance_dim, 32}, ActivationLayer{}, DropoutLayer{p},
      DenseLayer{32, 32},             ActivationLayer{}, DropoutLayer{p},
      DenseLayer{32, 4},
  };
  spec.validate();
  return spec;
}

}  // namespace ubp::nn
