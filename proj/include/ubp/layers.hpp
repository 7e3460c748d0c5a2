#pragma once

// Network descriptions and the forward pass that turns a NetworkSpec plus
// parameters into a recorded graph.

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubp/neural.hpp"

namespace ubp::nn {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
};

struct Conv1dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t padding = 0;
};

enum class ActivationKind { kRelu, kTanh };

struct ActivationLayer {
  ActivationKind kind = ActivationKind::kRelu;
};

struct DropoutLayer {
  double p = 0.0;
};

struct PoolLayer {
  std::size_t size = 2;
};

struct FlattenLayer {};

using Layer = std::variant<DenseLayer, Conv1dLayer, ActivationLayer, DropoutLayer, PoolLayer,
                           FlattenLayer>;

// A heteroscedastic regressor is `head` applied to the input. A pulse
// network first maps the input to a [1, L] PPG reconstruction, feeds PPG,
// VPG and APG through one branch each, concatenates the branch features and
// applies `head`. The head always ends in Dense(.., 4) whose log-variance
// outputs are clamped.
struct NetworkSpec {
  std::string name;
  Shape input_shape;  // per sample
  std::vector<Layer> reconstruction;
  std::array<std::vector<Layer>, 3> branches;
  std::vector<Layer> head;

  bool is_pulse_network() const { return !reconstruction.empty(); }
  /// Throws config_error when consecutive shapes are incompatible.
  void validate() const;
  /// Per-sample output shape of a layer stack.
  static Shape infer(const std::vector<Layer>& layers, Shape input);
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// Fan-in scaled uniform weights, zero biases.
ParameterSet init_parameters(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardPass {
  Var head;                  // [B, 4]: mu_sbp, s_sbp, mu_dbp, s_dbp
  std::optional<Var> pulse;  // [B, L] for pulse networks
};

/// Records the network on `tape`. With dropout_active every dropout layer
/// draws its mask from a generator seeded by `seed`.
ForwardPass forward(Tape& tape, const NetworkSpec& spec, ParameterSet& params, Var input,
                    bool dropout_active, std::uint64_t seed);

struct Prediction {
  std::vector<HeteroscedasticOutput> outputs;
  std::vector<double> pulse;  // batch x L, empty for plain regressors
  std::size_t pulse_length = 0;
};

/// Forward pass on a fresh tape without keeping the graph. `input` holds
/// `batch` samples laid out per input_shape. Read-only on params.
Prediction predict(const NetworkSpec& spec, const ParameterSet& params,
                   std::span<const double> input, std::size_t batch, bool dropout_active,
                   std::uint64_t seed);

// Scaled-down networks for the three modalities.
NetworkSpec rppg_network(std::size_t rois = 3, std::size_t frames = 150, double dropout = 0.2);
NetworkSpec ppg_network(std::size_t blocks = 224, std::size_t frames = 150, double dropout = 0.5);
NetworkSpec image_network(std::size_t appearance_dim = 8, double dropout = 0.5);

}  // namespace ubp::nn
