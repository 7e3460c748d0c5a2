#pragma once

// Minimal tape-based reverse-mode differentiation over dense tensors, the
// layer operations the BP networks need, the heteroscedastic and pulse
// losses, and Adam.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ubp/rng.hpp"
#include "ubp/signals.hpp"

namespace ubp::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

inline constexpr double kLogVarianceMin = -10.0;
inline constexpr double kLogVarianceMax = 10.0;

struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), value(numel(shape), 0.0),
        grad(value.size(), 0.0) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParameterSet = std::vector<ParamTensor>;

void zero_grad(ParameterSet& params);

class Tape;

// Lightweight handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  const Shape& shape() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Shape shape, std::vector<double> values);
  /// Records a leaf bound to `param`; backward accumulates into param.grad.
  Var parameter(ParamTensor& param);

  Var record(Shape shape, std::vector<double> values, BackwardFn backward);

  /// Reverse sweep from a scalar node. Throws usage_error when the tape is
  /// empty, the node is not scalar, or backward already ran.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  const std::vector<double>& value(std::size_t id) const { return nodes_[id].value; }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::vector<double>& grad(std::size_t id) { return nodes_[id].grad; }
  /// Constants carry no gradient buffer; ops skip accumulating into them.
  bool requires_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  const std::vector<double>& grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    BackwardFn backward;
    ParamTensor* param = nullptr;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- operations ------------------------------------------------------------
// Tensors carry a leading batch dimension: dense inputs are [B, F], conv
// inputs are [B, C, L].

Var dense(Var x, Var weight, Var bias);
Var conv1d(Var x, Var weight, Var bias, std::size_t padding);
Var relu(Var x);
Var tanh(Var x);
/// Inverted dropout; identity when !active or p == 0.
Var dropout(Var x, double p, bool active, Rng& rng);
Var avg_pool1d(Var x, std::size_t size);
Var flatten(Var x);
/// Concatenates [B, n_i] tensors along the feature axis.
Var concat(std::span<const Var> parts);
/// Forward difference along the last axis.
Var diff(Var x);
/// Clamps the log-variance columns (1 and 3) of a [B, 4] head output.
Var clamp_log_variance(Var x);
Var add(Var a, Var b);
Var scale(Var x, double factor);
/// Mean over all elements of (x - target)^2.
Var mse(Var x, std::span<const double> target);
/// Heteroscedastic NLL for a [B, 4] head output against [B, 2] labels.
Var nll(Var head, std::span<const double> labels);

// ---- plain-value losses ----------------------------------------------------

struct HeteroscedasticOutput {
  double mu_sbp = 0.0;
  double s_sbp = 0.0;
  double mu_dbp = 0.0;
  double s_dbp = 0.0;
};

struct PulseWeights {
  double alpha = 5.0;
  double beta = 10.0;
  double gamma = 15.0;
};

/// Mean over the batch of, per target, r^2 / (2 e^s) + s / 2, summed over
/// SBP and DBP. Labels are (sbp, dbp) pairs in normalized units.
double nll_loss(std::span<const HeteroscedasticOutput> outputs,
                std::span<const std::array<double, 2>> labels);

/// alpha MSE(ppg) + beta MSE(vpg) + gamma MSE(apg) for one pair.
double pulse_loss(const signals::PulseTriplet& pred, const signals::PulseTriplet& truth,
                  const PulseWeights& weights = {});

/// Batch mean of the per-pair pulse loss.
double pulse_loss(std::span<const signals::PulseTriplet> pred,
                  std::span<const signals::PulseTriplet> truth,
                  const PulseWeights& weights = {});

/// Graph form of the pulse loss on a [B, L] reconstruction.
Var pulse_loss(Var pred, std::span<const double> truth, const PulseWeights& weights = {});

double joint_ppg_loss(double pulse_term, double nll_term);
Var joint_ppg_loss(Var pulse_term, Var nll_term);

// ---- optimizer -------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update from the gradients stored in `params`.
void optimizer_step(ParameterSet& params, AdamState& state, double lr);

}  // namespace ubp::nn
