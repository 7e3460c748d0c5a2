#include "ubp/neural.hpp"

#include <algorithm>
#include <cmath>

#include "ubp/error.hpp"

namespace ubp::nn {
namespace {

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw config_error(std::string(op) + " expects a rank-" + std::to_string(rank) +
                       " tensor, got " + to_string(x.shape()));
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw usage_error("operands recorded on different tapes");
}

// Four running sums so the loop vectorizes without reassociation flags.
double dot(const double* a, const double* b, std::ptrdiff_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::ptrdiff_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (int k = 0; k < 4; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void zero_grad(ParameterSet& params) {
  for (auto& p : params) p.zero_grad();
}

const std::vector<double>& Var::value() const { return tape_->value(id_); }
const std::vector<double>& Var::grad() const { return tape_->grad(id_); }
const Shape& Var::shape() const { return tape_->shape(id_); }

Var Tape::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw config_error("constant of shape " + to_string(shape) + " given " +
                       std::to_string(values.size()) + " values");
  }
  return record(std::move(shape), std::move(values), nullptr);
}

Var Tape::parameter(ParamTensor& param) {
  Var v = record(param.shape, param.value, nullptr);
  nodes_[v.id()].param = &param;
  nodes_[v.id()].grad.assign(param.value.size(), 0.0);
  return v;
}

Var Tape::record(Shape shape, std::vector<double> values, BackwardFn backward) {
  Node n;
  if (backward) n.grad.assign(values.size(), 0.0);
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw usage_error("backward called on an empty tape");
  if (consumed_) throw usage_error("backward already ran on this tape");
  if (loss.tape() != this) throw usage_error("loss is not recorded on this tape");
  if (nodes_[loss.id()].value.size() != 1) throw usage_error("backward needs a scalar loss");
  if (!requires_grad(loss.id())) throw usage_error("loss does not depend on any parameter");
  consumed_ = true;
  nodes_[loss.id()].grad[0] = 1.0;
  // Nodes are appended in topological order.
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
    if (n.param && !n.grad.empty()) {
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }
}

Var dense(Var x, Var weight, Var bias) {
  require_rank(x, 2, "dense");
  require_rank(weight, 2, "dense");
  const std::size_t batch = x.shape()[0];
  const std::size_t in = x.shape()[1];
  const std::size_t out = weight.shape()[0];
  if (weight.shape()[1] != in || bias.value().size() != out) {
    throw config_error("dense: input " + to_string(x.shape()) + " incompatible with weight " +
                       to_string(weight.shape()));
  }
  const auto& xv = x.value();
  const auto& w = weight.value();
  const auto& b = bias.value();
  std::vector<double> y(batch * out);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = xv.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data() + o * in;
      y[n * out + o] = b[o] + dot(wr, xr, static_cast<std::ptrdiff_t>(in));
    }
  }
  const auto xi = x.id(), wi = weight.id(), bi = bias.id();
  return x.tape()->record({batch, out}, std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(xi);
    const auto& w = t.value(wi);
    const bool need_x = t.requires_grad(xi);
    const bool need_w = t.requires_grad(wi);
    auto& gx = t.grad(xi);
    auto& gw = t.grad(wi);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* xr = xv.data() + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = gy[n * out + o];
        if (g == 0.0) continue;
        const double* wr = w.data() + o * in;
        if (need_x) {
          double* gxr = gx.data() + n * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wr[i];
        }
        if (need_w) {
          double* gwr = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += g * xr[i];
        }
      }
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out; ++o) gb[o] += gy[n * out + o];
      }
    }
  });
}

Var conv1d(Var x, Var weight, Var bias, std::size_t padding) {
  require_rank(x, 3, "conv1d");
  require_rank(weight, 3, "conv1d");
  const std::size_t batch = x.shape()[0];
  const std::size_t cin = x.shape()[1];
  const std::size_t len = x.shape()[2];
  const std::size_t cout = weight.shape()[0];
  const std::size_t k = weight.shape()[2];
  if (weight.shape()[1] != cin || bias.value().size() != cout || len + 2 * padding < k) {
    throw config_error("conv1d: input " + to_string(x.shape()) + " incompatible with weight " +
                       to_string(weight.shape()));
  }
  const std::size_t lout = len + 2 * padding - k + 1;
  const auto& xv = x.value();
  const auto& w = weight.value();
  const auto& b = bias.value();
  std::vector<double> y(batch * cout * lout);

  // Output positions t read input t + j - padding; clip to the valid range.
  auto valid_range = [=](std::size_t j) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(padding);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(lout),
                                                       static_cast<std::ptrdiff_t>(len) - shift);
    return std::array<std::ptrdiff_t, 3>{shift, lo, hi};
  };

  // Input channel outermost so each input row is read once per sample.
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* yr = y.data() + (n * cout + o) * lout;
      std::fill(yr, yr + lout, b[o]);
    }
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xr = xv.data() + (n * cin + c) * len;
      for (std::size_t o = 0; o < cout; ++o) {
        double* yr = y.data() + (n * cout + o) * lout;
        const double* wr = w.data() + (o * cin + c) * k;
        for (std::size_t j = 0; j < k; ++j) {
          const auto [shift, lo, hi] = valid_range(j);
          const double wj = wr[j];
          for (std::ptrdiff_t t = lo; t < hi; ++t) yr[t] += wj * xr[t + shift];
        }
      }
    }
  }

  const auto xi = x.id(), wi = weight.id(), bi = bias.id();
  return x.tape()->record({batch, cout, lout}, std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(xi);
    const auto& w = t.value(wi);
    const bool need_x = t.requires_grad(xi);
    const bool need_w = t.requires_grad(wi);
    const bool need_b = t.requires_grad(bi);
    auto& gx = t.grad(xi);
    auto& gw = t.grad(wi);
    auto& gb = t.grad(bi);
    for (std::size_t n = 0; n < batch; ++n) {
      if (need_b) {
        for (std::size_t o = 0; o < cout; ++o) {
          const double* gyr = gy.data() + (n * cout + o) * lout;
          for (std::size_t q = 0; q < lout; ++q) gb[o] += gyr[q];
        }
      }
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xr = xv.data() + (n * cin + c) * len;
        for (std::size_t o = 0; o < cout; ++o) {
          const double* gyr = gy.data() + (n * cout + o) * lout;
          const double* wr = w.data() + (o * cin + c) * k;
          for (std::size_t j = 0; j < k; ++j) {
            const auto [shift, lo, hi] = valid_range(j);
            if (need_w) gw[(o * cin + c) * k + j] += dot(gyr + lo, xr + lo + shift, hi - lo);
            if (need_x) {
              double* gxr = gx.data() + (n * cin + c) * len;
              const double wj = wr[j];
              for (std::ptrdiff_t q = lo; q < hi; ++q) gxr[q + shift] += wj * gyr[q];
            }
          }
        }
      }
    }
  });
}

Var relu(Var x) {
  std::vector<double> y = x.value();
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  const auto xi = x.id();
  return x.tape()->record(x.shape(), std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(xi);
    if (!t.requires_grad(xi)) return;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Var tanh(Var x) {
  std::vector<double> y = x.value();
  for (double& v : y) v = std::tanh(v);
  const auto xi = x.id();
  return x.tape()->record(x.shape(), std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& yv = t.value(self);
    if (!t.requires_grad(xi)) return;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (1.0 - yv[i] * yv[i]);
  });
}

Var dropout(Var x, double p, bool active, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw config_error("dropout probability must lie in [0, 1)");
  if (!active || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  const auto xi = x.id();
  return x.tape()->record(x.shape(), std::move(y),
                          [=, mask = std::move(mask)](Tape& t, std::size_t self) {
                            const auto& gy = t.grad(self);
                            if (!t.requires_grad(xi)) return;
                            auto& gx = t.grad(xi);
                            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
                          });
}

Var avg_pool1d(Var x, std::size_t size) {
  require_rank(x, 3, "avg_pool1d");
  if (size == 0 || x.shape()[2] < size) throw config_error("avg_pool1d: window larger than input");
  const std::size_t rows = x.shape()[0] * x.shape()[1];
  const std::size_t len = x.shape()[2];
  const std::size_t lout = len / size;
  const auto& xv = x.value();
  std::vector<double> y(rows * lout);
  const double inv = 1.0 / static_cast<double>(size);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < lout; ++q) {
      double acc = 0.0;
      for (std::size_t j = 0; j < size; ++j) acc += xv[r * len + q * size + j];
      y[r * lout + q] = acc * inv;
    }
  }
  const auto xi = x.id();
  return x.tape()->record({x.shape()[0], x.shape()[1], lout}, std::move(y),
                          [=](Tape& t, std::size_t self) {
                            const auto& gy = t.grad(self);
                            if (!t.requires_grad(xi)) return;
                            auto& gx = t.grad(xi);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t q = 0; q < lout; ++q) {
                                const double g = gy[r * lout + q] * inv;
                                for (std::size_t j = 0; j < size; ++j) gx[r * len + q * size + j] += g;
                              }
                            }
                          });
}

Var flatten(Var x) {
  if (x.shape().size() < 2) throw config_error("flatten needs a batch dimension");
  const std::size_t batch = x.shape()[0];
  const std::size_t features = numel(x.shape()) / std::max<std::size_t>(batch, 1);
  if (x.shape().size() == 2) return x;
  const auto xi = x.id();
  return x.tape()->record({batch, features}, x.value(), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    if (!t.requires_grad(xi)) return;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw config_error("concat of nothing");
  Tape* tape = parts.front().tape();
  const std::size_t batch = parts.front().shape()[0];
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat");
    if (p.tape() != tape || p.shape()[0] != batch) {
      throw config_error("concat operands disagree on tape or batch size");
    }
    widths.push_back(p.shape()[1]);
    ids.push_back(p.id());
    total += p.shape()[1];
  }
  std::vector<double> y(batch * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t n = 0; n < batch; ++n) {
      std::copy_n(v.data() + n * widths[k], widths[k], y.data() + n * total + offset);
    }
    offset += widths[k];
  }
  return tape->record({batch, total}, std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) {
        off += widths[k];
        continue;
      }
      auto& g = t.grad(ids[k]);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < widths[k]; ++i) g[n * widths[k] + i] += gy[n * total + off + i];
      }
      off += widths[k];
    }
  });
}

Var diff(Var x) {
  if (x.shape().size() < 2 || x.shape().back() < 2) {
    throw config_error("diff needs at least two samples along the last axis");
  }
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.value().size() / len;
  Shape out_shape = x.shape();
  out_shape.back() = len - 1;
  const auto& xv = x.value();
  std::vector<double> y(rows * (len - 1));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j + 1 < len; ++j) {
      y[r * (len - 1) + j] = xv[r * len + j + 1] - xv[r * len + j];
    }
  }
  const auto xi = x.id();
  return x.tape()->record(std::move(out_shape), std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    if (!t.requires_grad(xi)) return;
    auto& gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j + 1 < len; ++j) {
        const double g = gy[r * (len - 1) + j];
        gx[r * len + j + 1] += g;
        gx[r * len + j] -= g;
      }
    }
  });
}

Var clamp_log_variance(Var x) {
  require_rank(x, 2, "clamp_log_variance");
  if (x.shape()[1] != 4) throw config_error("heteroscedastic head must output 4 values");
  std::vector<double> y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (i % 2 == 1) y[i] = std::clamp(y[i], kLogVarianceMin, kLogVarianceMax);
  }
  const auto xi = x.id();
  return x.tape()->record(x.shape(), std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(xi);
    if (!t.requires_grad(xi)) return;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const bool clipped = i % 2 == 1 && (xv[i] < kLogVarianceMin || xv[i] > kLogVarianceMax);
      if (!clipped) gx[i] += gy[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  if (a.value().size() != b.value().size()) throw config_error("add: size mismatch");
  std::vector<double> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape()->record(a.shape(), std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
    }
  });
}

Var scale(Var x, double factor) {
  std::vector<double> y = x.value();
  for (double& v : y) v *= factor;
  const auto xi = x.id();
  return x.tape()->record(x.shape(), std::move(y), [=](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    if (!t.requires_grad(xi)) return;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += factor * gy[i];
  });
}

Var mse(Var x, std::span<const double> target) {
  const auto& xv = x.value();
  if (target.size() != xv.size() || xv.empty()) {
    throw usage_error("mse: prediction has " + std::to_string(xv.size()) + " values, target " +
                      std::to_string(target.size()));
  }
  std::vector<double> residual(xv.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    residual[i] = xv[i] - target[i];
    acc += residual[i] * residual[i];
  }
  const double inv = 1.0 / static_cast<double>(xv.size());
  const auto xi = x.id();
  return x.tape()->record({1}, {acc * inv},
                          [=, residual = std::move(residual)](Tape& t, std::size_t self) {
                            const double g = t.grad(self)[0] * 2.0 * inv;
                            if (!t.requires_grad(xi)) return;
                            auto& gx = t.grad(xi);
                            for (std::size_t i = 0; i < residual.size(); ++i) gx[i] += g * residual[i];
                          });
}

Var nll(Var head, std::span<const double> labels) {
  require_rank(head, 2, "nll");
  const std::size_t batch = head.shape()[0];
  if (head.shape()[1] != 4) throw config_error("nll expects a [B, 4] head output");
  if (batch == 0) throw usage_error("nll of an empty batch");
  if (labels.size() != 2 * batch) throw usage_error("nll: label count does not match batch");
  const auto& h = head.value();
  double acc = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double r = labels[2 * n + k] - h[4 * n + 2 * k];
      const double s = h[4 * n + 2 * k + 1];
      acc += r * r / (2.0 * std::exp(s)) + 0.5 * s;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch);
  std::vector<double> lab(labels.begin(), labels.end());
  const auto hi = head.id();
  return head.tape()->record({1}, {acc * inv},
                             [=, lab = std::move(lab)](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0] * inv;
                               if (!t.requires_grad(hi)) return;
                               const auto& h = t.value(hi);
                               auto& gh = t.grad(hi);
                               for (std::size_t n = 0; n < batch; ++n) {
                                 for (std::size_t k = 0; k < 2; ++k) {
                                   const double r = lab[2 * n + k] - h[4 * n + 2 * k];
                                   const double inv_var = std::exp(-h[4 * n + 2 * k + 1]);
                                   gh[4 * n + 2 * k] += g * (-r * inv_var);
                                   gh[4 * n + 2 * k + 1] += g * (0.5 - 0.5 * r * r * inv_var);
                                 }
                               }
                             });
}

double nll_loss(std::span<const HeteroscedasticOutput> outputs,
                std::span<const std::array<double, 2>> labels) {
  if (outputs.empty()) throw usage_error("nll_loss of an empty batch");
  if (outputs.size() != labels.size()) throw usage_error("nll_loss: batch size mismatch");
  auto term = [](double y, double mu, double s) {
    s = std::clamp(s, kLogVarianceMin, kLogVarianceMax);
    const double r = y - mu;
    return r * r / (2.0 * std::exp(s)) + 0.5 * s;
  };
  double acc = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    acc += term(labels[i][0], outputs[i].mu_sbp, outputs[i].s_sbp) +
           term(labels[i][1], outputs[i].mu_dbp, outputs[i].s_dbp);
  }
  return acc / static_cast<double>(outputs.size());
}

namespace {

double mean_squared(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw usage_error("pulse_loss: length mismatch " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

double pulse_loss(const signals::PulseTriplet& pred, const signals::PulseTriplet& truth,
                  const PulseWeights& w) {
  return w.alpha * mean_squared(pred.ppg, truth.ppg) + w.beta * mean_squared(pred.vpg, truth.vpg) +
         w.gamma * mean_squared(pred.apg, truth.apg);
}

double pulse_loss(std::span<const signals::PulseTriplet> pred,
                  std::span<const signals::PulseTriplet> truth, const PulseWeights& w) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw usage_error("pulse_loss: batch sizes differ or are empty");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += pulse_loss(pred[i], truth[i], w);
  return acc / static_cast<double>(pred.size());
}

Var pulse_loss(Var pred, std::span<const double> truth, const PulseWeights& w) {
  require_rank(pred, 2, "pulse_loss");
  const std::size_t batch = pred.shape()[0];
  const std::size_t len = pred.shape()[1];
  if (truth.size() != batch * len) throw usage_error("pulse_loss: truth size mismatch");
  if (len < 3) throw degenerate_input("pulse_loss needs at least 3 samples");
  std::vector<double> vpg, apg;
  vpg.reserve(batch * (len - 1));
  apg.reserve(batch * (len - 2));
  for (std::size_t n = 0; n < batch; ++n) {
    const auto t = signals::derive_triplet(truth.subspan(n * len, len));
    vpg.insert(vpg.end(), t.vpg.begin(), t.vpg.end());
    apg.insert(apg.end(), t.apg.begin(), t.apg.end());
  }
  // Per-sample MSE averaged over the batch equals the MSE over all elements
  // because every sample has the same length.
  const Var d1 = diff(pred);
  const Var d2 = diff(d1);
  Var loss = scale(mse(pred, truth), w.alpha);
  loss = add(loss, scale(mse(d1, vpg), w.beta));
  return add(loss, scale(mse(d2, apg), w.gamma));
}

double joint_ppg_loss(double pulse_term, double nll_term) { return pulse_term + nll_term; }

Var joint_ppg_loss(Var pulse_term, Var nll_term) { return add(pulse_term, nll_term); }

void optimizer_step(ParameterSet& params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value.size(), 0.0);
      state.v[i].assign(params[i].value.size(), 0.0);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.value.size()) throw usage_error("optimizer state shape mismatch");
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace ubp::nn
