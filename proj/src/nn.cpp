#include "soh/nn.hpp"

#include <algorithm>
#include <cmath>

#include "soh/errors.hpp"
#include "soh/io_util.hpp"

namespace soh::nn {

namespace {

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& x) {
  return 1.0 / (1.0 + (-x).exp());
}

struct LayerTape {
  Eigen::MatrixXd x;     // layer input after any dropout below, in x T
  Eigen::MatrixXd z;     // update gate, hidden x T
  Eigen::MatrixXd r;     // reset gate
  Eigen::MatrixXd htil;  // candidate state
  Eigen::MatrixXd h;     // hidden state
  Eigen::MatrixXd mask;  // dropout mask on this layer's output; empty if none
};

struct Tape {
  std::vector<LayerTape> layers;
  Eigen::VectorXd dense_in;
  Eigen::VectorXd dense_act;
  double output = 0.0;
};

std::string layer_key(int layer, const char* tensor) {
  return "layer" + std::to_string(layer) + "." + tensor;
}

const Eigen::MatrixXd& tensor(const NamedTensors& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("missing parameter tensor '" + name + "'");
  return it->second;
}

double forward_core(const GruNetwork& net, const Eigen::MatrixXd& sequence,
                    bool training, std::mt19937_64* rng, Tape* tape) {
  const auto& cfg = net.config;
  const long steps = sequence.rows();
  if (steps < 1) throw ShapeError("sequence must have at least one time step");
  if (sequence.cols() != cfg.input_dim) {
    throw ShapeError("sequence width " + std::to_string(sequence.cols()) +
                     " does not match input_dim " + std::to_string(cfg.input_dim));
  }

  auto rates = cfg.effective_dropout();
  const int layers = static_cast<int>(cfg.hidden_dims.size());
  if (tape) tape->layers.resize(static_cast<std::size_t>(layers));

  Eigen::MatrixXd x = sequence.transpose();  // in x T
  for (int l = 0; l < layers; ++l) {
    const int hidden = cfg.hidden_dims[static_cast<std::size_t>(l)];
    const auto& wz = tensor(net.params, layer_key(l, "Wz"));
    const auto& uz = tensor(net.params, layer_key(l, "Uz"));
    const auto& bz = tensor(net.params, layer_key(l, "bz"));
    const auto& wr = tensor(net.params, layer_key(l, "Wr"));
    const auto& ur = tensor(net.params, layer_key(l, "Ur"));
    const auto& br = tensor(net.params, layer_key(l, "br"));
    const auto& wh = tensor(net.params, layer_key(l, "Wh"));
    const auto& uh = tensor(net.params, layer_key(l, "Uh"));
    const auto& bh = tensor(net.params, layer_key(l, "bh"));

    // Input projections for every step at once; the time loop then only
    // touches hidden-state terms.
    Eigen::MatrixXd az = (wz * x).colwise() + bz.col(0);
    Eigen::MatrixXd ar = (wr * x).colwise() + br.col(0);
    Eigen::MatrixXd ah = (wh * x).colwise() + bh.col(0);

    Eigen::MatrixXd z(hidden, steps), r(hidden, steps), htil(hidden, steps),
        h(hidden, steps);
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(hidden);
    for (long t = 0; t < steps; ++t) {
      Eigen::ArrayXd zt = sigmoid((az.col(t) + uz * h_prev).array());
      Eigen::ArrayXd rt = sigmoid((ar.col(t) + ur * h_prev).array());
      Eigen::VectorXd gated = (rt * h_prev.array()).matrix();
      Eigen::ArrayXd ct = ((ah.col(t) + uh * gated).array()).tanh();
      Eigen::ArrayXd ht = (1.0 - zt) * ct + zt * h_prev.array();
      z.col(t) = zt.matrix();
      r.col(t) = rt.matrix();
      htil.col(t) = ct.matrix();
      h.col(t) = ht.matrix();
      h_prev = h.col(t);
    }

    Eigen::MatrixXd out = h;
    Eigen::MatrixXd mask;
    double rate = rates[static_cast<std::size_t>(l)];
    if (training && rate > 0.0) {
      if (!rng) throw InvalidInputError("training forward needs a dropout stream");
      mask.resize(hidden, steps);
      const double keep_scale = 1.0 / (1.0 - rate);
      for (long t = 0; t < steps; ++t) {
        for (int u = 0; u < hidden; ++u) {
          mask(u, t) = util::uniform01(*rng) >= rate ? keep_scale : 0.0;
        }
      }
      out = out.cwiseProduct(mask);
    }

    if (tape) {
      auto& lt = tape->layers[static_cast<std::size_t>(l)];
      lt.x = x;
      lt.z = std::move(z);
      lt.r = std::move(r);
      lt.htil = std::move(htil);
      lt.h = std::move(h);
      lt.mask = std::move(mask);
    }
    x = std::move(out);
  }

  const auto& dw = tensor(net.params, "dense.W");
  const auto& db = tensor(net.params, "dense.b");
  const auto& ow = tensor(net.params, "out.w");
  const auto& ob = tensor(net.params, "out.b");

  Eigen::VectorXd dense_in = x.col(steps - 1);
  Eigen::VectorXd dense_act = ((dw * dense_in + db.col(0)).array()).tanh().matrix();
  double y = (ow * dense_act)(0, 0) + ob(0, 0);

  if (tape) {
    tape->dense_in = std::move(dense_in);
    tape->dense_act = std::move(dense_act);
    tape->output = y;
  }
  return y;
}

// Backpropagation through the taped forward pass; d_output is dLoss/dy.
NamedTensors backward_core(const GruNetwork& net, const Tape& tape, double d_output) {
  const auto& cfg = net.config;
  const int layers = static_cast<int>(cfg.hidden_dims.size());

  NamedTensors grads;
  const auto& dw = tensor(net.params, "dense.W");
  const auto& ow = tensor(net.params, "out.w");

  grads["out.w"] = d_output * tape.dense_act.transpose();
  grads["out.b"] = Eigen::MatrixXd::Constant(1, 1, d_output);

  Eigen::VectorXd d_dense_act = d_output * ow.transpose();
  Eigen::VectorXd d_dense_pre =
      (d_dense_act.array() * (1.0 - tape.dense_act.array().square())).matrix();
  grads["dense.W"] = d_dense_pre * tape.dense_in.transpose();
  grads["dense.b"] = d_dense_pre;
  Eigen::VectorXd d_dense_in = dw.transpose() * d_dense_pre;

  // Gradient flowing into each layer's (post-dropout) output sequence.
  Eigen::MatrixXd d_out;
  for (int l = layers - 1; l >= 0; --l) {
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    const int hidden = cfg.hidden_dims[static_cast<std::size_t>(l)];
    const long steps = lt.h.cols();

    if (l == layers - 1) {
      d_out = Eigen::MatrixXd::Zero(hidden, steps);
      d_out.col(steps - 1) = d_dense_in;
    }
    Eigen::MatrixXd d_h_seq;
    if (lt.mask.size() > 0) {
      d_h_seq = d_out.cwiseProduct(lt.mask);
    } else {
      d_h_seq = std::move(d_out);
    }

    const auto& uz = tensor(net.params, layer_key(l, "Uz"));
    const auto& ur = tensor(net.params, layer_key(l, "Ur"));
    const auto& uh = tensor(net.params, layer_key(l, "Uh"));
    const auto& wz = tensor(net.params, layer_key(l, "Wz"));
    const auto& wr = tensor(net.params, layer_key(l, "Wr"));
    const auto& wh = tensor(net.params, layer_key(l, "Wh"));

    Eigen::MatrixXd da_z(hidden, steps), da_r(hidden, steps), da_h(hidden, steps);
    Eigen::VectorXd d_carry = Eigen::VectorXd::Zero(hidden);
    for (long t = steps - 1; t >= 0; --t) {
      Eigen::ArrayXd dh = (d_h_seq.col(t) + d_carry).array();
      Eigen::ArrayXd h_prev = Eigen::ArrayXd::Zero(hidden);
      if (t > 0) h_prev = lt.h.col(t - 1).array();
      Eigen::ArrayXd z = lt.z.col(t).array();
      Eigen::ArrayXd r = lt.r.col(t).array();
      Eigen::ArrayXd htil = lt.htil.col(t).array();

      Eigen::ArrayXd dz = dh * (h_prev - htil);
      Eigen::ArrayXd daz = dz * z * (1.0 - z);
      Eigen::ArrayXd dhtil = dh * (1.0 - z);
      Eigen::ArrayXd dah = dhtil * (1.0 - htil.square());
      Eigen::ArrayXd drh = (uh.transpose() * dah.matrix()).array();
      Eigen::ArrayXd dr = drh * h_prev;
      Eigen::ArrayXd dar = dr * r * (1.0 - r);

      d_carry = (dh * z + drh * r).matrix() + uz.transpose() * daz.matrix() +
                ur.transpose() * dar.matrix();
      da_z.col(t) = daz.matrix();
      da_r.col(t) = dar.matrix();
      da_h.col(t) = dah.matrix();
    }

    // Lagged hidden states and the reset-gated version used by candidates.
    Eigen::MatrixXd h_lag = Eigen::MatrixXd::Zero(hidden, steps);
    if (steps > 1) h_lag.rightCols(steps - 1) = lt.h.leftCols(steps - 1);
    Eigen::MatrixXd gated = lt.r.cwiseProduct(h_lag);

    grads[layer_key(l, "Wz")] = da_z * lt.x.transpose();
    grads[layer_key(l, "Uz")] = da_z * h_lag.transpose();
    grads[layer_key(l, "bz")] = da_z.rowwise().sum();
    grads[layer_key(l, "Wr")] = da_r * lt.x.transpose();
    grads[layer_key(l, "Ur")] = da_r * h_lag.transpose();
    grads[layer_key(l, "br")] = da_r.rowwise().sum();
    grads[layer_key(l, "Wh")] = da_h * lt.x.transpose();
    grads[layer_key(l, "Uh")] = da_h * gated.transpose();
    grads[layer_key(l, "bh")] = da_h.rowwise().sum();

    if (l > 0) {
      d_out = wz.transpose() * da_z + wr.transpose() * da_r + wh.transpose() * da_h;
    }
  }
  return grads;
}

}  // namespace

void GruConfig::validate() const {
  if (input_dim < 1) throw InvalidInputError("input_dim must be >= 1");
  if (hidden_dims.empty()) throw InvalidInputError("hidden_dims must be non-empty");
  for (int h : hidden_dims) {
    if (h < 1) throw InvalidInputError("hidden dims must be >= 1");
  }
  if (dense_dim < 1) throw InvalidInputError("dense_dim must be >= 1");
  if (!dropout_rates.empty() && dropout_rates.size() != hidden_dims.size()) {
    throw InvalidInputError("dropout_rates must match hidden_dims count");
  }
  for (double r : dropout_rates) {
    if (!(r >= 0.0 && r < 1.0)) throw InvalidInputError("dropout rates must lie in [0,1)");
  }
}

std::vector<double> GruConfig::effective_dropout() const {
  if (dropout_rates.empty()) return std::vector<double>(hidden_dims.size(), 0.0);
  return dropout_rates;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidInputError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidInputError("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidInputError("batch_size must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_epsilon > 0.0)) {
    throw InvalidInputError("Adam hyperparameters out of range");
  }
}

GruNetwork make_network(const GruConfig& config) {
  config.validate();

  GruNetwork net;
  net.config = config;
  net.dropout_rng.seed(config.seed ^ 0x9e3779b97f4a7c15ull);

  std::mt19937_64 rng(config.seed);
  auto glorot = [&rng](int rows, int cols, int fan_in, int fan_out) {
    double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    Eigen::MatrixXd m(rows, cols);
    for (long j = 0; j < m.cols(); ++j) {
      for (long i = 0; i < m.rows(); ++i) {
        m(i, j) = util::uniform_range(rng, -limit, limit);
      }
    }
    return m;
  };

  int in = config.input_dim;
  for (std::size_t l = 0; l < config.hidden_dims.size(); ++l) {
    int hidden = config.hidden_dims[l];
    for (const char* gate : {"z", "r", "h"}) {
      net.params[layer_key(static_cast<int>(l), (std::string("W") + gate).c_str())] =
          glorot(hidden, in, in, hidden);
      net.params[layer_key(static_cast<int>(l), (std::string("U") + gate).c_str())] =
          glorot(hidden, hidden, hidden, hidden);
      net.params[layer_key(static_cast<int>(l), (std::string("b") + gate).c_str())] =
          Eigen::MatrixXd::Zero(hidden, 1);
    }
    in = hidden;
  }
  net.params["dense.W"] = glorot(config.dense_dim, in, in, config.dense_dim);
  net.params["dense.b"] = Eigen::MatrixXd::Zero(config.dense_dim, 1);
  net.params["out.w"] = glorot(1, config.dense_dim, config.dense_dim, 1);
  net.params["out.b"] = Eigen::MatrixXd::Zero(1, 1);
  return net;
}

double forward(GruNetwork& net, const Eigen::MatrixXd& sequence, bool training) {
  return forward_core(net, sequence, training, training ? &net.dropout_rng : nullptr,
                      nullptr);
}

double predict(const GruNetwork& net, const Eigen::MatrixXd& sequence) {
  return forward_core(net, sequence, false, nullptr, nullptr);
}

NamedTensors gradient(const GruNetwork& net, const Eigen::MatrixXd& sequence,
                      double target) {
  Tape tape;
  forward_core(net, sequence, false, nullptr, &tape);
  return backward_core(net, tape, 2.0 * (tape.output - target));
}

TrainResult train(GruNetwork& net,
                  const std::vector<std::pair<Eigen::MatrixXd, double>>& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidInputError("no training pairs");
  for (const auto& [seq, target] : data) {
    if (seq.cols() != net.config.input_dim) {
      throw ShapeError("training sequence width " + std::to_string(seq.cols()) +
                       " does not match input_dim " +
                       std::to_string(net.config.input_dim));
    }
    (void)target;
  }

  std::mt19937_64 shuffle_rng(cfg.seed);
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  NamedTensors adam_m, adam_v;
  for (const auto& [name, value] : net.params) {
    adam_m[name] = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    adam_v[name] = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
  long step = 0;

  TrainResult result;
  result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates on the portable stream (std::shuffle is not bit-stable
    // across standard libraries).
    for (std::size_t i = n - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng() % (i + 1));
      std::swap(order[i], order[j]);
    }

    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < n) {
      std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                n - pos);
      NamedTensors grad_sum;
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& [seq, target] = data[order[pos + b]];
        Tape tape;
        forward_core(net, seq, true, &net.dropout_rng, &tape);
        double err = tape.output - target;
        loss_sum += err * err;
        NamedTensors grads = backward_core(net, tape, 2.0 * err / double(batch));
        if (grad_sum.empty()) {
          grad_sum = std::move(grads);
        } else {
          for (auto& [name, g] : grads) grad_sum[name] += g;
        }
      }

      ++step;
      double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(step));
      double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(step));
      for (auto& [name, value] : net.params) {
        const Eigen::MatrixXd& g = grad_sum.at(name);
        Eigen::MatrixXd& m = adam_m[name];
        Eigen::MatrixXd& v = adam_v[name];
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
        v = (cfg.adam_beta2 * v.array() + (1.0 - cfg.adam_beta2) * g.array().square())
                .matrix();
        Eigen::ArrayXXd m_hat = m.array() / bc1;
        Eigen::ArrayXXd v_hat = v.array() / bc2;
        value.array() -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
      }
      pos += batch;
    }

    double epoch_loss = loss_sum / double(n);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("training loss is not finite", epoch);
    }
    result.epoch_loss.push_back(epoch_loss);
  }
  return result;
}

std::vector<double> residual_targets(const GruNetwork& source_net,
                                     const std::vector<Eigen::MatrixXd>& cv_sequences,
                                     std::span<const double> measured) {
  if (cv_sequences.size() != measured.size()) {
    throw ShapeError("sequence count " + std::to_string(cv_sequences.size()) +
                     " does not match capacity count " + std::to_string(measured.size()));
  }
  std::vector<double> residuals(measured.size());
  for (std::size_t k = 0; k < measured.size(); ++k) {
    residuals[k] = measured[k] - predict(source_net, cv_sequences[k]);
  }
  return residuals;
}

}  // namespace soh::nn
