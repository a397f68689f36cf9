#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace soh::nn {

struct GruConfig {
  int input_dim = 1;
  std::vector<int> hidden_dims = {32, 64};
  int dense_dim = 16;
  std::vector<double> dropout_rates;  // one per recurrent layer; empty = all zero
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> effective_dropout() const;  // padded/validated rates
};

// Multi-layer GRU regressor: recurrent stack -> tanh dense layer on the
// final hidden state -> affine scalar. Parameters are named tensors
// (layer0.Wz, layer0.Uz, layer0.bz, ..., dense.W, dense.b, out.w, out.b);
// biases are stored as single-column matrices.
struct GruNetwork {
  GruConfig config;
  std::map<std::string, Eigen::MatrixXd> params;
  std::mt19937_64 dropout_rng;  // feeds training-time dropout masks
};

using NamedTensors = std::map<std::string, Eigen::MatrixXd>;

// Weights uniform in +/-sqrt(6/(fan_in+fan_out)), biases zero, all drawn
// from a stream seeded with config.seed in a fixed tensor order.
GruNetwork make_network(const GruConfig& config);

// sequence is time x input_dim. training=true draws dropout masks from the
// network's stream; training=false is pure.
double forward(GruNetwork& net, const Eigen::MatrixXd& sequence, bool training);

// Pure inference path; identical to forward(net, sequence, false).
double predict(const GruNetwork& net, const Eigen::MatrixXd& sequence);

// d/dtheta of the squared error (forward(seq) - target)^2, no dropout.
NamedTensors gradient(const GruNetwork& net, const Eigen::MatrixXd& sequence,
                      double target);

struct TrainConfig {
  int epochs = 90;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean squared error per epoch
};

// Adam on mean squared error over (sequence, target) pairs; mini-batches by
// seeded shuffle each epoch. Deterministic for fixed seeds. Throws
// DivergenceError when the loss stops being finite.
TrainResult train(GruNetwork& net,
                  const std::vector<std::pair<Eigen::MatrixXd, double>>& data,
                  const TrainConfig& cfg);

// residual(k) = measured(k) - F_source(cv_sequences[k]); training a second
// network on these with squared loss is the frozen-source joint objective.
std::vector<double> residual_targets(const GruNetwork& source_net,
                                     const std::vector<Eigen::MatrixXd>& cv_sequences,
                                     std::span<const double> measured);

}  // namespace soh::nn
