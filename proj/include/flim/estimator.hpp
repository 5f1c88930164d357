#pragma once

#include <cstdint>
#include <vector>

#include "flim/types.hpp"

namespace flim {

struct TrainConfig {
  int dataset_size = 100000;
  double photons_min = 1e3;  // log-uniform
  double photons_max = 1e5;
  double tau1_min = 0.2, tau1_max = 1.5;  // ns
  double tau2_min = 1.8, tau2_max = 6.0;  // ns
  double a1_min = 0.1, a1_max = 0.9;
  double learning_rate = 5e-2;
  double final_learning_rate = 1e-4;  // cosine-annealed per epoch
  double momentum = 0.9;
  int batch_size = 128;
  int epochs = 50;
  int hidden1 = 128;
  int hidden2 = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Fully connected n_bins -> h1 -> h2 -> 3 network with tanh hidden units.
/// weights[l] is (out x in). Raw outputs z map to tau1 = softplus(z0) + 1e-3,
/// tau2 = tau1 + softplus(z1), a1 = sigmoid(z2).
struct MlpModel {
  std::vector<int> sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Vector input_mean;
  Vector input_scale;
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;  // not serialized
};

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

struct MlpEstimate {
  double tau1 = 0.0;
  double tau2 = 0.0;
  double a1 = 0.0;
};

/// Glorot-uniform initialization; identity input normalization.
MlpModel mlp_init(const std::vector<int>& sizes, std::uint64_t seed);

/// Area-normalized histograms (columns) with targets (log tau1, log tau2, a1).
struct TrainingSet {
  Matrix inputs;   // n_bins x N
  Matrix targets;  // 3 x N
};

TrainingSet make_training_set(const TrainConfig& cfg, const Irf& irf, const TimeGrid& grid, int size,
                              std::uint64_t seed, double fixed_photons = 0.0);

/// Mean squared error over (log tau1, log tau2, a1); fills gradients if given.
/// inputs are already normalized.
double mlp_loss(const MlpModel& model, const Matrix& inputs, const Matrix& targets, MlpGradients* grads);

/// Head-mapped (tau1, tau2, a1) per column of normalized inputs.
Matrix mlp_forward(const MlpModel& model, const Matrix& inputs);

/// Area-normalize then standardize raw count columns.
Matrix mlp_normalize(const MlpModel& model, const Matrix& counts);

MlpModel mlp_train(const TrainConfig& cfg, const Irf& irf, const TimeGrid& grid);

MlpEstimate mlp_predict(const MlpModel& model, const TcspcHistogram& hist);

/// Per-pixel estimates; pixels with fewer than min_counts photons are invalid.
LifetimeImage mlp_batch(const MlpModel& model, const FlimCube& cube, double min_counts = 100.0);

}  // namespace flim
