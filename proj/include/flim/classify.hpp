#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flim/types.hpp"

namespace flim {

/// Per quadrant q of [0,1]x[0,0.5]: (fraction, centroid g, centroid s) at
/// entries 3q..3q+2. q = (g >= 0.5) + 2 (s >= 0.25); boundary points go to the
/// higher index.
struct QuadrantFeatures {
  Eigen::Matrix<double, 12, 1> values = Eigen::Matrix<double, 12, 1>::Zero();
};

QuadrantFeatures quadrant_features(const PhasorImage& img);

/// Fisher discriminant; score = weights . x + bias, healthy when negative.
struct DaModel {
  Vector weights;
  double bias = 0.0;
  bool regularized = false;
  std::vector<std::string> warnings;
};

struct EviResult {
  double evi = 0.0;
  bool healthy = false;
};

DaModel da_train(std::span<const QuadrantFeatures> healthy, std::span<const QuadrantFeatures> unhealthy);
/// Generic-dimension form used by the quadrant version.
DaModel da_train(const Matrix& healthy_rows, const Matrix& unhealthy_rows);
EviResult da_score(const DaModel& model, const QuadrantFeatures& features);
EviResult da_score(const DaModel& model, const Vector& features);

struct RegionStats {
  Vector mean;  // per mask, ns
  Vector std;   // population standard deviation, ns
};

/// Mean and standard deviation of the long lifetime over each mask's valid pixels.
RegionStats region_stats(const LifetimeImage& img, std::span<const Mask> masks);

/// Extreme learning machine: random frozen sigmoid hidden layer, output weights
/// are the minimum-norm least-squares fit to one-hot targets.
struct ElmModel {
  int input_dim = 0;
  int hidden_dim = 0;
  int classes = 0;
  std::uint64_t seed = 0;
  Vector input_mean;
  Vector input_scale;
  Matrix input_weights;  // input_dim x hidden_dim
  Vector hidden_bias;
  Matrix output_weights;  // hidden_dim x classes
};

struct ElmPrediction {
  int label = 0;
  Vector scores;
};

ElmModel elm_train(const Matrix& features, std::span<const int> labels, int hidden_dim = 100,
                   std::uint64_t seed = 0);
ElmPrediction elm_predict(const ElmModel& model, const Vector& features);
/// Hidden activations for a batch of rows.
Matrix elm_hidden(const ElmModel& model, const Matrix& features);

}  // namespace flim
