#include "flim/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "flim/decay.hpp"
#include "flim/error.hpp"
#include "flim/parallel.hpp"
#include "flim/random.hpp"

namespace flim {

void TrainConfig::validate() const {
  require(dataset_size >= 1, "dataset_size must be positive");
  require(photons_min > 0.0 && photons_max >= photons_min, "photon range must be positive and ordered");
  require(tau1_min > 0.0 && tau1_max >= tau1_min, "tau1 range must be positive and ordered");
  require(tau2_min > 0.0 && tau2_max >= tau2_min, "tau2 range must be positive and ordered");
  require(tau1_max < tau2_min, "tau1 range must lie below tau2 range");
  require(a1_min >= 0.0 && a1_max <= 1.0 && a1_max >= a1_min, "a1 range must lie in [0, 1]");
  require(learning_rate > 0.0 && final_learning_rate > 0.0 && momentum >= 0.0 && momentum < 1.0, "invalid optimizer settings");
  require(batch_size >= 1 && epochs >= 1, "batch_size and epochs must be positive");
  require(hidden1 >= 1 && hidden2 >= 1, "hidden sizes must be positive");
}

namespace {

constexpr double kTauFloor = 1e-3;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Activations {
  std::vector<Matrix> a;  // a[0] = input, a[l+1] = layer l output (raw z for the last)
};

Activations forward_all(const MlpModel& model, const Matrix& inputs) {
  Activations act;
  act.a.push_back(inputs);
  const std::size_t layers = model.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = model.weights[l] * act.a.back();
    z.colwise() += model.biases[l];
    if (l + 1 < layers) z = z.array().tanh().matrix();
    act.a.push_back(std::move(z));
  }
  return act;
}

}  // namespace

MlpModel mlp_init(const std::vector<int>& sizes, std::uint64_t seed) {
  require(sizes.size() == 4, "the estimator has exactly two hidden layers");
  for (int s : sizes) require(s >= 1, "layer sizes must be positive");
  require(sizes.back() == 3, "the estimator has three outputs");
  MlpModel m;
  m.sizes = sizes;
  m.seed = seed;
  CounterRng rng(seed, 0x6d6c70ULL);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
    Matrix w(sizes[l + 1], sizes[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Vector::Zero(sizes[l + 1]));
  }
  m.input_mean = Vector::Zero(sizes[0]);
  m.input_scale = Vector::Ones(sizes[0]);
  return m;
}

Matrix mlp_forward(const MlpModel& model, const Matrix& inputs) {
  const Activations act = forward_all(model, inputs);
  const Matrix& z = act.a.back();
  Matrix out(3, z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double t1 = softplus(z(0, j)) + kTauFloor;
    out(0, j) = t1;
    out(1, j) = t1 + softplus(z(1, j));
    out(2, j) = sigmoid(z(2, j));
  }
  return out;
}

double mlp_loss(const MlpModel& model, const Matrix& inputs, const Matrix& targets, MlpGradients* grads) {
  const Activations act = forward_all(model, inputs);
  const Matrix& z = act.a.back();
  const Eigen::Index batch = z.cols();
  const double norm = 1.0 / (3.0 * static_cast<double>(batch));
  Matrix delta(3, batch);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double sp0 = softplus(z(0, j));
    const double sp1 = softplus(z(1, j));
    const double t1 = sp0 + kTauFloor;
    const double t2 = t1 + sp1;
    const double a = sigmoid(z(2, j));
    const double r0 = std::log(t1) - targets(0, j);
    const double r1 = std::log(t2) - targets(1, j);
    const double r2 = a - targets(2, j);
    loss += r0 * r0 + r1 * r1 + r2 * r2;
    const double d0 = 2.0 * r0 * norm;
    const double d1 = 2.0 * r1 * norm;
    const double d2 = 2.0 * r2 * norm;
    const double s0 = sigmoid(z(0, j));  // softplus'
    const double s1 = sigmoid(z(1, j));
    delta(0, j) = d0 * s0 / t1 + d1 * s0 / t2;
    delta(1, j) = d1 * s1 / t2;
    delta(2, j) = d2 * a * (1.0 - a);
  }
  loss *= norm;
  if (!grads) return loss;

  const std::size_t layers = model.weights.size();
  grads->weights.resize(layers);
  grads->biases.resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    grads->weights[l] = delta * act.a[l].transpose();
    grads->biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = model.weights[l].transpose() * delta;
    delta = back.array() * (1.0 - act.a[l].array().square());
  }
  return loss;
}

TrainingSet make_training_set(const TrainConfig& cfg, const Irf& irf, const TimeGrid& grid, int size,
                              std::uint64_t seed, double fixed_photons) {
  require(size >= 1, "training set size must be positive");
  const Vector irf_samples = irf.sample(grid);
  TrainingSet set{Matrix(grid.n_bins, size), Matrix(3, size)};
  const double log_lo = std::log(cfg.photons_min);
  const double log_hi = std::log(cfg.photons_max);
  parallel_for(static_cast<std::size_t>(size), [&](std::size_t i) {
    CounterRng rng(seed, 0x7472616e ^ i, 0);
    const double t1 = rng.uniform(cfg.tau1_min, cfg.tau1_max);
    const double t2 = rng.uniform(cfg.tau2_min, cfg.tau2_max);
    const double a1 = rng.uniform(cfg.a1_min, cfg.a1_max);
    const double photons = fixed_photons > 0.0 ? fixed_photons : std::exp(rng.uniform(log_lo, log_hi));
    const Vector curve = evaluate_decay(DecayModel::bi(t1, t2, a1), irf_samples, grid);
    const Eigen::Index col = static_cast<Eigen::Index>(i);
    double total = 0.0;
    for (int b = 0; b < grid.n_bins; ++b) {
      CounterRng noise(seed, 0x10000000000ULL + i, static_cast<std::uint64_t>(b));
      set.inputs(b, col) = static_cast<double>(noise.poisson(photons * curve[b]));
      total += set.inputs(b, col);
    }
    if (total > 0.0) set.inputs.col(col) /= total;
    set.targets(0, col) = std::log(t1);
    set.targets(1, col) = std::log(t2);
    set.targets(2, col) = a1;
  });
  return set;
}

Matrix mlp_normalize(const MlpModel& model, const Matrix& counts) {
  require(counts.rows() == model.sizes[0], "input length does not match the model");
  Matrix x = counts;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double total = x.col(j).sum();
    if (total > 0.0) x.col(j) /= total;
  }
  x.colwise() -= model.input_mean;
  return (x.array().colwise() / model.input_scale.array()).matrix();
}

MlpModel mlp_train(const TrainConfig& cfg, const Irf& irf, const TimeGrid& grid) {
  cfg.validate();
  TrainingSet data = make_training_set(cfg, irf, grid, cfg.dataset_size, cfg.seed);
  MlpModel model = mlp_init({grid.n_bins, cfg.hidden1, cfg.hidden2, 3}, cfg.seed);

  const double n = static_cast<double>(cfg.dataset_size);
  model.input_mean = data.inputs.rowwise().sum() / n;
  Matrix centered = data.inputs.colwise() - model.input_mean;
  model.input_scale = (centered.array().square().rowwise().sum() / n).sqrt();
  for (Eigen::Index i = 0; i < model.input_scale.size(); ++i) {
    if (!(model.input_scale[i] > 1e-12)) model.input_scale[i] = 1.0;
  }
  data.inputs = (centered.array().colwise() / model.input_scale.array()).matrix();
  centered.resize(0, 0);

  std::vector<Matrix> vel_w;
  std::vector<Vector> vel_b;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    vel_w.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
    vel_b.push_back(Vector::Zero(model.biases[l].size()));
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(cfg.dataset_size));
  std::iota(order.begin(), order.end(), 0);
  Matrix batch_x;
  Matrix batch_y;
  MlpGradients grads;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double phase = cfg.epochs > 1 ? static_cast<double>(epoch - 1) / (cfg.epochs - 1) : 0.0;
    const double floor = std::min(cfg.final_learning_rate, cfg.learning_rate);
    const double lr = floor + 0.5 * (cfg.learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * phase));
    CounterRng shuffle(cfg.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_loss = 0.0;
    for (int start = 0; start < cfg.dataset_size; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, cfg.dataset_size - start);
      batch_x.resize(data.inputs.rows(), b);
      batch_y.resize(3, b);
      for (int j = 0; j < b; ++j) {
        batch_x.col(j) = data.inputs.col(order[start + j]);
        batch_y.col(j) = data.targets.col(order[start + j]);
      }
      const double loss = mlp_loss(model, batch_x, batch_y, &grads);
      if (!std::isfinite(loss)) {
        fail(ErrorKind::kTrainingFailure, "loss diverged in epoch " + std::to_string(epoch));
      }
      epoch_loss += loss * b;
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        vel_w[l] = cfg.momentum * vel_w[l] - lr * grads.weights[l];
        vel_b[l] = cfg.momentum * vel_b[l] - lr * grads.biases[l];
        model.weights[l] += vel_w[l];
        model.biases[l] += vel_b[l];
      }
    }
    epoch_loss /= n;
    if (!std::isfinite(epoch_loss)) {
      fail(ErrorKind::kTrainingFailure, "loss diverged in epoch " + std::to_string(epoch));
    }
    model.epoch_loss.push_back(epoch_loss);
  }
  model.epochs = cfg.epochs;
  model.final_loss = model.epoch_loss.back();
  return model;
}

MlpEstimate mlp_predict(const MlpModel& model, const TcspcHistogram& hist) {
  require(hist.counts.size() == model.sizes[0], "histogram length does not match the model input");
  if (!(hist.total() > 0.0)) fail(ErrorKind::kLowSignal, "histogram has no counts");
  const Matrix out = mlp_forward(model, mlp_normalize(model, hist.counts));
  return {out(0, 0), out(1, 0), out(2, 0)};
}

LifetimeImage mlp_batch(const MlpModel& model, const FlimCube& cube, double min_counts) {
  require(cube.grid.n_bins == model.sizes[0], "cube bin count does not match the model input");
  LifetimeImage out(cube.width, cube.height, 2);
  out.intensity = cube.intensity();
  // Fixed block boundaries keep results independent of the worker count.
  constexpr Eigen::Index kBlock = 1024;
  const Eigen::Index n = cube.pixels();
  const std::size_t blocks = static_cast<std::size_t>((n + kBlock - 1) / kBlock);
  parallel_for(blocks, [&](std::size_t bi) {
    const Eigen::Index lo = static_cast<Eigen::Index>(bi) * kBlock;
    const Eigen::Index len = std::min(kBlock, n - lo);
    const Matrix est = mlp_forward(model, mlp_normalize(model, cube.counts.middleCols(lo, len)));
    for (Eigen::Index j = 0; j < len; ++j) {
      const Eigen::Index p = lo + j;
      if (!(out.intensity[p] > 0.0) || out.intensity[p] < min_counts) continue;
      out.tau(0, p) = est(0, j);
      out.tau(1, p) = est(1, j);
      out.fraction(0, p) = est(2, j);
      out.fraction(1, p) = 1.0 - est(2, j);
      out.valid[static_cast<std::size_t>(p)] = 1;
    }
  });
  return out;
}

}  // namespace flim
