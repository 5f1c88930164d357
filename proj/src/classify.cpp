#include "flim/classify.hpp"

#include <algorithm>
#include <cmath>

#include "flim/error.hpp"
#include "flim/random.hpp"

namespace flim {

QuadrantFeatures quadrant_features(const PhasorImage& img) {
  double count[4] = {0, 0, 0, 0};
  double sum_g[4] = {0, 0, 0, 0};
  double sum_s[4] = {0, 0, 0, 0};
  double total = 0.0;
  for (int p = 0; p < img.pixels(); ++p) {
    if (!img.valid[p]) continue;
    const double g = img.g[p];
    const double s = img.s[p];
    const int q = (g >= 0.5 ? 1 : 0) + (s >= 0.25 ? 2 : 0);
    count[q] += 1.0;
    sum_g[q] += g;
    sum_s[q] += s;
    total += 1.0;
  }
  if (total == 0.0) fail(ErrorKind::kLowSignal, "no valid pixels for quadrant features");
  QuadrantFeatures f;
  for (int q = 0; q < 4; ++q) {
    const double mid_g = (q % 2 == 0) ? 0.25 : 0.75;
    const double mid_s = (q < 2) ? 0.125 : 0.375;
    f.values[3 * q] = count[q] / total;
    f.values[3 * q + 1] = count[q] > 0 ? sum_g[q] / count[q] : mid_g;
    f.values[3 * q + 2] = count[q] > 0 ? sum_s[q] / count[q] : mid_s;
  }
  return f;
}

DaModel da_train(const Matrix& healthy, const Matrix& unhealthy) {
  require(healthy.rows() >= 2 && unhealthy.rows() >= 2, "DA needs at least two samples per class");
  require(healthy.cols() == unhealthy.cols(), "class feature dimensions differ");
  const Vector mu_h = healthy.colwise().mean().transpose();
  const Vector mu_u = unhealthy.colwise().mean().transpose();
  const Matrix ch = healthy.rowwise() - mu_h.transpose();
  const Matrix cu = unhealthy.rowwise() - mu_u.transpose();
  Matrix scatter = ch.transpose() * ch + cu.transpose() * cu;

  DaModel model;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(scatter, Eigen::EigenvaluesOnly);
  const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(max_ev, 1e-300))) {
    scatter.diagonal().array() += 1e-6;
    model.regularized = true;
    model.warnings.push_back("within-class scatter is singular; ridge 1e-6 added");
  }
  model.weights = scatter.ldlt().solve(mu_u - mu_h);
  model.bias = -model.weights.dot(mu_h + mu_u) / 2.0;
  return model;
}

DaModel da_train(std::span<const QuadrantFeatures> healthy, std::span<const QuadrantFeatures> unhealthy) {
  auto stack = [](std::span<const QuadrantFeatures> rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), 12);
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].values.transpose();
    return m;
  };
  return da_train(stack(healthy), stack(unhealthy));
}

EviResult da_score(const DaModel& model, const Vector& features) {
  require(features.size() == model.weights.size(), "feature dimension does not match the DA model");
  const double evi = model.weights.dot(features) + model.bias;
  return {evi, evi < 0.0};
}

EviResult da_score(const DaModel& model, const QuadrantFeatures& features) {
  return da_score(model, Vector(features.values));
}

RegionStats region_stats(const LifetimeImage& img, std::span<const Mask> masks) {
  require(!masks.empty(), "region_stats needs at least one mask");
  const Vector tau2 = img.long_lifetime();
  RegionStats out{Vector(static_cast<Eigen::Index>(masks.size())), Vector(static_cast<Eigen::Index>(masks.size()))};
  for (std::size_t m = 0; m < masks.size(); ++m) {
    require(masks[m].size() == static_cast<std::size_t>(img.pixels()), "mask " + std::to_string(m) + " has the wrong size");
    double n = 0.0;
    double sum = 0.0;
    for (int p = 0; p < img.pixels(); ++p) {
      if (masks[m][p] && img.valid[p]) {
        n += 1.0;
        sum += tau2[p];
      }
    }
    if (n == 0.0) fail(ErrorKind::kLowSignal, "mask " + std::to_string(m) + " has no valid pixels");
    const double mean = sum / n;
    double ss = 0.0;
    for (int p = 0; p < img.pixels(); ++p) {
      if (masks[m][p] && img.valid[p]) ss += (tau2[p] - mean) * (tau2[p] - mean);
    }
    out.mean[static_cast<Eigen::Index>(m)] = mean;
    out.std[static_cast<Eigen::Index>(m)] = std::sqrt(ss / n);
  }
  return out;
}

namespace {

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

Matrix elm_hidden(const ElmModel& model, const Matrix& features) {
  const Matrix z = (features.rowwise() - model.input_mean.transpose()).array().rowwise() /
                   model.input_scale.transpose().array();
  return sigmoid((z * model.input_weights).rowwise() + model.hidden_bias.transpose());
}

ElmModel elm_train(const Matrix& features, std::span<const int> labels, int hidden_dim, std::uint64_t seed) {
  const Eigen::Index n = features.rows();
  require(n >= 2, "ELM needs at least two samples");
  require(static_cast<std::size_t>(n) == labels.size(), "label count does not match feature rows");
  require(hidden_dim >= 1, "hidden_dim must be positive");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  require(*std::min_element(labels.begin(), labels.end()) >= 0, "labels must be non-negative");
  require(classes >= 2, "ELM needs at least two classes");

  ElmModel model;
  model.input_dim = static_cast<int>(features.cols());
  model.hidden_dim = hidden_dim;
  model.classes = classes;
  model.seed = seed;
  model.input_mean = features.colwise().mean().transpose();
  const Matrix centered = features.rowwise() - model.input_mean.transpose();
  model.input_scale = (centered.array().square().colwise().sum() / static_cast<double>(n)).sqrt().transpose();
  for (Eigen::Index j = 0; j < model.input_scale.size(); ++j) {
    if (!(model.input_scale[j] > 0.0)) model.input_scale[j] = 1.0;
  }

  CounterRng rng(seed, 0x656c6dULL);
  model.input_weights.resize(model.input_dim, hidden_dim);
  for (Eigen::Index j = 0; j < hidden_dim; ++j)
    for (Eigen::Index i = 0; i < model.input_dim; ++i) model.input_weights(i, j) = rng.uniform(-1.0, 1.0);
  model.hidden_bias.resize(hidden_dim);
  for (Eigen::Index j = 0; j < hidden_dim; ++j) model.hidden_bias[j] = rng.uniform(-1.0, 1.0);

  Matrix targets = Matrix::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) targets(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  const Matrix hidden = elm_hidden(model, features);
  model.output_weights = hidden.completeOrthogonalDecomposition().solve(targets);
  return model;
}

ElmPrediction elm_predict(const ElmModel& model, const Vector& features) {
  require(features.size() == model.input_dim, "feature dimension does not match the ELM model");
  const Matrix hidden = elm_hidden(model, features.transpose());
  ElmPrediction out;
  out.scores = (hidden * model.output_weights).transpose();
  out.label = 0;
  for (int c = 1; c < model.classes; ++c) {
    if (out.scores[c] > out.scores[out.label]) out.label = c;
  }
  return out;
}

}  // namespace flim
