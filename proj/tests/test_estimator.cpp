#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "flim/decay.hpp"
#include "flim/error.hpp"
#include "flim/estimator.hpp"
#include "oracles.hpp"

using namespace flim;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FlimError& e) {
    return e.kind();
  }
  FAIL("expected a FlimError");
  return ErrorKind::kIo;
}

const TimeGrid kGrid(256, 12.5 / 256);
const Irf kIrf = Irf::gaussian(0.5, 0.15);

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.dataset_size = 1500;
  cfg.epochs = 4;
  cfg.batch_size = 64;
  cfg.hidden1 = 32;
  cfg.hidden2 = 16;
  cfg.seed = 12;
  return cfg;
}

const MlpModel& default_model() {
  static const MlpModel model = mlp_train(TrainConfig{}, kIrf, kGrid);
  return model;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau1_max = 2.0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kInvalidArgument);
  cfg = TrainConfig{};
  cfg.photons_min = -1;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kInvalidArgument);
  cfg = TrainConfig{};
  cfg.a1_max = 1.5;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kInvalidArgument);
  cfg = TrainConfig{};
  cfg.final_learning_rate = 0.0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { mlp_init({256, 8, 3}, 1); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("backprop matches central differences at random init") {
  const MlpModel model = mlp_init({256, 128, 64, 3}, 5);
  const TrainingSet batch = make_training_set(TrainConfig{}, kIrf, kGrid, 5, 77);
  const Matrix x = mlp_normalize(model, batch.inputs);
  // every layer, weights and biases
  CHECK(oracle::max_gradient_error(model, x, batch.targets, 60, 3) <= 1e-4);
  MlpModel trained_like = mlp_init({256, 128, 64, 3}, 6);
  for (auto& w : trained_like.weights) w *= 2.0;
  CHECK(oracle::max_gradient_error(trained_like, x, batch.targets, 60, 4) <= 1e-4);
}

TEST_CASE("training set layout") {
  const TrainConfig cfg;
  const TrainingSet ts = make_training_set(cfg, kIrf, kGrid, 50, 3);
  CHECK(ts.inputs.rows() == 256);
  CHECK(ts.inputs.cols() == 50);
  CHECK(ts.targets.rows() == 3);
  for (int i = 0; i < 50; ++i) {
    CHECK(ts.inputs.col(i).sum() == doctest::Approx(1.0));
    const double t1 = std::exp(ts.targets(0, i)), t2 = std::exp(ts.targets(1, i));
    CHECK((t1 >= cfg.tau1_min && t1 <= cfg.tau1_max));
    CHECK((t2 >= cfg.tau2_min && t2 <= cfg.tau2_max));
    CHECK((ts.targets(2, i) >= cfg.a1_min && ts.targets(2, i) <= cfg.a1_max));
  }
}

TEST_CASE("training reduces loss and is deterministic") {
  const TrainConfig cfg = small_config();
  const MlpModel a = mlp_train(cfg, kIrf, kGrid);
  const MlpModel b = mlp_train(cfg, kIrf, kGrid);
  REQUIRE(a.epoch_loss.size() == 4);
  CHECK(a.epoch_loss.back() <= a.epoch_loss.front());
  CHECK(a.final_loss == a.epoch_loss.back());
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l] == b.weights[l]);
    CHECK(a.biases[l] == b.biases[l]);
  }
  CHECK(a.input_mean == b.input_mean);
  CHECK(a.seed == cfg.seed);
  CHECK(a.epochs == cfg.epochs);
}

TEST_CASE("annealing floor above the peak rate is capped") {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 1e-3;
  cfg.final_learning_rate = 1e-3;
  const MlpModel constant = mlp_train(cfg, kIrf, kGrid);
  cfg.final_learning_rate = 1.0;
  const MlpModel capped = mlp_train(cfg, kIrf, kGrid);
  CHECK(capped.weights[0] == constant.weights[0]);
  cfg.final_learning_rate = 1e-5;
  CHECK(mlp_train(cfg, kIrf, kGrid).weights[0] != constant.weights[0]);
}

TEST_CASE("divergence names the epoch") {
  TrainConfig cfg = small_config();
  cfg.learning_rate = std::numeric_limits<double>::max();
  try {
    mlp_train(cfg, kIrf, kGrid);
    FAIL("expected divergence");
  } catch (const FlimError& e) {
    CHECK(e.kind() == ErrorKind::kTrainingFailure);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("prediction heads and scale invariance") {
  const MlpModel model = mlp_train(small_config(), kIrf, kGrid);
  const Vector curve = evaluate_decay(DecayModel::bi(0.6, 3.0, 0.4), kIrf, kGrid);
  const TcspcHistogram h(kGrid, curve * 1e4);
  const MlpEstimate ref = mlp_predict(model, h);
  for (double c : {0.01, 7.0, 1e3}) {
    const MlpEstimate e = mlp_predict(model, TcspcHistogram(kGrid, curve * (1e4 * c)));
    CHECK(std::fabs(e.tau1 - ref.tau1) < 1e-9);
    CHECK(std::fabs(e.tau2 - ref.tau2) < 1e-9);
    CHECK(std::fabs(e.a1 - ref.a1) < 1e-9);
  }
  const TrainingSet ts = make_training_set(TrainConfig{}, kIrf, kGrid, 300, 8);
  const Matrix out = mlp_forward(model, mlp_normalize(model, ts.inputs));
  for (int i = 0; i < out.cols(); ++i) {
    CHECK(out(0, i) > 0.0);
    CHECK(out(0, i) <= out(1, i));
    CHECK((out(2, i) >= 0.0 && out(2, i) <= 1.0));
  }
  CHECK(kind_of([&] { mlp_predict(model, TcspcHistogram(TimeGrid(128, 0.1), Vector::Ones(128))); }) ==
        ErrorKind::kInvalidArgument);
  CHECK(kind_of([&] { mlp_predict(model, TcspcHistogram(kGrid, Vector::Zero(256))); }) == ErrorKind::kLowSignal);
}

TEST_CASE("batch inference flags and consistency") {
  const MlpModel model = mlp_train(small_config(), kIrf, kGrid);
  CHECK(mlp_batch(model, FlimCube(4, 4, kGrid)).valid_count() == 0);
  PhantomSpec spec{6, 6, {{RectShape{0, 0, 6, 3}, DecayModel::bi(0.5, 3.0, 0.6), 5e3}}, 0.0, std::nullopt};
  const FlimCube cube = synthesize_cube(spec, kIrf, kGrid, 4).cube;
  const LifetimeImage img = mlp_batch(model, cube);
  CHECK(img.valid_count() == 18);
  for (int p = 0; p < 18; ++p) {
    const MlpEstimate e = mlp_predict(model, cube.histogram(p));
    CHECK(img.tau(0, p) == doctest::Approx(e.tau1).epsilon(1e-12));
    CHECK(img.tau(1, p) == doctest::Approx(e.tau2).epsilon(1e-12));
    CHECK(img.fraction(0, p) == doctest::Approx(e.a1).epsilon(1e-12));
  }
  CHECK(kind_of([&] { mlp_batch(model, FlimCube(2, 2, TimeGrid(64, 0.1))); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("default model on a uniform phantom") {
  const MlpModel& model = default_model();
  PhantomSpec spec{16, 16, {{RectShape{0, 0, 16, 16}, DecayModel::bi(0.7, 3.5, 0.5), 1e4}}, 0.0, std::nullopt};
  const FlimCube cube = synthesize_cube(spec, kIrf, kGrid, 19).cube;
  const LifetimeImage img = mlp_batch(model, cube);
  REQUIRE(img.valid_count() == 256);
  int ok = 0;
  for (int p = 0; p < 256; ++p) {
    const bool good = std::fabs(img.tau(0, p) - 0.7) <= 0.07 && std::fabs(img.tau(1, p) - 3.5) <= 0.35 &&
                      std::fabs(img.fraction(0, p) - 0.5) <= 0.1;
    ok += good;
  }
  INFO("pixels within bounds: " << ok);
  CHECK(ok >= 0.9 * 256);
}
