#include "flim/cli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "flim/bench.hpp"
#include "flim/classify.hpp"
#include "flim/cs.hpp"
#include "flim/decay.hpp"
#include "flim/denoise.hpp"
#include "flim/error.hpp"
#include "flim/estimator.hpp"
#include "flim/fitting.hpp"
#include "flim/io.hpp"
#include "flim/parallel.hpp"
#include "flim/phasor.hpp"
#include "flim/segment.hpp"

namespace flim {

namespace {

namespace fs = std::filesystem;
using io::Json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path manifest_path(const fs::path& out) {
  fs::path m = out;
  m += ".manifest.json";
  return m;
}

void finish(io::RunManifest& m, const fs::path& primary, Clock::time_point t0) {
  m.timings_s["total"] = elapsed(t0);
  io::write_manifest(m, manifest_path(primary));
}

struct IrfArgs {
  std::string type = "dirac";
  double center = 0.5;
  double fwhm = 0.15;

  void add(CLI::App* app) {
    app->add_option("--irf", type, "IRF model")->check(CLI::IsMember({"dirac", "gaussian"}));
    app->add_option("--irf-center", center, "Gaussian IRF center (ns)");
    app->add_option("--irf-fwhm", fwhm, "Gaussian IRF FWHM (ns)");
  }
  Irf make() const { return type == "gaussian" ? Irf::gaussian(center, fwhm) : Irf::dirac(); }
  Json json() const {
    return type == "gaussian" ? Json{{"type", type}, {"center_ns", center}, {"fwhm_ns", fwhm}} : Json{{"type", type}};
  }
};

struct PhasorArgs {
  std::optional<double> omega;
  double floor = 100.0;

  void add(CLI::App* app) {
    app->add_option("--omega", omega, "angular frequency (rad/ns); default 2 pi / span");
    app->add_option("--floor", floor, "minimum pixel counts");
  }
  PhasorImage make(const FlimCube& cube) const {
    return phasor_image(cube, omega.value_or(default_omega(cube.grid)), floor);
  }
};

void write_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

std::string join_row(const std::vector<std::string>& cells) {
  std::string r;
  for (std::size_t i = 0; i < cells.size(); ++i) r += (i ? "," : "") + cells[i];
  return r + "\n";
}

// label,f1,...,fD with a header row.
struct LabeledRows {
  std::vector<int> labels;
  Matrix features;  // rows are samples
};

LabeledRows read_labeled_csv(const fs::path& path) {
  const auto bytes = io::read_file(path);
  std::stringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kParse, path.string() + ": empty file");
  std::vector<std::vector<double>> rows;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double d = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), d);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        fail(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " column " +
                                    std::to_string(v.size() + 1) + " is not a number");
      }
      v.push_back(d);
    }
    if (v.size() < 2) fail(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " has no features");
    if (!rows.empty() && v.size() != rows.front().size()) {
      fail(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " has a different column count");
    }
    rows.push_back(std::move(v));
  }
  if (rows.empty()) fail(ErrorKind::kParse, path.string() + ": no data rows");
  LabeledRows out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size() - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.labels.push_back(static_cast<int>(rows[i][0]));
    for (std::size_t j = 1; j < rows[i].size(); ++j) {
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) = rows[i][j];
    }
  }
  return out;
}

Json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Json mat_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

Vector json_vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix json_mat(const Json& j) {
  Matrix m(static_cast<Eigen::Index>(j.size()), j.empty() ? 0 : static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = json_vec(j[r]).transpose();
  return m;
}

FitMethod parse_fit_method(const std::string& m) {
  if (m == "lsm") return FitMethod::kLsm;
  if (m == "tail") return FitMethod::kTail;
  return FitMethod::kGate;
}

DenoiseMethod parse_denoise(const std::string& method, int frames, double sigma, int radius) {
  if (method == "average") return FrameAverage{frames};
  if (method == "gaussian") return GaussianFilter{sigma};
  return MedianFilter{radius};
}

PatternSelection parse_selection(const std::string& s) {
  return s == "shuffled" ? PatternSelection::kShuffled : PatternSelection::kLowSequency;
}

// Grid and IRF from an optional config document, falling back to flags.
TimeGrid grid_from(const Json& doc, int bins, double bin_width) {
  if (doc.contains("grid")) {
    const Json& g = doc["grid"];
    return TimeGrid(g.at("n_bins").get<int>(), g.at("bin_width_ns").get<double>(), g.value("origin_ns", 0.0));
  }
  return TimeGrid(bins, bin_width);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Fluorescence lifetime imaging toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = hardware)")->check(CLI::NonNegativeNumber);

  std::function<void()> action;
  const auto t0 = Clock::now();
  std::vector<std::string> argv_copy(argv, argv + argc);
  std::string command_line;
  for (int i = 1; i < argc; ++i) command_line += (i > 1 ? " " : "") + argv_copy[static_cast<std::size_t>(i)];

  auto manifest = [&](const std::string& name, Json params) {
    io::RunManifest m;
    m.command = name;
    params["argv"] = command_line;
    m.parameters = std::move(params);
    return m;
  };

  // simulate ---------------------------------------------------------------
  struct {
    std::string spec, out, truth;
    std::uint64_t seed = 1;
    bool expected = false;
  } sim;
  auto* simulate = app.add_subcommand("simulate", "phantom JSON -> cube + ground truth");
  simulate->add_option("--spec", sim.spec, "phantom description")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "noise seed");
  simulate->add_option("--out", sim.out, "output cube")->required();
  simulate->add_option("--truth", sim.truth, "ground-truth lifetime CSV");
  simulate->add_flag("--expected", sim.expected, "write noise-free expected counts");
  simulate->callback([&] {
    action = [&] {
      const io::PhantomFile ph = io::read_phantom(sim.spec);
      FlimCube cube;
      LifetimeImage truth;
      std::vector<std::string> warnings;
      if (sim.expected) {
        cube = expected_cube(ph.spec, ph.irf, ph.grid);
      } else {
        SynthesizedCube s = synthesize_cube(ph.spec, ph.irf, ph.grid, sim.seed);
        cube = std::move(s.cube);
        truth = std::move(s.truth);
        warnings = std::move(s.warnings);
      }
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      io::write_cube(cube, sim.out);
      io::RunManifest m = manifest("simulate", {{"spec", sim.spec}, {"expected", sim.expected}});
      m.seeds["noise"] = sim.seed;
      m.inputs = {sim.spec};
      m.outputs = {sim.out};
      if (!sim.truth.empty() && !sim.expected) {
        io::export_lifetime_csv(truth, sim.truth);
        m.outputs.push_back(sim.truth);
      }
      finish(m, sim.out, t0);
    };
  });

  // fit --------------------------------------------------------------------
  struct {
    std::string cube, out, method = "lsm", model;
    int components = 1;
    double min_counts = 100.0;
    std::optional<double> tail_start, gate_width, gate_start;
    IrfArgs irf;
  } fit;
  auto* fitc = app.add_subcommand("fit", "cube -> lifetime CSV");
  fitc->add_option("--cube", fit.cube)->required()->check(CLI::ExistingFile);
  fitc->add_option("--out", fit.out)->required();
  fitc->add_option("--method", fit.method)->check(CLI::IsMember({"lsm", "tail", "gate", "em", "mlp"}));
  fitc->add_option("--components", fit.components)->check(CLI::Range(1, 2));
  fitc->add_option("--model", fit.model, "MLP model file (method mlp)");
  fitc->add_option("--min-counts", fit.min_counts);
  fitc->add_option("--tail-start", fit.tail_start, "ns");
  fitc->add_option("--gate-width", fit.gate_width, "ns");
  fitc->add_option("--gate-start", fit.gate_start, "ns");
  fit.irf.add(fitc);
  fitc->callback([&] {
    action = [&] {
      const FlimCube cube = io::read_cube(fit.cube);
      io::RunManifest m = manifest("fit", {{"method", fit.method},
                                           {"components", fit.components},
                                           {"min_counts", fit.min_counts},
                                           {"irf", fit.irf.json()}});
      m.inputs = {fit.cube};
      if (fit.method == "mlp") {
        if (fit.model.empty()) throw UsageError("--method mlp needs --model");
        const MlpModel model = io::load_mlp(fit.model);
        io::export_lifetime_csv(mlp_batch(model, cube, fit.min_counts), fit.out);
        m.inputs.push_back(fit.model);
      } else if (fit.method == "em") {
        EmOptions opts;
        opts.min_counts = fit.min_counts;
        std::vector<EmResult> results(static_cast<std::size_t>(cube.pixels()));
        std::vector<std::uint8_t> ok(results.size(), 0);
        parallel_for(results.size(), [&](std::size_t p) {
          try {
            results[p] = fit_em(cube.histogram(static_cast<int>(p)), std::nullopt, opts);
            ok[p] = 1;
          } catch (const FlimError&) {
          }
        });
        std::string csv = "x,y,tau,irf_center,irf_fwhm,log_likelihood,iterations,valid\n";
        for (int p = 0; p < cube.pixels(); ++p) {
          const EmResult& r = results[static_cast<std::size_t>(p)];
          const bool v = ok[static_cast<std::size_t>(p)] != 0;
          auto num = [&](double x) { return v ? io::format_number(x) : std::string("0"); };
          csv += join_row({std::to_string(p % cube.width), std::to_string(p / cube.width), num(r.tau),
                           num(r.irf.center), num(r.irf.fwhm), num(r.irf.log_likelihood),
                           v ? std::to_string(r.iterations) : "0", v ? "1" : "0"});
        }
        write_text(fit.out, csv);
      } else {
        BatchOptions opts;
        opts.fit.min_counts = fit.min_counts;
        opts.tail_start = fit.tail_start;
        opts.gate_width = fit.gate_width;
        opts.gate_start = fit.gate_start;
        const int n = fit.method == "gate" ? 1 : fit.components;
        io::export_lifetime_csv(batch_fit(cube, fit.irf.make(), n, parse_fit_method(fit.method), opts), fit.out);
      }
      m.outputs = {fit.out};
      finish(m, fit.out, t0);
    };
  });

  // phasor -----------------------------------------------------------------
  struct {
    std::string cube, out;
    PhasorArgs ph;
  } pha;
  auto* phasor = app.add_subcommand("phasor", "cube -> phasor CSV");
  phasor->add_option("--cube", pha.cube)->required()->check(CLI::ExistingFile);
  phasor->add_option("--out", pha.out)->required();
  pha.ph.add(phasor);
  phasor->callback([&] {
    action = [&] {
      const FlimCube cube = io::read_cube(pha.cube);
      const PhasorImage img = pha.ph.make(cube);
      io::export_phasor_csv(img, pha.out);
      io::RunManifest m = manifest("phasor", {{"omega", img.omega}, {"floor", pha.ph.floor}});
      m.inputs = {pha.cube};
      m.outputs = {pha.out};
      finish(m, pha.out, t0);
    };
  });

  // segment ----------------------------------------------------------------
  struct {
    std::string cube, out, csv;
    int k = 2;
    std::uint64_t seed = 1;
    PhasorArgs ph;
  } seg;
  auto* segment = app.add_subcommand("segment", "k-means on phasors -> label image");
  segment->add_option("--cube", seg.cube)->required()->check(CLI::ExistingFile);
  segment->add_option("--out", seg.out, "label PPM")->required();
  segment->add_option("--csv", seg.csv, "label CSV (x,y,label)");
  segment->add_option("--k", seg.k)->check(CLI::PositiveNumber);
  segment->add_option("--seed", seg.seed);
  seg.ph.add(segment);
  segment->callback([&] {
    action = [&] {
      const FlimCube cube = io::read_cube(seg.cube);
      const SegmentationResult r = kmeans_phasor(seg.ph.make(cube), seg.k, seg.seed);
      const auto palette = default_palette(seg.k);
      io::write_ppm(labels_to_image(r, palette), seg.out);
      io::RunManifest m = manifest("segment", {{"k", seg.k}, {"floor", seg.ph.floor}, {"inertia", r.inertia},
                                               {"iterations", r.iterations}, {"converged", r.converged}});
      m.seeds["kmeans"] = seg.seed;
      m.inputs = {seg.cube};
      m.outputs = {seg.out};
      if (!seg.csv.empty()) {
        std::string csv = "x,y,label\n";
        for (int p = 0; p < r.width * r.height; ++p) {
          csv += join_row({std::to_string(p % r.width), std::to_string(p / r.width),
                           std::to_string(r.labels[static_cast<std::size_t>(p)])});
        }
        write_text(seg.csv, csv);
        m.outputs.push_back(seg.csv);
      }
      finish(m, seg.out, t0);
    };
  });

  // classify ---------------------------------------------------------------
  struct {
    std::string cube, data, model, out;
    bool da = false, elm = false;
    int hidden = 100;
    std::uint64_t seed = 1;
    PhasorArgs ph;
  } cls;
  auto* classify = app.add_subcommand("classify", "quadrant features, DA and ELM classifiers");
  classify->require_subcommand(1);
  auto* features = classify->add_subcommand("features", "cube -> 12 quadrant features (CSV row)");
  features->add_option("--cube", cls.cube)->required()->check(CLI::ExistingFile);
  features->add_option("--out", cls.out)->required();
  cls.ph.add(features);
  features->callback([&] {
    action = [&] {
      const FlimCube cube = io::read_cube(cls.cube);
      const QuadrantFeatures f = quadrant_features(cls.ph.make(cube));
      std::vector<std::string> head, row;
      for (int q = 0; q < 4; ++q) {
        for (const char* name : {"fraction", "g", "s"}) head.push_back("q" + std::to_string(q) + "_" + name);
      }
      for (int i = 0; i < 12; ++i) row.push_back(io::format_number(f.values[i]));
      write_text(cls.out, join_row(head) + join_row(row));
      io::RunManifest m = manifest("classify features", {{"floor", cls.ph.floor}});
      m.inputs = {cls.cube};
      m.outputs = {cls.out};
      finish(m, cls.out, t0);
    };
  });
  auto* train = classify->add_subcommand("train", "labeled CSV -> classifier JSON");
  auto* da_flag = train->add_flag("--da", cls.da, "distance analysis (labels 0 healthy, 1 unhealthy)");
  train->add_flag("--elm", cls.elm, "extreme learning machine")->excludes(da_flag);
  train->add_option("--data", cls.data)->required()->check(CLI::ExistingFile);
  train->add_option("--out", cls.out)->required();
  train->add_option("--hidden", cls.hidden)->check(CLI::PositiveNumber);
  train->add_option("--seed", cls.seed);
  train->callback([&] {
    action = [&] {
      if (cls.da == cls.elm) throw UsageError("classify train needs exactly one of --da or --elm");
      const LabeledRows rows = read_labeled_csv(cls.data);
      Json doc;
      if (cls.da) {
        std::vector<Eigen::Index> h, u;
        for (std::size_t i = 0; i < rows.labels.size(); ++i) (rows.labels[i] == 0 ? h : u).push_back(static_cast<Eigen::Index>(i));
        const DaModel model = da_train(rows.features(h, Eigen::all), rows.features(u, Eigen::all));
        doc = {{"type", "da"}, {"weights", vec_json(model.weights)}, {"bias", model.bias},
               {"regularized", model.regularized}};
      } else {
        const ElmModel model = elm_train(rows.features, rows.labels, cls.hidden, cls.seed);
        doc = {{"type", "elm"},
               {"input_dim", model.input_dim},
               {"hidden_dim", model.hidden_dim},
               {"classes", model.classes},
               {"seed", model.seed},
               {"input_mean", vec_json(model.input_mean)},
               {"input_scale", vec_json(model.input_scale)},
               {"input_weights", mat_json(model.input_weights)},
               {"hidden_bias", vec_json(model.hidden_bias)},
               {"output_weights", mat_json(model.output_weights)}};
      }
      write_text(cls.out, doc.dump(1) + "\n");
      io::RunManifest m = manifest("classify train", {{"type", cls.da ? "da" : "elm"}, {"hidden", cls.hidden}});
      if (cls.elm) m.seeds["elm"] = cls.seed;
      m.inputs = {cls.data};
      m.outputs = {cls.out};
      finish(m, cls.out, t0);
    };
  });
  auto* score = classify->add_subcommand("score", "classifier JSON + labeled CSV -> predictions");
  score->add_option("--model", cls.model)->required()->check(CLI::ExistingFile);
  score->add_option("--data", cls.data)->required()->check(CLI::ExistingFile);
  score->add_option("--out", cls.out)->required();
  score->callback([&] {
    action = [&] {
      const Json doc = io::read_json(cls.model);
      const LabeledRows rows = read_labeled_csv(cls.data);
      std::string csv;
      int correct = 0;
      const std::string type = doc.value("type", "");
      if (type == "da") {
        DaModel model;
        model.weights = json_vec(doc.at("weights"));
        model.bias = doc.at("bias").get<double>();
        csv = "row,label,predicted,evi\n";
        for (Eigen::Index i = 0; i < rows.features.rows(); ++i) {
          const EviResult r = da_score(model, Vector(rows.features.row(i).transpose()));
          const int pred = r.healthy ? 0 : 1;
          correct += pred == rows.labels[static_cast<std::size_t>(i)];
          csv += join_row({std::to_string(i), std::to_string(rows.labels[static_cast<std::size_t>(i)]),
                           std::to_string(pred), io::format_number(r.evi)});
        }
      } else if (type == "elm") {
        ElmModel model;
        model.input_dim = doc.at("input_dim").get<int>();
        model.hidden_dim = doc.at("hidden_dim").get<int>();
        model.classes = doc.at("classes").get<int>();
        model.seed = doc.at("seed").get<std::uint64_t>();
        model.input_mean = json_vec(doc.at("input_mean"));
        model.input_scale = json_vec(doc.at("input_scale"));
        model.input_weights = json_mat(doc.at("input_weights"));
        model.hidden_bias = json_vec(doc.at("hidden_bias"));
        model.output_weights = json_mat(doc.at("output_weights"));
        csv = "row,label,predicted\n";
        for (Eigen::Index i = 0; i < rows.features.rows(); ++i) {
          const ElmPrediction r = elm_predict(model, Vector(rows.features.row(i).transpose()));
          correct += r.label == rows.labels[static_cast<std::size_t>(i)];
          csv += join_row({std::to_string(i), std::to_string(rows.labels[static_cast<std::size_t>(i)]),
                           std::to_string(r.label)});
        }
      } else {
        fail(ErrorKind::kParse, cls.model + ": field /type must be \"da\" or \"elm\"");
      }
      write_text(cls.out, csv);
      const double accuracy = static_cast<double>(correct) / static_cast<double>(rows.labels.size());
      std::cout << "accuracy," << io::format_number(accuracy) << "\n";
      io::RunManifest m = manifest("classify score", {{"type", type}, {"accuracy", accuracy}});
      m.inputs = {cls.model, cls.data};
      m.outputs = {cls.out};
      finish(m, cls.out, t0);
    };
  });

  // cs ---------------------------------------------------------------------
  struct {
    std::string cube, meas, out, selection = "low-sequency", method = "gate";
    int patterns = 0;
    std::optional<int> side;
    std::uint64_t seed = 1;
    double ridge = 1e-3;
    double min_counts = 100.0;
  } cs;
  auto* csc = app.add_subcommand("cs", "compressive-sensing simulation and reconstruction");
  csc->require_subcommand(1);
  auto* forward = csc->add_subcommand("forward", "cube -> Hadamard measurements");
  forward->add_option("--cube", cs.cube)->required()->check(CLI::ExistingFile);
  forward->add_option("--out", cs.out)->required();
  forward->add_option("--side", cs.side, "pattern side (default: cube width)");
  forward->add_option("--patterns", cs.patterns, "number of patterns (default: all)");
  forward->add_option("--seed", cs.seed);
  forward->add_option("--selection", cs.selection)->check(CLI::IsMember({"low-sequency", "shuffled"}));
  forward->callback([&] {
    action = [&] {
      const FlimCube cube = io::read_cube(cs.cube);
      const int side = cs.side.value_or(cube.width);
      const int n = cs.patterns > 0 ? cs.patterns : side * side;
      const PatternSet pats = hadamard_patterns(side, n, cs.seed, parse_selection(cs.selection));
      io::write_measurement(cs_forward(cube, pats), cs.out, cs.seed, parse_selection(cs.selection));
      io::RunManifest m = manifest("cs forward", {{"side", side}, {"patterns", n}, {"selection", cs.selection}});
      m.seeds["patterns"] = cs.seed;
      m.inputs = {cs.cube};
      m.outputs = {cs.out};
      finish(m, cs.out, t0);
    };
  });
  auto* invert = csc->add_subcommand("invert", "measurements -> reconstructed stack");
  invert->add_option("--meas", cs.meas)->required()->check(CLI::ExistingFile);
  invert->add_option("--out", cs.out)->required();
  invert->add_option("--ridge", cs.ridge)->check(CLI::NonNegativeNumber);
  invert->callback([&] {
    action = [&] {
      const io::MeasurementFile mf = io::read_measurement(cs.meas);
      const PatternSet pats = hadamard_patterns(mf.meas.side, static_cast<int>(mf.meas.values.rows()), mf.seed,
                                                mf.selection);
      const CsReconstruction rec = cs_invert(mf.meas, pats, cs.ridge);
      io::write_cube(rec.stack, cs.out, io::CountType::kF64);
      io::RunManifest m = manifest("cs invert", {{"ridge", cs.ridge}, {"clamp_fraction", rec.clamp_fraction}});
      m.seeds["patterns"] = mf.seed;
      m.inputs = {cs.meas};
      m.outputs = {cs.out};
      finish(m, cs.out, t0);
    };
  });
  auto* cs_life = csc->add_subcommand("lifetime", "reconstructed stack -> lifetime CSV");
  cs_life->add_option("--cube", cs.cube)->required()->check(CLI::ExistingFile);
  cs_life->add_option("--out", cs.out)->required();
  cs_life->add_option("--method", cs.method)->check(CLI::IsMember({"lsm", "gate"}));
  cs_life->add_option("--min-counts", cs.min_counts);
  cs_life->callback([&] {
    action = [&] {
      const FlimCube stack = io::read_cube(cs.cube);
      BatchOptions opts;
      opts.fit.min_counts = cs.min_counts;
      const auto method = cs.method == "lsm" ? CsLifetimeMethod::kLsm : CsLifetimeMethod::kGate;
      io::export_lifetime_csv(cs_lifetime(stack, method, Irf::dirac(), opts), cs.out);
      io::RunManifest m = manifest("cs lifetime", {{"method", cs.method}, {"min_counts", cs.min_counts}});
      m.inputs = {cs.cube};
      m.outputs = {cs.out};
      finish(m, cs.out, t0);
    };
  });

  // denoise ----------------------------------------------------------------
  struct {
    std::vector<std::string> cubes;
    std::string out, method = "average", reference, report;
    double sigma = 1.0;
    int radius = 1;
    bool compare = false;
    PhasorArgs ph;
  } den;
  auto* denoise = app.add_subcommand("denoise", "S/G-plane denoising -> lifetime CSV");
  denoise->add_option("--cube", den.cubes, "input cube; repeat for frame averaging")->required()->check(CLI::ExistingFile);
  denoise->add_option("--out", den.out)->required();
  denoise->add_option("--method", den.method)->check(CLI::IsMember({"average", "gaussian", "median"}));
  denoise->add_option("--sigma", den.sigma)->check(CLI::PositiveNumber);
  denoise->add_option("--radius", den.radius)->check(CLI::PositiveNumber);
  denoise->add_flag("--compare-direct", den.compare, "also denoise lifetimes directly and report PSNR");
  denoise->add_option("--reference", den.reference, "reference lifetime CSV for PSNR")->check(CLI::ExistingFile);
  denoise->add_option("--report", den.report, "PSNR report CSV");
  den.ph.add(denoise);
  denoise->callback([&] {
    action = [&] {
      if (den.compare && (den.reference.empty() || den.report.empty())) {
        throw UsageError("--compare-direct needs --reference and --report");
      }
      std::vector<PhasorImage> frames;
      for (const auto& c : den.cubes) frames.push_back(den.ph.make(io::read_cube(c)));
      const DenoiseMethod method = parse_denoise(den.method, static_cast<int>(frames.size()), den.sigma, den.radius);
      const LifetimeImage sg = lifetime_from_phasor_image(denoise_sg(frames, method));
      io::export_lifetime_csv(sg, den.out);
      io::RunManifest m = manifest("denoise", {{"method", den.method}, {"sigma", den.sigma}, {"radius", den.radius},
                                               {"frames", frames.size()}, {"floor", den.ph.floor}});
      m.inputs.assign(den.cubes.begin(), den.cubes.end());
      m.outputs = {den.out};
      if (den.compare) {
        const RealImage ref = lifetime_plane(io::import_lifetime_csv(den.reference));
        const RealImage direct = denoise_lifetime_direct(frames, method);
        const RealImage noisy = lifetime_plane(lifetime_from_phasor_image(frames.front()));
        const double p_sg = psnr(lifetime_plane(sg), ref);
        const double p_direct = psnr(direct, ref);
        const double p_noisy = psnr(noisy, ref);
        write_text(den.report, "path,psnr_db\nsg," + io::format_number(p_sg) + "\ndirect," +
                                   io::format_number(p_direct) + "\nnoisy," + io::format_number(p_noisy) + "\n");
        m.inputs.push_back(den.reference);
        m.outputs.push_back(den.report);
      }
      finish(m, den.out, t0);
    };
  });

  // composite --------------------------------------------------------------
  struct {
    std::string lifetime, out;
    double tau_min = 0.0, tau_max = 5.0;
  } comp;
  auto* composite_cmd = app.add_subcommand("composite", "lifetime CSV -> HSV composite PPM");
  composite_cmd->add_option("--lifetime", comp.lifetime)->required()->check(CLI::ExistingFile);
  composite_cmd->add_option("--out", comp.out)->required();
  composite_cmd->add_option("--tau-min", comp.tau_min, "ns (red)");
  composite_cmd->add_option("--tau-max", comp.tau_max, "ns (blue)");
  composite_cmd->callback([&] {
    action = [&] {
      const LifetimeImage img = io::import_lifetime_csv(comp.lifetime);
      RealImage intensity(img.width, img.height);
      intensity.values = img.intensity;
      std::fill(intensity.valid.begin(), intensity.valid.end(), 1);
      io::write_ppm(composite(intensity, img, comp.tau_min, comp.tau_max), comp.out);
      io::RunManifest m = manifest("composite", {{"tau_min", comp.tau_min}, {"tau_max", comp.tau_max}});
      m.inputs = {comp.lifetime};
      m.outputs = {comp.out};
      finish(m, comp.out, t0);
    };
  });

  // train-mlp --------------------------------------------------------------
  struct {
    std::string config, out;
    int bins = 256;
    double bin_width = 12.5 / 256.0;
    IrfArgs irf;
  } tm;
  auto* train_mlp = app.add_subcommand("train-mlp", "TrainConfig JSON -> FLMLP1 model");
  train_mlp->add_option("--config", tm.config)->check(CLI::ExistingFile);
  train_mlp->add_option("--out", tm.out)->required();
  train_mlp->add_option("--bins", tm.bins)->check(CLI::PositiveNumber);
  train_mlp->add_option("--bin-width", tm.bin_width, "ns")->check(CLI::PositiveNumber);
  tm.irf.add(train_mlp);
  train_mlp->callback([&] {
    action = [&] {
      const Json doc = tm.config.empty() ? Json::object() : io::read_json(tm.config);
      const TrainConfig cfg = io::parse_train_config(doc);
      const TimeGrid grid = grid_from(doc, tm.bins, tm.bin_width);
      const Irf irf = doc.contains("irf") ? io::parse_phantom({{"width", 1}, {"height", 1}, {"regions", Json::array()},
                                                               {"irf", doc["irf"]}}).irf
                                          : tm.irf.make();
      const MlpModel model = mlp_train(cfg, irf, grid);
      io::save_mlp(model, tm.out);
      io::RunManifest m = manifest("train-mlp", {{"dataset_size", cfg.dataset_size}, {"epochs", cfg.epochs},
                                                 {"final_loss", model.final_loss}, {"n_bins", grid.n_bins},
                                                 {"bin_width_ns", grid.bin_width}});
      m.seeds["training"] = cfg.seed;
      if (!tm.config.empty()) m.inputs = {tm.config};
      m.outputs = {tm.out};
      finish(m, tm.out, t0);
    };
  });

  // bench ------------------------------------------------------------------
  struct {
    std::string pipeline = "mlp-vs-lsm", model, cube, out;
    int trials = 500;
    double photons = 1e4;
    std::uint64_t seed = 11;
    IrfArgs irf;
  } bn;
  auto* bench = app.add_subcommand("bench", "speed and success-rate tables as CSV");
  bench->add_option("--pipeline", bn.pipeline)->check(CLI::IsMember({"mlp-vs-lsm", "success-rate"}));
  bench->add_option("--model", bn.model)->required()->check(CLI::ExistingFile);
  bench->add_option("--cube", bn.cube, "benchmark cube (mlp-vs-lsm)")->check(CLI::ExistingFile);
  bench->add_option("--out", bn.out)->required();
  bench->add_option("--trials", bn.trials)->check(CLI::PositiveNumber);
  bench->add_option("--photons", bn.photons)->check(CLI::PositiveNumber);
  bench->add_option("--seed", bn.seed);
  bn.irf.add(bench);
  bench->callback([&] {
    action = [&] {
      const MlpModel model = io::load_mlp(bn.model);
      io::RunManifest m = manifest("bench", {{"pipeline", bn.pipeline}, {"irf", bn.irf.json()}});
      m.inputs = {bn.model};
      if (bn.pipeline == "mlp-vs-lsm") {
        if (bn.cube.empty()) throw UsageError("--pipeline mlp-vs-lsm needs --cube");
        const FlimCube cube = io::read_cube(bn.cube);
        const SpeedComparison s = compare_speed(model, cube, bn.irf.make());
        write_text(bn.out, "pixels,mlp_seconds,lsm_seconds,speedup\n" +
                               join_row({std::to_string(s.pixels), io::format_number(s.mlp_seconds),
                                         io::format_number(s.lsm_seconds), io::format_number(s.speedup())}));
        m.inputs.push_back(bn.cube);
      } else {
        SuccessOptions opts;
        opts.trials = bn.trials;
        opts.photons = bn.photons;
        opts.seed = bn.seed;
        const TimeGrid grid(model.sizes.front(), 12.5 / model.sizes.front());
        const SuccessRate r = success_rate(model, TrainConfig{}, bn.irf.make(), grid, opts);
        write_text(bn.out, "method,trials,success,rate\n" +
                               join_row({"mlp", std::to_string(r.trials), std::to_string(r.mlp_success),
                                         io::format_number(r.mlp_rate())}) +
                               join_row({"lsm", std::to_string(r.trials), std::to_string(r.lsm_success),
                                         io::format_number(r.lsm_rate())}));
        m.seeds["trials"] = bn.seed;
      }
      m.outputs = {bn.out};
      finish(m, bn.out, t0);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  set_thread_count(static_cast<unsigned>(threads));
  try {
    if (action) action();
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace flim
