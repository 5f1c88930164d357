#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flim/cs.hpp"
#include "flim/decay.hpp"
#include "flim/denoise.hpp"
#include "flim/estimator.hpp"
#include "flim/segment.hpp"
#include "flim/types.hpp"

namespace flim::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

enum class CountType { kU16, kU32, kF64 };

std::string to_string(CountType t);

/// Narrowest type that holds every count losslessly.
CountType required_count_type(const Matrix& counts);

struct CubeHeader {
  int version = 1;
  int width = 0;
  int height = 0;
  TimeGrid grid;
  CountType count_type = CountType::kU16;
};

/// "FLIMCUBE", u32 LE header length, JSON header, time-fastest LE payload.
/// A requested integer type that is too narrow is promoted.
void write_cube(const FlimCube& cube, const fs::path& path, std::optional<CountType> type = std::nullopt);
FlimCube read_cube(const fs::path& path);
CubeHeader read_cube_header(const fs::path& path);

std::vector<std::uint8_t> encode_cube(const FlimCube& cube, std::optional<CountType> type = std::nullopt);
FlimCube decode_cube(const std::vector<std::uint8_t>& bytes);

/// Same framing with magic "FLIMMEAS"; values are f64, pattern-major.
void write_measurement(const CsMeasurement& meas, const fs::path& path, std::uint64_t seed,
                       PatternSelection selection);
struct MeasurementFile {
  CsMeasurement meas;
  std::uint64_t seed = 0;
  PatternSelection selection = PatternSelection::kLowSequency;
};
MeasurementFile read_measurement(const fs::path& path);

/// Locale-independent shortest form with at most 9 significant digits.
std::string format_number(double v);

/// Columns x,y,g,s,intensity,valid; one row per valid pixel.
void export_phasor_csv(const PhasorImage& img, const fs::path& path);
/// Columns x,y,tau1..,fraction1..,intensity,valid; one row per pixel,
/// invalid pixels written as zeros.
void export_lifetime_csv(const LifetimeImage& img, const fs::path& path);
/// Inverse of export_lifetime_csv; dimensions come from the pixel columns.
LifetimeImage import_lifetime_csv(const fs::path& path);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_ppm(const ColorImage& img, const fs::path& path);
ColorImage read_ppm(const fs::path& path);
void write_pgm(const GrayImage& img, const fs::path& path);
GrayImage read_pgm(const fs::path& path);

/// "FLMLP1" model container with a trailing FNV-1a 64 checksum.
void save_mlp(const MlpModel& model, const fs::path& path);
MlpModel load_mlp(const fs::path& path);
std::vector<std::uint8_t> encode_mlp(const MlpModel& model);
MlpModel decode_mlp(const std::vector<std::uint8_t>& bytes);
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

/// MNIST-style unsigned-byte image stack.
struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;
};
IdxImages read_idx(const fs::path& path);
/// Image `index` resampled (nearest) onto a width x height canvas, weights v/255.
MaskShape idx_mask(const IdxImages& images, int index, int width, int height);

/// Phantom description plus acquisition settings.
struct PhantomFile {
  PhantomSpec spec;
  Irf irf;
  TimeGrid grid;
};
/// Relative IDX paths resolve against `base_dir`.
PhantomFile parse_phantom(const Json& doc, const fs::path& base_dir = {});
PhantomFile read_phantom(const fs::path& path);

TrainConfig parse_train_config(const Json& doc);

struct RunManifest {
  std::string command;
  Json parameters = Json::object();
  std::map<std::string, std::uint64_t> seeds;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::map<std::string, double> timings_s;
};

std::string sha256_file(const fs::path& path);
/// Writes the manifest with digests of every input and output, then re-reads
/// the files and throws kIo if any digest changed.
void write_manifest(const RunManifest& manifest, const fs::path& path);

/// Write-temp-then-rename.
void write_file_atomic(const fs::path& path, const std::string& bytes);
void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const fs::path& path);

Json read_json(const fs::path& path);

}  // namespace flim::io
