#include "flim/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unistd.h>

#include "flim/error.hpp"

namespace flim::io {

namespace {

constexpr char kCubeMagic[8] = {'F', 'L', 'I', 'M', 'C', 'U', 'B', 'E'};
constexpr char kMeasMagic[8] = {'F', 'L', 'I', 'M', 'M', 'E', 'A', 'S'};
constexpr char kMlpMagic[6] = {'F', 'L', 'M', 'L', 'P', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  std::vector<std::uint8_t>& data() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : buf_(b), what_(std::move(what)) {}
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      fail(ErrorKind::kParse, what_ + ": truncated " + field + " at byte offset " + std::to_string(pos_) +
                                  " (need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                                  " available)");
    }
  }
  const std::uint8_t* take(std::size_t n, const char* field) {
    need(n, field);
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t le(int n, const char* field) {
    const std::uint8_t* p = take(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64(const char* field) {
    const std::uint64_t bits = le(8, field);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  [[noreturn]] void error(const std::string& msg, std::size_t at) const {
    fail(ErrorKind::kParse, what_ + ": " + msg + " at byte offset " + std::to_string(at));
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::size_t type_size(CountType t) {
  switch (t) {
    case CountType::kU16: return 2;
    case CountType::kU32: return 4;
    case CountType::kF64: return 8;
  }
  return 8;
}

CountType parse_count_type(const std::string& s, const Reader& r, std::size_t at) {
  if (s == "u16") return CountType::kU16;
  if (s == "u32") return CountType::kU32;
  if (s == "f64") return CountType::kF64;
  r.error("unsupported count_dtype \"" + s + "\"", at);
}

int rank(CountType t) { return static_cast<int>(t); }

template <class T>
T header_field(const Json& h, const char* key, const Reader& r, std::size_t at) {
  if (!h.contains(key)) r.error(std::string("header missing field \"") + key + "\"", at);
  try {
    return h.at(key).get<T>();
  } catch (const Json::exception&) {
    r.error(std::string("header field \"") + key + "\" has the wrong type", at);
  }
}

void write_framed(Writer& w, const char* magic, const Json& header) {
  const std::string text = header.dump();
  w.bytes(magic, 8);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
}

Json read_framed(Reader& r, const char* magic, const char* name) {
  const std::uint8_t* m = r.take(8, "magic");
  if (std::memcmp(m, magic, 8) != 0) r.error(std::string("bad magic (expected \"") + name + "\")", 0);
  const auto len = static_cast<std::size_t>(r.le(4, "header length"));
  const std::size_t at = r.offset();
  const std::uint8_t* text = r.take(len, "JSON header");
  Json h;
  try {
    h = Json::parse(text, text + len);
  } catch (const Json::parse_error& e) {
    r.error(std::string("malformed JSON header (") + e.what() + ")", at + (e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!h.is_object()) r.error("header is not a JSON object", at);
  return h;
}

std::string csv_join(std::initializer_list<std::string> cells) {
  std::string row;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) row += ',';
    row += c;
    first = false;
  }
  row += '\n';
  return row;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

void io_error(const fs::path& path, const std::string& what) {
  fail(ErrorKind::kIo, path.string() + ": " + what);
}

}  // namespace

std::string to_string(CountType t) {
  switch (t) {
    case CountType::kU16: return "u16";
    case CountType::kU32: return "u32";
    case CountType::kF64: return "f64";
  }
  return "f64";
}

CountType required_count_type(const Matrix& counts) {
  CountType t = CountType::kU16;
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    const double v = counts.data()[i];
    if (!(v >= 0.0) || v != std::floor(v) || v > 4294967295.0) return CountType::kF64;
    if (v > 65535.0) t = CountType::kU32;
  }
  return t;
}

std::vector<std::uint8_t> encode_cube(const FlimCube& cube, std::optional<CountType> type) {
  require(cube.counts.rows() == cube.grid.n_bins && cube.counts.cols() == cube.pixels(), "cube shape mismatch");
  const CountType needed = required_count_type(cube.counts);
  CountType t = type.value_or(needed);
  if (rank(t) < rank(needed)) t = needed;
  Json h = {{"version", 1},
            {"width", cube.width},
            {"height", cube.height},
            {"n_bins", cube.grid.n_bins},
            {"bin_width_ns", cube.grid.bin_width},
            {"origin_ns", cube.grid.origin},
            {"count_dtype", to_string(t)}};
  Writer w;
  write_framed(w, kCubeMagic, h);
  const double* d = cube.counts.data();  // column-major: time fastest
  for (Eigen::Index i = 0; i < cube.counts.size(); ++i) {
    switch (t) {
      case CountType::kU16: w.u16(static_cast<std::uint16_t>(d[i])); break;
      case CountType::kU32: w.u32(static_cast<std::uint32_t>(d[i])); break;
      case CountType::kF64: w.f64(d[i]); break;
    }
  }
  return std::move(w.data());
}

namespace {

CubeHeader parse_cube_header(Reader& r) {
  const Json h = read_framed(r, kCubeMagic, "FLIMCUBE");
  const std::size_t at = 12;
  CubeHeader c;
  c.version = header_field<int>(h, "version", r, at);
  if (c.version != 1) r.error("unsupported version " + std::to_string(c.version), at);
  c.width = header_field<int>(h, "width", r, at);
  c.height = header_field<int>(h, "height", r, at);
  const int n_bins = header_field<int>(h, "n_bins", r, at);
  const double bw = header_field<double>(h, "bin_width_ns", r, at);
  const double origin = h.contains("origin_ns") ? header_field<double>(h, "origin_ns", r, at) : 0.0;
  if (c.width <= 0 || c.height <= 0 || n_bins <= 0 || !(bw > 0.0)) r.error("header has non-positive dimensions", at);
  c.grid = TimeGrid(n_bins, bw, origin);
  c.count_type = parse_count_type(header_field<std::string>(h, "count_dtype", r, at), r, at);
  return c;
}

}  // namespace

FlimCube decode_cube(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "FLIMCUBE");
  const CubeHeader h = parse_cube_header(r);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * h.grid.n_bins;
  const std::size_t sz = type_size(h.count_type);
  r.need(n * sz, "payload");
  FlimCube cube(h.width, h.height, h.grid);
  double* d = cube.counts.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (h.count_type) {
      case CountType::kU16: d[i] = static_cast<double>(r.le(2, "payload")); break;
      case CountType::kU32: d[i] = static_cast<double>(r.le(4, "payload")); break;
      case CountType::kF64: d[i] = r.f64("payload"); break;
    }
  }
  if (r.remaining() != 0) r.error(std::to_string(r.remaining()) + " trailing bytes after payload", r.offset());
  return cube;
}

void write_cube(const FlimCube& cube, const fs::path& path, std::optional<CountType> type) {
  write_file_atomic(path, encode_cube(cube, type));
}

FlimCube read_cube(const fs::path& path) {
  try {
    return decode_cube(read_file(path));
  } catch (const FlimError& e) {
    if (e.kind() == ErrorKind::kParse) fail(ErrorKind::kParse, path.string() + ": " + e.what());
    throw;
  }
}

CubeHeader read_cube_header(const fs::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  return parse_cube_header(r);
}

void write_measurement(const CsMeasurement& meas, const fs::path& path, std::uint64_t seed,
                       PatternSelection selection) {
  Json h = {{"version", 1},
            {"kind", "cs-measurement"},
            {"n_patterns", meas.values.rows()},
            {"n_bins", meas.grid.n_bins},
            {"bin_width_ns", meas.grid.bin_width},
            {"origin_ns", meas.grid.origin},
            {"side", meas.side},
            {"seed", seed},
            {"selection", selection == PatternSelection::kShuffled ? "shuffled" : "low-sequency"},
            {"dtype", "f64"}};
  Writer w;
  write_framed(w, kMeasMagic, h);
  for (Eigen::Index p = 0; p < meas.values.rows(); ++p) {
    for (Eigen::Index b = 0; b < meas.values.cols(); ++b) w.f64(meas.values(p, b));
  }
  write_file_atomic(path, w.data());
}

MeasurementFile read_measurement(const fs::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  const Json h = read_framed(r, kMeasMagic, "FLIMMEAS");
  const std::size_t at = 12;
  if (header_field<int>(h, "version", r, at) != 1) r.error("unsupported version", at);
  MeasurementFile out;
  const int n_patterns = header_field<int>(h, "n_patterns", r, at);
  const int n_bins = header_field<int>(h, "n_bins", r, at);
  out.meas.side = header_field<int>(h, "side", r, at);
  if (n_patterns <= 0 || n_bins <= 0 || out.meas.side <= 0) r.error("header has non-positive dimensions", at);
  out.meas.grid = TimeGrid(n_bins, header_field<double>(h, "bin_width_ns", r, at),
                           header_field<double>(h, "origin_ns", r, at));
  out.seed = header_field<std::uint64_t>(h, "seed", r, at);
  const std::string sel = header_field<std::string>(h, "selection", r, at);
  if (sel == "shuffled") {
    out.selection = PatternSelection::kShuffled;
  } else if (sel == "low-sequency") {
    out.selection = PatternSelection::kLowSequency;
  } else {
    r.error("unknown selection \"" + sel + "\"", at);
  }
  r.need(static_cast<std::size_t>(n_patterns) * n_bins * 8, "payload");
  out.meas.values.resize(n_patterns, n_bins);
  for (int p = 0; p < n_patterns; ++p) {
    for (int b = 0; b < n_bins; ++b) out.meas.values(p, b) = r.f64("payload");
  }
  if (r.remaining() != 0) r.error("trailing bytes after payload", r.offset());
  return out;
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return "0";
  if (v == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

void export_phasor_csv(const PhasorImage& img, const fs::path& path) {
  std::string out = "x,y,g,s,intensity,valid\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int p = y * img.width + x;
      if (!img.valid[p]) continue;
      out += csv_join({std::to_string(x), std::to_string(y), format_number(img.g[p]), format_number(img.s[p]),
                       format_number(img.intensity[p]), "1"});
    }
  }
  write_file_atomic(path, out);
}

void export_lifetime_csv(const LifetimeImage& img, const fs::path& path) {
  std::string out = "x,y";
  for (int c = 0; c < img.n_components; ++c) out += ",tau" + std::to_string(c + 1);
  for (int c = 0; c < img.n_components; ++c) out += ",fraction" + std::to_string(c + 1);
  out += ",intensity,valid\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int p = y * img.width + x;
      const bool ok = img.valid[p] != 0;
      out += std::to_string(x) + ',' + std::to_string(y);
      for (int c = 0; c < img.n_components; ++c) out += ',' + (ok ? format_number(img.tau(c, p)) : "0");
      for (int c = 0; c < img.n_components; ++c) out += ',' + (ok ? format_number(img.fraction(c, p)) : "0");
      out += ',' + format_number(img.intensity[p]) + ',' + (ok ? "1" : "0") + '\n';
    }
  }
  write_file_atomic(path, out);
}

LifetimeImage import_lifetime_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) io_error(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kParse, path.string() + ": empty file");
  int taus = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) taus += cell.rfind("tau", 0) == 0 ? 1 : 0;
  }
  if (taus == 0) fail(ErrorKind::kParse, path.string() + ": header has no tau column");
  std::vector<std::vector<double>> rows;
  int row = 1;
  int width = 0, height = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> v;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double d = 0.0;
      const auto res = std::from_chars(p, comma, d);
      if (res.ec != std::errc() || res.ptr != comma) {
        fail(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " column " +
                                    std::to_string(v.size() + 1) + " is not a number");
      }
      v.push_back(d);
      p = comma + 1;
    }
    if (v.size() != static_cast<std::size_t>(4 + 2 * taus)) {
      fail(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " has " + std::to_string(v.size()) +
                                  " columns");
    }
    if (v[0] < 0 || v[1] < 0) fail(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " negative pixel");
    width = std::max(width, static_cast<int>(v[0]) + 1);
    height = std::max(height, static_cast<int>(v[1]) + 1);
    rows.push_back(std::move(v));
  }
  if (rows.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorKind::kParse, path.string() + ": expected one row per pixel of a " + std::to_string(width) + "x" +
                                std::to_string(height) + " image");
  }
  LifetimeImage img(width, height, taus);
  for (const auto& v : rows) {
    const int q = static_cast<int>(v[1]) * width + static_cast<int>(v[0]);
    for (int c = 0; c < taus; ++c) {
      img.tau(c, q) = v[2 + c];
      img.fraction(c, q) = v[2 + taus + c];
    }
    img.intensity[q] = v[2 + 2 * taus];
    img.valid[q] = v[3 + 2 * taus] != 0.0;
  }
  return img;
}

namespace {

std::string netpbm(const char* magic, int w, int h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

// Returns the payload offset after a P5/P6 header.
std::size_t parse_netpbm(const std::vector<std::uint8_t>& b, const char* magic, int& w, int& h, const fs::path& path) {
  std::size_t pos = 0;
  auto perr = [&](const std::string& msg) {
    fail(ErrorKind::kParse, path.string() + ": " + msg + " at byte offset " + std::to_string(pos));
  };
  if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1]) perr(std::string("bad magic (expected ") + magic + ")");
  pos = 2;
  auto token = [&]() {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    const std::size_t start = pos;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
    if (pos == start) perr("expected an integer");
    return v;
  };
  w = static_cast<int>(token());
  h = static_cast<int>(token());
  const long maxval = token();
  if (maxval != 255) perr("only maxval 255 is supported");
  if (w <= 0 || h <= 0) perr("non-positive dimensions");
  if (pos >= b.size() || !std::isspace(b[pos])) perr("missing separator before payload");
  return pos + 1;
}

}  // namespace

void write_ppm(const ColorImage& img, const fs::path& path) {
  require(img.pixels.size() == static_cast<std::size_t>(img.width) * img.height, "color image size mismatch");
  std::string out = netpbm("P6", img.width, img.height);
  for (const Rgb& c : img.pixels) {
    out += static_cast<char>(c.r);
    out += static_cast<char>(c.g);
    out += static_cast<char>(c.b);
  }
  write_file_atomic(path, out);
}

ColorImage read_ppm(const fs::path& path) {
  const auto b = read_file(path);
  ColorImage img;
  const std::size_t at = parse_netpbm(b, "P6", img.width, img.height, path);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (b.size() - at < 3 * n) {
    fail(ErrorKind::kParse, path.string() + ": truncated payload at byte offset " + std::to_string(b.size()));
  }
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = {b[at + 3 * i], b[at + 3 * i + 1], b[at + 3 * i + 2]};
  return img;
}

void write_pgm(const GrayImage& img, const fs::path& path) {
  require(img.pixels.size() == static_cast<std::size_t>(img.width) * img.height, "gray image size mismatch");
  std::string out = netpbm("P5", img.width, img.height);
  out.append(img.pixels.begin(), img.pixels.end());
  write_file_atomic(path, out);
}

GrayImage read_pgm(const fs::path& path) {
  const auto b = read_file(path);
  GrayImage img;
  const std::size_t at = parse_netpbm(b, "P5", img.width, img.height, path);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (b.size() - at < n) {
    fail(ErrorKind::kParse, path.string() + ": truncated payload at byte offset " + std::to_string(b.size()));
  }
  img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(at), b.begin() + static_cast<std::ptrdiff_t>(at + n));
  return img;
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_mlp(const MlpModel& model) {
  const std::size_t layers = model.weights.size();
  require(layers + 1 == model.sizes.size() && model.biases.size() == layers, "MLP layer bookkeeping mismatch");
  Writer w;
  w.bytes(kMlpMagic, 6);
  w.u32(static_cast<std::uint32_t>(model.sizes.size()));
  for (int s : model.sizes) w.u32(static_cast<std::uint32_t>(s));
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(model.epochs));
  w.f64(model.final_loss);
  const int in = model.sizes.front();
  require(model.input_mean.size() == in && model.input_scale.size() == in, "MLP normalization size mismatch");
  for (int i = 0; i < in; ++i) w.f64(model.input_mean[i]);
  for (int i = 0; i < in; ++i) w.f64(model.input_scale[i]);
  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix& W = model.weights[l];
    require(W.rows() == model.sizes[l + 1] && W.cols() == model.sizes[l], "MLP weight shape mismatch");
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) w.f64(W(r, c));
    }
    for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) w.f64(model.biases[l][r]);
  }
  const std::uint64_t sum = fnv1a64(w.data().data(), w.data().size());
  w.u64(sum);
  return std::move(w.data());
}

MlpModel decode_mlp(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "FLMLP1");
  const std::uint8_t* m = r.take(6, "magic");
  if (std::memcmp(m, kMlpMagic, 6) != 0) r.error("bad magic (expected \"FLMLP1\")", 0);
  if (bytes.size() < 14) r.error("file too short for a checksum", bytes.size());
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored) r.error("checksum mismatch", bytes.size() - 8);
  MlpModel model;
  const std::size_t dims_at = r.offset();
  const auto n_sizes = static_cast<std::size_t>(r.le(4, "layer count"));
  if (n_sizes < 2 || n_sizes > 64) r.error("implausible layer count", dims_at);
  for (std::size_t i = 0; i < n_sizes; ++i) {
    const auto s = static_cast<std::int64_t>(r.le(4, "layer size"));
    if (s <= 0 || s > (1 << 20)) r.error("implausible layer size", r.offset() - 4);
    model.sizes.push_back(static_cast<int>(s));
  }
  model.seed = r.le(8, "seed");
  model.epochs = static_cast<int>(r.le(4, "epochs"));
  model.final_loss = r.f64("final loss");
  const int in = model.sizes.front();
  model.input_mean.resize(in);
  model.input_scale.resize(in);
  for (int i = 0; i < in; ++i) model.input_mean[i] = r.f64("input mean");
  for (int i = 0; i < in; ++i) model.input_scale[i] = r.f64("input scale");
  for (std::size_t l = 0; l + 1 < n_sizes; ++l) {
    Matrix W(model.sizes[l + 1], model.sizes[l]);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(i, c) = r.f64("weights");
    }
    Vector b(model.sizes[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = r.f64("biases");
    model.weights.push_back(std::move(W));
    model.biases.push_back(std::move(b));
  }
  if (r.remaining() != 8) r.error("unexpected bytes before checksum", r.offset());
  return model;
}

void save_mlp(const MlpModel& model, const fs::path& path) { write_file_atomic(path, encode_mlp(model)); }

MlpModel load_mlp(const fs::path& path) {
  try {
    return decode_mlp(read_file(path));
  } catch (const FlimError& e) {
    if (e.kind() == ErrorKind::kParse) fail(ErrorKind::kParse, path.string() + ": " + e.what());
    throw;
  }
}

IdxImages read_idx(const fs::path& path) {
  const auto b = read_file(path);
  Reader r(b, path.string());
  const std::uint8_t* m = r.take(4, "magic");
  if (m[0] != 0 || m[1] != 0 || m[2] != 0x08) r.error("not an unsigned-byte IDX file", 0);
  if (m[3] != 3) r.error("expected a 3-dimensional IDX stack", 3);
  auto be32 = [&](const char* field) {
    const std::uint8_t* p = r.take(4, field);
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
  };
  IdxImages img;
  img.count = static_cast<int>(be32("count"));
  img.rows = static_cast<int>(be32("rows"));
  img.cols = static_cast<int>(be32("cols"));
  if (img.count <= 0 || img.rows <= 0 || img.cols <= 0) r.error("non-positive dimensions", 4);
  const std::size_t n = static_cast<std::size_t>(img.count) * img.rows * img.cols;
  const std::uint8_t* data = r.take(n, "payload");
  img.data.assign(data, data + n);
  return img;
}

MaskShape idx_mask(const IdxImages& images, int index, int width, int height) {
  require(index >= 0 && index < images.count, "IDX index out of range");
  require(width > 0 && height > 0, "mask canvas must be positive");
  MaskShape mask;
  mask.weight.resize(static_cast<std::size_t>(width) * height);
  const std::size_t base = static_cast<std::size_t>(index) * images.rows * images.cols;
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(images.rows - 1, static_cast<int>((y + 0.5) * images.rows / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(images.cols - 1, static_cast<int>((x + 0.5) * images.cols / width));
      mask.weight[static_cast<std::size_t>(y) * width + x] =
          images.data[base + static_cast<std::size_t>(sy) * images.cols + sx] / 255.0;
    }
  }
  return mask;
}

namespace {

[[noreturn]] void field_error(const std::string& where, const std::string& msg) {
  fail(ErrorKind::kParse, "phantom field " + where + ": " + msg);
}

template <class T>
T get(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) field_error(where + "/" + key, "missing");
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    field_error(where + "/" + key, "wrong type");
  }
}

template <class T>
T get_or(const Json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get<T>(obj, key, where);
}

DecayModel parse_model(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) field_error(where, "expected a non-empty component list");
  std::vector<DecayComponent> comps;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "/" + std::to_string(i);
    comps.push_back({get<double>(j[i], "amplitude", w), get<double>(j[i], "lifetime", w)});
  }
  try {
    return DecayModel(std::move(comps));
  } catch (const FlimError& e) {
    field_error(where, e.what());
  }
}

}  // namespace

PhantomFile parse_phantom(const Json& doc, const fs::path& base_dir) {
  PhantomFile out;
  const std::string root = "";
  out.spec.width = get<int>(doc, "width", root);
  out.spec.height = get<int>(doc, "height", root);
  if (out.spec.width <= 0 || out.spec.height <= 0) field_error("/width", "dimensions must be positive");
  if (doc.contains("grid")) {
    const Json& g = doc["grid"];
    out.grid = TimeGrid(get<int>(g, "n_bins", "/grid"), get<double>(g, "bin_width_ns", "/grid"),
                        get_or<double>(g, "origin_ns", 0.0, "/grid"));
  }
  if (doc.contains("irf")) {
    const Json& irf = doc["irf"];
    const std::string type = get<std::string>(irf, "type", "/irf");
    if (type == "dirac") {
      out.irf = Irf::dirac();
    } else if (type == "gaussian") {
      out.irf = Irf::gaussian(get<double>(irf, "center_ns", "/irf"), get<double>(irf, "fwhm_ns", "/irf"));
    } else if (type == "measured") {
      out.irf = Irf::measured(Eigen::Map<const Vector>(
          get<std::vector<double>>(irf, "samples", "/irf").data(),
          static_cast<Eigen::Index>(irf["samples"].size())));
    } else {
      field_error("/irf/type", "unknown IRF type \"" + type + "\"");
    }
  }
  out.spec.background_photons = get_or<double>(doc, "background_photons", 0.0, root);
  if (doc.contains("background_model")) out.spec.background_model = parse_model(doc["background_model"], "/background_model");
  if (!doc.contains("regions") || !doc["regions"].is_array()) field_error("/regions", "expected an array");
  std::optional<IdxImages> idx_cache;
  std::string idx_cache_path;
  for (std::size_t i = 0; i < doc["regions"].size(); ++i) {
    const std::string w = "/regions/" + std::to_string(i);
    const Json& reg = doc["regions"][i];
    PhantomRegion region;
    region.model = parse_model(reg.contains("components") ? reg["components"] : Json(), w + "/components");
    region.mean_photons = get<double>(reg, "photons", w);
    if (!(region.mean_photons >= 0.0)) field_error(w + "/photons", "must be non-negative");
    const std::string sw = w + "/shape";
    if (!reg.contains("shape")) field_error(sw, "missing");
    const Json& shape = reg["shape"];
    const std::string type = get<std::string>(shape, "type", sw);
    if (type == "rect") {
      region.shape = RectShape{get<int>(shape, "x0", sw), get<int>(shape, "y0", sw), get<int>(shape, "x1", sw),
                               get<int>(shape, "y1", sw)};
    } else if (type == "disk") {
      region.shape = DiskShape{get<double>(shape, "cx", sw), get<double>(shape, "cy", sw),
                               get<double>(shape, "radius", sw)};
    } else if (type == "idx") {
      const std::string p = resolve(base_dir, get<std::string>(shape, "path", sw)).string();
      if (!idx_cache || idx_cache_path != p) {
        idx_cache = read_idx(p);
        idx_cache_path = p;
      }
      region.shape = idx_mask(*idx_cache, get<int>(shape, "index", sw), out.spec.width, out.spec.height);
    } else {
      field_error(sw + "/type", "unknown shape \"" + type + "\"");
    }
    out.spec.regions.push_back(std::move(region));
  }
  return out;
}

PhantomFile read_phantom(const fs::path& path) {
  return parse_phantom(read_json(path), path.parent_path());
}

TrainConfig parse_train_config(const Json& doc) {
  TrainConfig c;
  const std::string w = "train config";
  auto num = [&](const char* key, auto& field) {
    if (!doc.contains(key)) return;
    try {
      field = doc.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const Json::exception&) {
      fail(ErrorKind::kParse, w + " field /" + key + ": wrong type");
    }
  };
  if (!doc.is_object()) fail(ErrorKind::kParse, w + ": expected a JSON object");
  num("dataset_size", c.dataset_size);
  num("photons_min", c.photons_min);
  num("photons_max", c.photons_max);
  num("tau1_min", c.tau1_min);
  num("tau1_max", c.tau1_max);
  num("tau2_min", c.tau2_min);
  num("tau2_max", c.tau2_max);
  num("a1_min", c.a1_min);
  num("a1_max", c.a1_max);
  num("learning_rate", c.learning_rate);
  num("final_learning_rate", c.final_learning_rate);
  num("momentum", c.momentum);
  num("batch_size", c.batch_size);
  num("epochs", c.epochs);
  num("hidden1", c.hidden1);
  num("hidden2", c.hidden2);
  num("seed", c.seed);
  c.validate();
  return c;
}

std::string sha256_file(const fs::path& path) {
  const auto bytes = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) io_error(path, "SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void write_manifest(const RunManifest& manifest, const fs::path& path) {
  Json doc;
  doc["command"] = manifest.command;
  doc["parameters"] = manifest.parameters;
  doc["seeds"] = manifest.seeds;
  auto digests = [](const std::vector<fs::path>& files) {
    Json arr = Json::array();
    for (const auto& f : files) arr.push_back({{"path", f.string()}, {"sha256", sha256_file(f)}});
    return arr;
  };
  doc["inputs"] = digests(manifest.inputs);
  doc["outputs"] = digests(manifest.outputs);
  doc["timings_s"] = manifest.timings_s;
  write_file_atomic(path, doc.dump(2) + "\n");
  for (const char* key : {"inputs", "outputs"}) {
    for (const auto& entry : doc[key]) {
      const std::string p = entry["path"].get<std::string>();
      if (sha256_file(p) != entry["sha256"].get<std::string>()) io_error(p, "digest changed after manifest write");
    }
  }
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_error(path, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      io_error(path, "write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    io_error(path, "rename failed: " + ec.message());
  }
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error(path, "cannot open for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

}  // namespace flim::io
