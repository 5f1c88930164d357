#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "flim/decay.hpp"
#include "flim/error.hpp"
#include "flim/io.hpp"
#include "flim/random.hpp"

using namespace flim;
namespace fs = std::filesystem;

namespace {

std::string message_of(const std::function<void()>& f, ErrorKind expected) {
  try {
    f();
  } catch (const FlimError& e) {
    CHECK(e.kind() == expected);
    return e.what();
  }
  FAIL("expected a FlimError");
  return {};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("flim_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path operator/(const std::string& name) const { return path / name; }
};

FlimCube random_cube(int w, int h, int bins, double max, std::uint64_t seed) {
  FlimCube cube(w, h, TimeGrid(bins, 0.05, 0.25));
  for (Eigen::Index i = 0; i < cube.counts.size(); ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i), 0);
    cube.counts.data()[i] = std::floor(max * rng.uniform());
  }
  return cube;
}

std::uint32_t header_len(const std::vector<std::uint8_t>& b) {
  return b[8] | (b[9] << 8) | (b[10] << 16) | (static_cast<std::uint32_t>(b[11]) << 24);
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("cube round trip") {
  TempDir dir;
  const FlimCube cube = random_cube(7, 5, 33, 1000, 1);
  io::write_cube(cube, dir / "a.flimcube");
  const FlimCube back = io::read_cube(dir / "a.flimcube");
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  CHECK(back.grid == cube.grid);
  CHECK(back.counts == cube.counts);
  CHECK(io::read_cube_header(dir / "a.flimcube").count_type == io::CountType::kU16);
  const auto bytes = io::read_file(dir / "a.flimcube");
  CHECK(std::memcmp(bytes.data(), "FLIMCUBE", 8) == 0);
  CHECK(bytes.size() == 12 + header_len(bytes) + 7 * 5 * 33 * 2);
  const auto j = io::Json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len(bytes));
  CHECK(j["version"] == 1);
  CHECK(j["count_dtype"] == "u16");
  CHECK(j["n_bins"] == 33);
}

TEST_CASE("payload is time-fastest little-endian") {
  FlimCube cube(2, 1, TimeGrid(3, 0.1));
  cube.counts << 1, 4, 2, 5, 3, 0x0102;
  const auto bytes = io::encode_cube(cube);
  const std::size_t off = 12 + header_len(bytes);
  const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<long>(off), bytes.end());
  CHECK(payload == std::vector<std::uint8_t>{1, 0, 2, 0, 3, 0, 4, 0, 5, 0, 2, 1});
}

TEST_CASE("u16 overflow promotes to u32") {
  FlimCube cube = random_cube(3, 3, 8, 100, 2);
  cube.counts(4, 4) = 70000;
  const auto bytes = io::encode_cube(cube, io::CountType::kU16);
  const FlimCube back = io::decode_cube(bytes);
  CHECK(back.counts == cube.counts);
  CHECK(io::Json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len(bytes))["count_dtype"] == "u32");
  cube.counts(0, 0) = 0.5;
  CHECK(io::required_count_type(cube.counts) == io::CountType::kF64);
  CHECK(io::decode_cube(io::encode_cube(cube)).counts == cube.counts);
}

TEST_CASE("truncated payload reports the exact offset") {
  const FlimCube cube = random_cube(4, 4, 16, 50, 3);
  auto bytes = io::encode_cube(cube);
  const std::size_t payload_at = 12 + header_len(bytes);
  bytes.resize(bytes.size() - 10);
  const std::string msg = message_of([&] { io::decode_cube(bytes); }, ErrorKind::kParse);
  CHECK(msg.find("payload") != std::string::npos);
  CHECK(msg.find("byte offset " + std::to_string(payload_at)) != std::string::npos);

  // header claims more bins than the payload holds
  FlimCube small = random_cube(2, 2, 4, 50, 4);
  auto good = io::encode_cube(small);
  const std::size_t hl = header_len(good);
  std::string header(good.begin() + 12, good.begin() + 12 + static_cast<long>(hl));
  auto j = io::Json::parse(header);
  j["n_bins"] = 5;
  const std::string patched = j.dump();
  std::vector<std::uint8_t> forged(good.begin(), good.begin() + 8);
  const auto n = static_cast<std::uint32_t>(patched.size());
  for (int i = 0; i < 4; ++i) forged.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  forged.insert(forged.end(), patched.begin(), patched.end());
  forged.insert(forged.end(), good.begin() + 12 + static_cast<long>(hl), good.end());
  const std::string m2 = message_of([&] { io::decode_cube(forged); }, ErrorKind::kParse);
  CHECK(m2.find("byte offset " + std::to_string(12 + patched.size())) != std::string::npos);
}

TEST_CASE("cube parse errors") {
  auto bytes = io::encode_cube(random_cube(2, 2, 4, 10, 5));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(message_of([&] { io::decode_cube(bad); }, ErrorKind::kParse).find("offset 0") != std::string::npos);
  bad = bytes;
  bad.push_back(0);
  CHECK(message_of([&] { io::decode_cube(bad); }, ErrorKind::kParse).find("trailing") != std::string::npos);
  bad.assign(bytes.begin(), bytes.begin() + 10);
  message_of([&] { io::decode_cube(bad); }, ErrorKind::kParse);

  std::string header(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(header_len(bytes)));
  auto forge = [&](const io::Json& j) {
    const std::string text = j.dump();
    std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
    const auto n = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), bytes.begin() + 12 + static_cast<long>(header_len(bytes)), bytes.end());
    return out;
  };
  io::Json j = io::Json::parse(header);
  j["version"] = 2;
  CHECK(message_of([&] { io::decode_cube(forge(j)); }, ErrorKind::kParse).find("version") != std::string::npos);
  j = io::Json::parse(header);
  j["count_dtype"] = "i8";
  message_of([&] { io::decode_cube(forge(j)); }, ErrorKind::kParse);
  j = io::Json::parse(header);
  j.erase("width");
  CHECK(message_of([&] { io::decode_cube(forge(j)); }, ErrorKind::kParse).find("width") != std::string::npos);
  message_of([] { io::read_cube("/nonexistent/dir/cube.bin"); }, ErrorKind::kIo);
}

TEST_CASE("measurement container round trip") {
  TempDir dir;
  CsMeasurement m;
  m.side = 4;
  m.grid = TimeGrid(6, 0.2);
  m.values = Matrix::Random(10, 6);
  io::write_measurement(m, dir / "m.bin", 42, PatternSelection::kShuffled);
  const io::MeasurementFile back = io::read_measurement(dir / "m.bin");
  CHECK(back.meas.values == m.values);
  CHECK(back.meas.side == 4);
  CHECK(back.meas.grid == m.grid);
  CHECK(back.seed == 42);
  CHECK(back.selection == PatternSelection::kShuffled);
  CHECK(std::memcmp(io::read_file(dir / "m.bin").data(), "FLIMMEAS", 8) == 0);
}

TEST_CASE("number formatting") {
  CHECK(io::format_number(0.0) == "0");
  CHECK(io::format_number(1.5) == "1.5");
  CHECK(io::format_number(-2.0) == "-2");
  CHECK(io::format_number(1.0 / 3.0) == "0.333333333");
  CHECK(io::format_number(123456789012.0) == "1.23456789e+11");
  CHECK(io::format_number(std::nan("")) == "0");
  CHECK(io::format_number(2.718281828459045) == "2.71828183");
  CHECK(io::format_number(1e-7) == "1e-07");
}

TEST_CASE("phasor CSV holds one row per valid pixel") {
  TempDir dir;
  PhasorImage img(4, 3, 0.5);
  for (int p = 0; p < 12; ++p) {
    img.g[p] = 0.1 * p;
    img.s[p] = 0.2;
    img.intensity[p] = 100 + p;
    img.valid[p] = p % 3 != 0;
  }
  io::export_phasor_csv(img, dir / "p.csv");
  const auto lines = lines_of(dir / "p.csv");
  REQUIRE(lines.size() == img.valid_count() + 1);
  CHECK(lines[0] == "x,y,g,s,intensity,valid");
  CHECK(lines[1] == "1,0,0.1,0.2,101,1");
  for (const auto& l : lines) CHECK(l.find("nan") == std::string::npos);
}

TEST_CASE("lifetime CSV round trip without NaN text") {
  TempDir dir;
  LifetimeImage img(3, 2, 2);
  for (int p = 0; p < 6; ++p) {
    img.tau(0, p) = 0.5 + 0.01 * p;
    img.tau(1, p) = 3.0 + 0.1 * p;
    img.fraction(0, p) = 0.25;
    img.fraction(1, p) = 0.75;
    img.intensity[p] = 1000 + p;
    img.valid[p] = 1;
  }
  img.valid[4] = 0;
  img.tau(0, 4) = std::nan("");
  io::export_lifetime_csv(img, dir / "l.csv");
  const auto lines = lines_of(dir / "l.csv");
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "x,y,tau1,tau2,fraction1,fraction2,intensity,valid");
  CHECK(lines[5] == "1,1,0,0,0,0,1004,0");
  for (const auto& l : lines) CHECK(l.find("nan") == std::string::npos);
  const LifetimeImage back = io::import_lifetime_csv(dir / "l.csv");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.n_components == 2);
  CHECK(back.valid == img.valid);
  for (int p = 0; p < 6; ++p)
    if (img.valid[p]) {
      CHECK(back.tau(1, p) == doctest::Approx(img.tau(1, p)));
      CHECK(back.fraction(0, p) == doctest::Approx(0.25));
    }
  write_text(dir / "bad.csv", "x,y,tau1,fraction1,intensity,valid\n0,0,abc,1,1,1\n");
  CHECK(message_of([&] { io::import_lifetime_csv(dir / "bad.csv"); }, ErrorKind::kParse).find("row 2 column 3") !=
        std::string::npos);
}

TEST_CASE("PPM and PGM round trips") {
  TempDir dir;
  ColorImage c{5, 3, {}};
  for (int i = 0; i < 15; ++i)
    c.pixels.push_back(
        {static_cast<std::uint8_t>(i * 17), static_cast<std::uint8_t>(255 - i), static_cast<std::uint8_t>(i * 3)});
  io::write_ppm(c, dir / "c.ppm");
  const ColorImage cb = io::read_ppm(dir / "c.ppm");
  CHECK(cb.width == 5);
  CHECK(cb.height == 3);
  CHECK(cb.pixels == c.pixels);
  const auto bytes = io::read_file(dir / "c.ppm");
  CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P6");

  io::GrayImage g{4, 2, {0, 10, 20, 30, 40, 50, 60, 255}};
  io::write_pgm(g, dir / "g.pgm");
  const io::GrayImage gb = io::read_pgm(dir / "g.pgm");
  CHECK(gb.pixels == g.pixels);
  CHECK(gb.width == 4);

  write_text(dir / "short.ppm", "P6\n2 2\n255\nabc");
  message_of([&] { io::read_ppm(dir / "short.ppm"); }, ErrorKind::kParse);
  write_text(dir / "magic.ppm", "P3\n1 1\n255\n0 0 0");
  message_of([&] { io::read_ppm(dir / "magic.ppm"); }, ErrorKind::kParse);
}

TEST_CASE("MLP container round trip and checksum") {
  TempDir dir;
  MlpModel m = mlp_init({16, 6, 5, 3}, 3);
  m.input_mean = Vector::Random(16);
  m.input_scale = Vector::Random(16).cwiseAbs();
  m.seed = 3;
  m.epochs = 7;
  m.final_loss = 0.125;
  io::save_mlp(m, dir / "m.flmlp");
  const MlpModel b = io::load_mlp(dir / "m.flmlp");
  CHECK(b.sizes == m.sizes);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(b.weights[l] == m.weights[l]);
    CHECK(b.biases[l] == m.biases[l]);
  }
  CHECK(b.input_mean == m.input_mean);
  CHECK(b.input_scale == m.input_scale);
  CHECK(b.seed == 3);
  CHECK(b.epochs == 7);
  CHECK(b.final_loss == 0.125);

  auto bytes = io::encode_mlp(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "FLMLP1");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  CHECK(stored == io::fnv1a64(bytes.data(), bytes.size() - 8));
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK(message_of([&] { io::decode_mlp(bytes); }, ErrorKind::kParse).find("checksum") != std::string::npos);
  // FNV-1a reference values
  CHECK(io::fnv1a64(nullptr, 0) == 0xcbf29ce484222325ULL);
  const std::uint8_t a = 'a';
  CHECK(io::fnv1a64(&a, 1) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("IDX ingestion") {
  TempDir dir;
  std::vector<std::uint8_t> b{0, 0, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
  for (std::uint8_t v : {0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6}) b.push_back(v);
  io::write_file_atomic(dir / "x.idx", b);
  const io::IdxImages img = io::read_idx(dir / "x.idx");
  CHECK(img.count == 2);
  CHECK(img.rows == 2);
  CHECK(img.cols == 3);
  const MaskShape m = io::idx_mask(img, 0, 3, 2);
  CHECK(m.weight == std::vector<double>{0.0, 1.0, 0.2, 0.4, 0.6, 0.8});
  const MaskShape up = io::idx_mask(img, 0, 6, 4);
  CHECK(up.weight[0] == 0.0);
  CHECK(up.weight[2] == 1.0);
  CHECK(up.weight[6 * 3 + 5] == 0.8);
  b[3] = 0x02;
  io::write_file_atomic(dir / "y.idx", b);
  message_of([&] { io::read_idx(dir / "y.idx"); }, ErrorKind::kParse);
  b[3] = 0x03;
  b.pop_back();
  io::write_file_atomic(dir / "z.idx", b);
  message_of([&] { io::read_idx(dir / "z.idx"); }, ErrorKind::kParse);
  message_of([&] { io::idx_mask(img, 2, 3, 2); }, ErrorKind::kInvalidArgument);
}

TEST_CASE("phantom JSON parsing") {
  const io::PhantomFile pf = io::read_phantom(fs::path(FLIM_FIXTURES_DIR) / "two_region.json");
  CHECK(pf.spec.width == 16);
  CHECK(pf.spec.regions.size() == 2);
  CHECK(pf.grid.n_bins == 256);
  CHECK_FALSE(pf.irf.is_dirac());
  CHECK(std::holds_alternative<RectShape>(pf.spec.regions[0].shape));
  CHECK(std::holds_alternative<DiskShape>(pf.spec.regions[1].shape));
  CHECK(pf.spec.regions[1].mean_photons == 5000);

  auto err = [](const char* text) {
    return message_of([&] { io::parse_phantom(io::Json::parse(text)); }, ErrorKind::kParse);
  };
  CHECK(err(R"({"height": 4, "regions": []})").find("/width") != std::string::npos);
  CHECK(err(R"({"width": 4, "height": 4, "regions": [{"photons": 10, "shape": {"type": "rect", "x0": 0, "y0": 0,
            "x1": 2, "y1": 2}}]})")
            .find("/regions/0/components") != std::string::npos);
  CHECK(err(R"({"width": 4, "height": 4, "regions": [{"photons": 10, "components": [{"amplitude": 1,
            "lifetime": "x"}], "shape": {"type": "rect", "x0": 0, "y0": 0, "x1": 2, "y1": 2}}]})")
            .find("/regions/0/components/0/lifetime") != std::string::npos);
  CHECK(err(R"({"width": 4, "height": 4, "regions": [{"photons": 10, "components": [{"amplitude": 1,
            "lifetime": 1}], "shape": {"type": "star"}}]})")
            .find("/regions/0/shape/type") != std::string::npos);
  CHECK(err(R"({"width": 4, "height": 4, "irf": {"type": "laser"}, "regions": []})").find("/irf/type") !=
        std::string::npos);
  CHECK(err(R"({"width": 4, "height": 4, "regions": [{"photons": -1, "components": [{"amplitude": 1,
            "lifetime": 1}], "shape": {"type": "disk", "cx": 1, "cy": 1, "radius": 1}}]})")
            .find("/regions/0/photons") != std::string::npos);
}

TEST_CASE("train config parsing") {
  const TrainConfig c = io::parse_train_config(io::Json::parse(R"({"dataset_size": 10, "epochs": 2, "seed": 9, "final_learning_rate": 0.002})"));
  CHECK(c.dataset_size == 10);
  CHECK(c.epochs == 2);
  CHECK(c.seed == 9);
  CHECK(c.final_learning_rate == 0.002);
  CHECK(c.hidden1 == TrainConfig{}.hidden1);
  CHECK(message_of([] { io::parse_train_config(io::Json::parse(R"({"epochs": "many"})")); }, ErrorKind::kParse)
            .find("/epochs") != std::string::npos);
}

TEST_CASE("manifest digests") {
  TempDir dir;
  io::write_file_atomic(dir / "in.txt", std::string("abc"));
  io::write_file_atomic(dir / "out.txt", std::string(""));
  CHECK(io::sha256_file(dir / "in.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(io::sha256_file(dir / "out.txt") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  io::RunManifest m;
  m.command = "test";
  m.parameters["k"] = 3;
  m.seeds["seed"] = 7;
  m.inputs = {dir / "in.txt"};
  m.outputs = {dir / "out.txt"};
  m.timings_s["total"] = 0.5;
  io::write_manifest(m, dir / "run.manifest.json");
  const io::Json j = io::read_json(dir / "run.manifest.json");
  CHECK(j["command"] == "test");
  CHECK(j.dump().find("ba7816bf8f01cfea") != std::string::npos);
  CHECK(j.dump().find("\"seed\":7") != std::string::npos);
  m.inputs = {dir / "missing.txt"};
  message_of([&] { io::write_manifest(m, dir / "bad.json"); }, ErrorKind::kIo);
}

TEST_CASE("atomic writes leave no temporary files") {
  TempDir dir;
  io::write_file_atomic(dir / "a.bin", std::vector<std::uint8_t>{1, 2, 3});
  io::write_file_atomic(dir / "a.bin", std::vector<std::uint8_t>{4, 5});
  CHECK(io::read_file(dir / "a.bin") == std::vector<std::uint8_t>{4, 5});
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir.path)) files += e.is_regular_file();
  CHECK(files == 1);
  message_of([&] { io::write_file_atomic(dir / "no" / "such" / "dir.bin", std::string("x")); }, ErrorKind::kIo);
}
