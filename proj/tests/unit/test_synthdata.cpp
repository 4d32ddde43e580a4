#include <filesystem>
#include <fstream>
#include <set>

#include "claver/synthdata.hpp"
#include "doctest.h"

using namespace claver;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.train_per_class = 1;
  cfg.val_per_class = 1;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("claver_test_" + name);
  std::filesystem::remove(p);
  return p;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("sprite moves one column per frame") {
  DatasetConfig cfg;
  cfg.sprite = 2;
  cfg.noise = 0.0;
  const auto clip = render_motion(cfg, motion_class("move_right"), 0, 0);
  for (std::size_t t = 0; t < cfg.frames; ++t)
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const bool on = y < 2 && (x == t || x == t + 1);
        CHECK(clip.at(t, y, x, 0) == (on ? 1.0f : 0.0f));
      }
}

TEST_CASE("sprite wraps around the frame") {
  DatasetConfig cfg;
  cfg.noise = 0.0;
  const auto clip = render_motion(cfg, motion_class("move_up"), 1, 14);
  // rows 1..4 at t=0, rows 15,0,1,2 at t=2; columns 14,15,0,1
  CHECK(clip.at(2, 15, 14, 0) == 1.0f);
  CHECK(clip.at(2, 2, 1, 0) == 1.0f);
  CHECK(clip.at(2, 3, 1, 0) == 0.0f);
  float total = 0;
  for (float v : clip.pixels) total += v;
  CHECK(total == 16.0f * 8.0f);
}

TEST_CASE("frame reversal turns a class into its partner") {
  DatasetConfig cfg;
  cfg.noise = 0.0;
  for (const auto& c : motion_classes()) {
    const auto& partner = motion_class(c.partner);
    for (std::size_t y0 = 0; y0 < cfg.height; ++y0)
      for (std::size_t x0 = 0; x0 < cfg.width; ++x0) {
        const auto clip = render_motion(cfg, c, y0, x0);
        // the reversed clip starts where the original ended
        const long last = static_cast<long>(cfg.frames) - 1;
        const auto wrap = [](long v, std::size_t n) { return static_cast<std::size_t>((v % long(n) + long(n)) % long(n)); };
        const auto expected =
            render_motion(cfg, partner, wrap(long(y0) + c.dy * last, cfg.height), wrap(long(x0) + c.dx * last, cfg.width));
        REQUIRE(reversed(clip).pixels == expected.pixels);
      }
  }
}

TEST_CASE("generation is deterministic and bounded") {
  DatasetConfig cfg;
  cfg.train_per_class = 5;
  cfg.val_per_class = 3;
  cfg.noise = 0.3;
  const auto a = generate(cfg), b = generate(cfg);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  REQUIRE(a.train.size() == 20);
  REQUIRE(a.val.size() == 12);

  std::set<std::uint64_t> seeds;
  for (const auto& c : a.train) seeds.insert(c.seed);
  for (const auto& c : a.val) seeds.insert(c.seed);
  CHECK(seeds.size() == 32);

  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].label == i % 4);
  for (const auto& clip : a.train)
    for (float v : clip.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }

  cfg.seed = 1;
  CHECK(generate(cfg).train != a.train);
}

TEST_CASE("config validation") {
  DatasetConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.sprite = 17;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.classes = {"move_left", "move_up", "move_down"};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.classes = {"spin"};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.val_per_class = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const auto j = to_json(cfg);
  const auto back = dataset_config_from_json(j);
  CHECK(to_json(back) == j);
}

TEST_CASE("captions") {
  const auto store = motion_descriptions(DatasetConfig{}.classes);
  auto c = captions_for("move_left", store, 1);
  REQUIRE(c.size() == 1);
  CHECK(c[0].text == "moving left");
  CHECK(c[0].kind == DescriptionKind::Label);

  c = captions_for("move_left", store, 2);
  REQUIRE(c.size() == 2);
  CHECK(c[1].text == "a video of a person moving left.");

  c = captions_for("move_down", store, 8);
  CHECK(c.size() == 1 + default_templates().size() + 2);
  CHECK(c.back().kind == DescriptionKind::Interpretive);

  CHECK_THROWS(captions_for("move_sideways", store, 2));
}

TEST_CASE("dataset file round-trip") {
  auto cfg = small_config();
  const auto data = generate(cfg);
  REQUIRE(data.train.size() + data.val.size() == 8);
  const auto path = temp_path("data.clvd");
  save_dataset(path, data);
  const auto back = load_dataset(path);
  CHECK(back.train == data.train);
  CHECK(back.val == data.val);
  CHECK(to_json(back.config) == to_json(data.config));

  const std::string bytes = read_bytes(path);
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write_bytes(path, b);
    CHECK_THROWS_AS(load_dataset(path), DatasetFormatError);
  }
  SUBCASE("newer version") {
    auto b = bytes;
    b[4] = 2;
    write_bytes(path, b);
    try {
      load_dataset(path);
      FAIL("expected an error");
    } catch (const DatasetFormatError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("truncated") {
    write_bytes(path, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_dataset(path), DatasetFormatError);
  }
  SUBCASE("trailing bytes") {
    write_bytes(path, bytes + "x");
    CHECK_THROWS_AS(load_dataset(path), DatasetFormatError);
  }
  std::filesystem::remove(path);
}
