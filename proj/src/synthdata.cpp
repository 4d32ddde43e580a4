#include "claver/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "claver/numerics/rng.hpp"

namespace claver {

const std::vector<MotionClass>& motion_classes() {
  static const std::vector<MotionClass> classes{
      {"move_left", "moving left", 0, -1, "move_right"},
      {"move_right", "moving right", 0, 1, "move_left"},
      {"move_up", "moving up", -1, 0, "move_down"},
      {"move_down", "moving down", 1, 0, "move_up"},
  };
  return classes;
}

const MotionClass& motion_class(std::string_view name) {
  for (const auto& c : motion_classes())
    if (c.name == name) return c;
  throw std::invalid_argument("unknown class " + std::string(name));
}

void DatasetConfig::validate() const {
  if (classes.empty()) throw std::invalid_argument("dataset: no classes");
  for (const auto& name : classes) {
    const auto& c = motion_class(name);
    if (std::find(classes.begin(), classes.end(), c.partner) == classes.end())
      throw std::invalid_argument("dataset: class " + name + " has no reversal partner in the set");
  }
  if (train_per_class == 0 || val_per_class == 0) throw std::invalid_argument("dataset: counts must be at least 1");
  if (frames == 0 || channels == 0) throw std::invalid_argument("dataset: zero geometry");
  if (sprite == 0 || sprite > height || sprite > width) throw std::invalid_argument("dataset: sprite larger than frame");
  if (!(noise >= 0.0)) throw std::invalid_argument("dataset: negative noise");
}

nlohmann::json to_json(const DatasetConfig& cfg) {
  return {{"classes", cfg.classes}, {"train_per_class", cfg.train_per_class},
          {"val_per_class", cfg.val_per_class}, {"frames", cfg.frames},
          {"height", cfg.height}, {"width", cfg.width},
          {"channels", cfg.channels}, {"sprite", cfg.sprite},
          {"noise", cfg.noise}, {"seed", cfg.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig cfg;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("classes", cfg.classes);
  get("train_per_class", cfg.train_per_class);
  get("val_per_class", cfg.val_per_class);
  get("frames", cfg.frames);
  get("height", cfg.height);
  get("width", cfg.width);
  get("channels", cfg.channels);
  get("sprite", cfg.sprite);
  get("noise", cfg.noise);
  get("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

std::uint64_t clip_seed(Split split, std::size_t index) {
  return (static_cast<std::uint64_t>(split) << 32) | static_cast<std::uint64_t>(index);
}

VideoClip render_motion(const DatasetConfig& cfg, const MotionClass& motion, std::size_t y0, std::size_t x0) {
  VideoClip clip;
  clip.frames = cfg.frames;
  clip.height = cfg.height;
  clip.width = cfg.width;
  clip.channels = cfg.channels;
  clip.pixels.assign(cfg.frames * cfg.height * cfg.width * cfg.channels, 0.0f);
  const auto wrap = [](long v, std::size_t n) {
    const long m = static_cast<long>(n);
    return static_cast<std::size_t>(((v % m) + m) % m);
  };
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const long ty = static_cast<long>(y0) + motion.dy * static_cast<long>(t);
    const long tx = static_cast<long>(x0) + motion.dx * static_cast<long>(t);
    for (std::size_t sy = 0; sy < cfg.sprite; ++sy)
      for (std::size_t sx = 0; sx < cfg.sprite; ++sx)
        for (std::size_t c = 0; c < cfg.channels; ++c)
          clip.at(t, wrap(ty + static_cast<long>(sy), cfg.height), wrap(tx + static_cast<long>(sx), cfg.width), c) =
              1.0f;
  }
  return clip;
}

VideoClip generate_clip(const DatasetConfig& cfg, Split split, std::size_t index) {
  const std::size_t k = index % cfg.classes.size();
  const std::uint64_t seed = clip_seed(split, index);
  SeededRng rng = SeededRng(cfg.seed).fork(seed);
  const std::size_t y0 = rng.below(cfg.height), x0 = rng.below(cfg.width);
  VideoClip clip = render_motion(cfg, motion_class(cfg.classes[k]), y0, x0);
  if (cfg.noise > 0.0)
    for (float& v : clip.pixels)
      v = static_cast<float>(std::clamp(static_cast<double>(v) + cfg.noise * (2.0 * rng.uniform() - 1.0), 0.0, 1.0));
  clip.label = static_cast<std::uint32_t>(k);
  clip.seed = seed;
  return clip;
}

Dataset generate(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset data;
  data.config = cfg;
  const std::size_t k = cfg.classes.size();
  for (std::size_t i = 0; i < cfg.train_per_class * k; ++i) data.train.push_back(generate_clip(cfg, Split::Train, i));
  for (std::size_t i = 0; i < cfg.val_per_class * k; ++i) data.val.push_back(generate_clip(cfg, Split::Val, i));
  return data;
}

// Captions

namespace {

struct ManualText {
  std::string_view class_name;
  Aspect aspect;
  std::string_view text;
};

constexpr ManualText kManual[] = {
    {"move_left", Aspect::Decomposition, "A small bright square shifts one step to the left in every frame."},
    {"move_left", Aspect::Synonym, "Sliding leftward, drifting west, travelling right to left."},
    {"move_right", Aspect::Decomposition, "A small bright square shifts one step to the right in every frame."},
    {"move_right", Aspect::Synonym, "Sliding rightward, drifting east, travelling left to right."},
    {"move_up", Aspect::Decomposition, "A small bright square rises one step toward the top in every frame."},
    {"move_up", Aspect::Synonym, "Rising, climbing, drifting upward, travelling bottom to top."},
    {"move_down", Aspect::Decomposition, "A small bright square drops one step toward the bottom in every frame."},
    {"move_down", Aspect::Synonym, "Falling, sinking, drifting downward, travelling top to bottom."},
};

}  // namespace

DescriptionStore motion_descriptions(const std::vector<std::string>& classes) {
  DescriptionStore store;
  for (const auto& name : classes) {
    const auto& c = motion_class(name);
    store.add(make_description(name, DescriptionKind::Label, std::string(c.label), DescriptionSource::Manual));
    for (const auto& m : kManual)
      if (m.class_name == name)
        store.add(make_description(name, DescriptionKind::Interpretive, std::string(m.text), DescriptionSource::Manual,
                                   m.aspect));
  }
  return store;
}

std::vector<TextDescription> captions_for(std::string_view class_name, const DescriptionStore& store, std::size_t m,
                                          const std::vector<std::string>& templates) {
  return assemble_description_set(store, {std::string(class_name)}, m, templates).front();
}

// CLVD container

namespace {

constexpr char kMagic[4] = {'C', 'L', 'V', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DatasetFormatError("dataset file truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_clip(std::ostream& out, const VideoClip& clip) {
  put_u32(out, clip.label);
  put_u32(out, static_cast<std::uint32_t>(clip.frames));
  put_u32(out, static_cast<std::uint32_t>(clip.height));
  put_u32(out, static_cast<std::uint32_t>(clip.width));
  put_u32(out, static_cast<std::uint32_t>(clip.channels));
  for (float v : clip.pixels) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

VideoClip read_clip(std::istream& in, const DatasetConfig& cfg, Split split, std::size_t index) {
  VideoClip clip;
  clip.label = get_u32(in);
  clip.frames = get_u32(in);
  clip.height = get_u32(in);
  clip.width = get_u32(in);
  clip.channels = get_u32(in);
  if (clip.frames != cfg.frames || clip.height != cfg.height || clip.width != cfg.width ||
      clip.channels != cfg.channels) {
    throw DatasetFormatError("clip geometry disagrees with the dataset header");
  }
  if (clip.label >= cfg.classes.size()) throw DatasetFormatError("clip label out of range");
  clip.pixels.resize(clip.frames * clip.height * clip.width * clip.channels);
  for (float& v : clip.pixels) v = std::bit_cast<float>(get_u32(in));
  clip.seed = clip_seed(split, index);
  return clip;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  nlohmann::json header = to_json(data.config);
  header["train_count"] = data.train.size();
  header["val_count"] = data.val.size();
  const std::string text = header.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& clip : data.train) write_clip(out, clip);
  for (const auto& clip : data.val) write_clip(out, clip);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw DatasetFormatError("not a dataset (bad magic)");
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) throw DatasetFormatError("unsupported dataset version " + std::to_string(version));
  const std::uint32_t len = get_u32(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw DatasetFormatError("dataset file truncated");
  Dataset data;
  std::size_t train_count = 0, val_count = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    data.config = dataset_config_from_json(header);
    train_count = header.at("train_count").get<std::size_t>();
    val_count = header.at("val_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError(std::string("bad dataset header: ") + e.what());
  }
  for (std::size_t i = 0; i < train_count; ++i) data.train.push_back(read_clip(in, data.config, Split::Train, i));
  for (std::size_t i = 0; i < val_count; ++i) data.val.push_back(read_clip(in, data.config, Split::Val, i));
  if (in.peek() != std::char_traits<char>::eof()) throw DatasetFormatError("trailing bytes after the last clip");
  return data;
}

}  // namespace claver
