#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "claver/prompts.hpp"
#include "claver/video.hpp"
#include "json.hpp"

namespace claver {

/// Known classes and their per-frame displacement. Each has a reversal partner.
struct MotionClass {
  std::string_view name;   // move_left
  std::string_view label;  // moving left
  int dy, dx;
  std::string_view partner;
};

const std::vector<MotionClass>& motion_classes();
/// Throws std::invalid_argument for an unknown class name.
const MotionClass& motion_class(std::string_view name);

struct DatasetConfig {
  std::vector<std::string> classes{"move_left", "move_right", "move_up", "move_down"};
  std::size_t train_per_class = 200;
  std::size_t val_per_class = 50;
  std::size_t frames = 8, height = 16, width = 16, channels = 1;
  std::size_t sprite = 4;
  double noise = 0.1;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument: unknown class, missing partner, empty
  /// counts, or a sprite that does not fit.
  void validate() const;
};

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct Dataset {
  DatasetConfig config;
  std::vector<VideoClip> train, val;
};

enum class Split : std::uint32_t { Train = 0, Val = 1 };

/// Seed of clip `index` in `split`; train and val use disjoint ranges.
std::uint64_t clip_seed(Split split, std::size_t index);

/// Sprite of side `cfg.sprite` starting with its top-left at (y0, x0) and
/// moving one pixel per frame with wrap-around. No noise.
VideoClip render_motion(const DatasetConfig& cfg, const MotionClass& motion, std::size_t y0, std::size_t x0);

/// Clip `index` of a split: class index % K, seeded start, additive uniform
/// noise in [-noise, noise], clamped to [0,1].
VideoClip generate_clip(const DatasetConfig& cfg, Split split, std::size_t index);

Dataset generate(const DatasetConfig& cfg);

struct DatasetFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Label entry ("moving left") plus a few hand-written interpretive entries per class.
DescriptionStore motion_descriptions(const std::vector<std::string>& classes);

/// Up to `m` descriptions of a class, via assemble_description_set.
std::vector<TextDescription> captions_for(std::string_view class_name, const DescriptionStore& store, std::size_t m,
                                          const std::vector<std::string>& templates = default_templates());

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace claver
