#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace claver {

/// Frame stack in [0,1], stored t, y, x, c with c fastest.
struct VideoClip {
  std::size_t frames = 0, height = 0, width = 0, channels = 1;
  std::vector<float> pixels;
  std::uint32_t label = 0;
  std::uint64_t seed = 0;

  std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const {
    return ((t * height + y) * width + x) * channels + c;
  }
  float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[index(t, y, x, c)]; }
  float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[index(t, y, x, c)]; }
  std::size_t frame_size() const { return height * width * channels; }

  bool operator==(const VideoClip&) const = default;
};

/// Same clip with frame order reversed.
inline VideoClip reversed(const VideoClip& clip) {
  VideoClip out = clip;
  const std::size_t fs = clip.frame_size();
  for (std::size_t t = 0; t < clip.frames; ++t)
    for (std::size_t k = 0; k < fs; ++k) out.pixels[t * fs + k] = clip.pixels[(clip.frames - 1 - t) * fs + k];
  return out;
}

}  // namespace claver
