#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rehar/image.hpp"

namespace rehar {

struct VideoClip {
  std::vector<RgbImage> frames;
  double fps = 6.0;
  std::size_t label = 0;
  std::string id;
};

// Throws DataError when the clip has fewer than 2 frames or mixed frame sizes.
void validate_clip(const VideoClip& clip);

}  // namespace rehar
