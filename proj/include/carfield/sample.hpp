#pragma once

#include <string>

#include "carfield/geometry.hpp"
#include "carfield/image.hpp"

namespace carfield {

// One supervised patch held in memory: the training contract.
struct TrainingSample {
  Image patch;  // RGB in [0,1]
  Image mask;   // single channel, {0,1}
  Intrinsics k;
  Mat4 canonical_from_camera = Mat4::Identity();
  std::string instance;  // groups views of the same car; empty = unlabeled
  int view_id = 0;
};

}  // namespace carfield
