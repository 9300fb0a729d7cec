#include "evx/version.hpp"

#include <opencv2/core/version.hpp>

namespace evx {

std::string version() { return EVX_VERSION; }

std::string opencv_version() { return CV_VERSION; }

}  // namespace evx
