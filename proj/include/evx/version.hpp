#pragma once

#include <string>

namespace evx {

std::string version();

// Library versions recorded in run.json.
std::string opencv_version();

}  // namespace evx
