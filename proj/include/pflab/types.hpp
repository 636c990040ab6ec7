#pragma once

#include <span>
#include <vector>

namespace pflab {

using Vec = std::vector<double>;
using VecView = std::span<const double>;

}  // namespace pflab
