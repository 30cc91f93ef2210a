#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "promptforge/core.hpp"

namespace testutil {

inline promptforge::Image random_image(int h, int w, promptforge::RngStream& rng, double lo = 0.0, double hi = 1.0) {
  promptforge::Image img(h, w);
  for (float& v : img.data) v = float(rng.uniform(lo, hi));
  return img;
}

inline double max_abs_diff(const promptforge::Image& a, const promptforge::Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("promptforge-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
