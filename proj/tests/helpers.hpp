#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "langsg/grad_check.hpp"
#include "langsg/nn.hpp"
#include "langsg/rng.hpp"
#include "langsg/scene.hpp"

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("langsg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path data_dir() { return std::filesystem::path(LANGSG_TEST_DATA_DIR); }

// Scene with n box-shaped random instances, each with `per` points, plus a
// few background points. Labels cycle through `labels`.
inline langsg::Scene random_scene(int n, int per, langsg::Rng& rng, const std::vector<std::string>& labels) {
  langsg::Scene s;
  s.scene_id = "random";
  for (int k = 0; k < 5; ++k) {
    s.points.push_back({static_cast<float>(rng.uniform(0, 3)), static_cast<float>(rng.uniform(0, 3)), 0.0f, 0.5f,
                        0.5f, 0.5f});
  }
  for (int i = 0; i < n; ++i) {
    langsg::Instance inst;
    inst.id = i;
    inst.label = labels[static_cast<std::size_t>(i) % labels.size()];
    const float cx = static_cast<float>(rng.uniform(0, 3)), cy = static_cast<float>(rng.uniform(0, 3));
    const float r = static_cast<float>(rng.uniform01()), g = static_cast<float>(rng.uniform01()),
                b = static_cast<float>(rng.uniform01());
    for (int k = 0; k < per; ++k) {
      inst.point_indices.push_back(static_cast<std::uint32_t>(s.points.size()));
      s.points.push_back({cx + static_cast<float>(rng.uniform(-0.3, 0.3)), cy + static_cast<float>(rng.uniform(-0.3, 0.3)),
                          static_cast<float>(rng.uniform(0, 0.8)), r, g, b});
    }
    s.instances.push_back(std::move(inst));
  }
  langsg::canonicalize(s);
  return s;
}

// Gradient-check entries for every parameter of a double model.
template <typename Model>
std::vector<langsg::GradCheckEntry> param_entries(Model& model) {
  std::vector<langsg::GradCheckEntry> out;
  model.for_each_param([&](langsg::Param<double>& p) {
    out.push_back({p.name, std::span<double>(p.value.data(), static_cast<std::size_t>(p.value.size())),
                   std::span<const double>(p.grad.data(), static_cast<std::size_t>(p.grad.size()))});
  });
  return out;
}

}  // namespace testutil
